#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "gbx/rng.hpp"
#include "gbx/tensor.hpp"

namespace testutil {

inline gbx::Tensor random_tensor(std::vector<std::size_t> shape, gbx::Rng& g,
                                 double lo = -1.0, double hi = 1.0) {
    gbx::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = gbx::uniform_in(g, lo, hi);
    return t;
}

/// Central finite difference of a scalar function at every coordinate of x.
inline gbx::Tensor central_diff(const std::function<double(const gbx::Tensor&)>& f,
                                const gbx::Tensor& x, double eps = 1e-6) {
    gbx::Tensor g(x.shape());
    gbx::Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        probe[i] = v + eps;
        const double up = f(probe);
        probe[i] = v - eps;
        const double down = f(probe);
        probe[i] = v;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

inline double max_abs_diff(const gbx::Tensor& a, const gbx::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(const gbx::Tensor& a, const gbx::Tensor& b, double floor = 1e-12) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]) /
                            std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return m;
}

/// Fresh scratch directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string sub(const std::string& name) const { return (path_ / name).string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace testutil
