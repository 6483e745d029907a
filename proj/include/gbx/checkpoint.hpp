#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbx/network.hpp"

namespace gbx {

// ---------------------------------------------------------------------------
// Checkpoint container, format "GBX1":
//   GBX1\n
//   <header length in bytes, ASCII decimal>\n
//   <JSON header>\n
//   <raw little-endian float64 blocks, in manifest order>
// The header carries the architecture, seed, epoch, template-bank parameters,
// per-filter assignments, and the block manifest. Momentum buffers are not
// stored; a checkpoint captures inference state.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

inline double read_f64_le(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::pool: return "pool";
        case LayerKind::interp_conv: return "interp_conv";
        case LayerKind::mask: return "mask";
        case LayerKind::fc: return "fc";
    }
    return "?";
}

inline LayerKind kind_from_name(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "relu") return LayerKind::relu;
    if (s == "pool") return LayerKind::pool;
    if (s == "interp_conv") return LayerKind::interp_conv;
    if (s == "mask") return LayerKind::mask;
    if (s == "fc") return LayerKind::fc;
    throw std::runtime_error("unknown layer kind in checkpoint: " + s);
}

}  // namespace detail

inline nlohmann::ordered_json arch_to_json(const ArchitectureSpec& arch) {
    nlohmann::ordered_json j;
    j["input"] = {arch.input_channels, arch.input_h, arch.input_w};
    j["num_categories"] = arch.num_categories;
    j["mask_enabled"] = arch.mask_enabled;
    j["tau"] = arch.tau;
    j["alpha"] = arch.alpha;
    j["beta"] = arch.beta;
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const LayerSpec& l : arch.layers) {
        nlohmann::ordered_json e;
        e["kind"] = detail::kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::interp_conv:
                e["out"] = l.out_channels;
                e["k"] = l.ksize;
                e["stride"] = l.stride;
                e["pad"] = l.pad;
                break;
            case LayerKind::pool:
                e["window"] = l.window;
                e["stride"] = l.stride;
                break;
            case LayerKind::fc:
                e["out"] = l.out_dim;
                break;
            default:
                break;
        }
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    return j;
}

inline ArchitectureSpec arch_from_json(const nlohmann::json& j) {
    ArchitectureSpec arch;
    arch.input_channels = j.at("input").at(0).get<std::size_t>();
    arch.input_h = j.at("input").at(1).get<std::size_t>();
    arch.input_w = j.at("input").at(2).get<std::size_t>();
    arch.num_categories = j.at("num_categories").get<std::size_t>();
    arch.mask_enabled = j.at("mask_enabled").get<bool>();
    arch.tau = j.at("tau").get<double>();
    arch.alpha = j.at("alpha").get<double>();
    arch.beta = j.at("beta").get<double>();
    for (const auto& e : j.at("layers")) {
        LayerSpec l;
        l.kind = detail::kind_from_name(e.at("kind").get<std::string>());
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::interp_conv:
                l.out_channels = e.at("out").get<std::size_t>();
                l.ksize = e.at("k").get<std::size_t>();
                l.stride = e.at("stride").get<std::size_t>();
                l.pad = e.at("pad").get<std::size_t>();
                break;
            case LayerKind::pool:
                l.window = e.at("window").get<std::size_t>();
                l.stride = e.at("stride").get<std::size_t>();
                break;
            case LayerKind::fc:
                l.out_dim = e.at("out").get<std::size_t>();
                break;
            default:
                break;
        }
        arch.layers.push_back(l);
    }
    return arch;
}

inline void save_checkpoint(const std::string& path, const Net& net, std::uint64_t seed,
                            std::size_t epoch, TaskLossKind loss) {
    nlohmann::ordered_json hdr;
    hdr["format"] = "GBX1";
    hdr["seed"] = seed;
    hdr["epoch"] = epoch;
    hdr["loss"] = loss == TaskLossKind::softmax_multiclass ? "softmax" : "logistic";
    hdr["arch"] = arch_to_json(net.arch);

    nlohmann::ordered_json banks = nlohmann::ordered_json::array();
    for (const TemplateBank& b : net.banks) {
        nlohmann::ordered_json e;
        e["n"] = b.n;
        e["tau"] = b.tau;
        e["alpha"] = b.alpha;
        e["beta"] = b.beta;
        banks.push_back(std::move(e));
    }
    hdr["banks"] = std::move(banks);

    nlohmann::ordered_json states = nlohmann::ordered_json::array();
    for (const auto& layer_states : net.states) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (const FilterState& st : layer_states) {
            nlohmann::ordered_json e;
            e["target_category"] = st.target_category;
            e["update_count"] = st.update_count;
            row.push_back(std::move(e));
        }
        states.push_back(std::move(row));
    }
    hdr["states"] = std::move(states);

    struct Block {
        std::string name;
        const double* data;
        std::vector<std::size_t> shape;
        std::size_t count;
    };
    std::vector<Block> blocks;
    for (std::size_t li = 0; li < net.layers.size(); ++li)
        if (net.layers[li].has_params) {
            const Layer& l = net.layers[li];
            blocks.push_back({"layer" + std::to_string(li) + ".w", l.w.data(), l.w.shape(), l.w.size()});
            blocks.push_back({"layer" + std::to_string(li) + ".b", l.b.data(), l.b.shape(), l.b.size()});
        }
    std::vector<std::vector<double>> state_payloads;  // keeps padded copies alive
    for (std::size_t ii = 0; ii < net.states.size(); ++ii) {
        const std::size_t m = net.banks[ii].num_pos() + 1;
        for (std::size_t f = 0; f < net.states[ii].size(); ++f) {
            const FilterState& st = net.states[ii][f];
            state_payloads.push_back(st.log_z.empty() ? std::vector<double>(m, 0.0) : st.log_z);
            state_payloads.push_back({st.log_px});
        }
    }
    std::size_t payload = 0;
    for (std::size_t ii = 0; ii < net.states.size(); ++ii) {
        const std::size_t m = net.banks[ii].num_pos() + 1;
        for (std::size_t f = 0; f < net.states[ii].size(); ++f) {
            const std::string base = "interp" + std::to_string(ii) + ".f" + std::to_string(f);
            blocks.push_back({base + ".log_z", state_payloads[payload].data(), {m}, m});
            ++payload;
            blocks.push_back({base + ".log_px", state_payloads[payload].data(), {1}, 1});
            ++payload;
        }
    }

    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    for (const Block& b : blocks) {
        nlohmann::ordered_json e;
        e["name"] = b.name;
        e["shape"] = b.shape;
        manifest.push_back(std::move(e));
    }
    hdr["manifest"] = std::move(manifest);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const std::string text = hdr.dump();
    out << "GBX1\n" << text.size() << "\n" << text << "\n";
    for (const Block& b : blocks)
        for (std::size_t i = 0; i < b.count; ++i) detail::write_f64_le(out, b.data[i]);
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct LoadedCheckpoint {
    Net net;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    TaskLossKind loss = TaskLossKind::softmax_multiclass;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "GBX1") throw std::runtime_error("not a GBX1 checkpoint: " + path);
    std::string len_line;
    std::getline(in, len_line);
    const std::size_t hdr_len = static_cast<std::size_t>(std::stoull(len_line));
    std::string text(hdr_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(hdr_len));
    if (!in || in.get() != '\n') throw std::runtime_error("truncated checkpoint header: " + path);
    const nlohmann::json hdr = nlohmann::json::parse(text);
    if (hdr.at("format").get<std::string>() != "GBX1")
        throw std::runtime_error("bad checkpoint format field: " + path);

    LoadedCheckpoint ck;
    ck.seed = hdr.at("seed").get<std::uint64_t>();
    ck.epoch = hdr.at("epoch").get<std::size_t>();
    ck.loss = hdr.at("loss").get<std::string>() == "softmax" ? TaskLossKind::softmax_multiclass
                                                             : TaskLossKind::logistic_binary;
    ck.net = build_net(arch_from_json(hdr.at("arch")), ck.seed);

    const auto& jstates = hdr.at("states");
    require(jstates.size() == ck.net.states.size(), "checkpoint states do not match architecture");
    for (std::size_t ii = 0; ii < ck.net.states.size(); ++ii) {
        require(jstates[ii].size() == ck.net.states[ii].size(),
                "checkpoint filter count mismatch at interpretable layer " + std::to_string(ii));
        for (std::size_t f = 0; f < ck.net.states[ii].size(); ++f) {
            ck.net.states[ii][f].target_category = jstates[ii][f].at("target_category").get<int>();
            ck.net.states[ii][f].update_count = jstates[ii][f].at("update_count").get<std::size_t>();
        }
    }

    for (const auto& e : hdr.at("manifest")) {
        const std::string name = e.at("name").get<std::string>();
        std::size_t count = 1;
        for (const auto& d : e.at("shape")) count *= d.get<std::size_t>();
        std::vector<double> vals(count);
        for (std::size_t i = 0; i < count; ++i) vals[i] = detail::read_f64_le(in);
        if (!in) throw std::runtime_error("truncated checkpoint block " + name + " in " + path);

        bool placed = false;
        for (std::size_t li = 0; li < ck.net.layers.size() && !placed; ++li) {
            Layer& l = ck.net.layers[li];
            if (!l.has_params) continue;
            const std::string base = "layer" + std::to_string(li);
            if (name == base + ".w") {
                require(count == l.w.size(), "checkpoint block size mismatch: " + name);
                for (std::size_t i = 0; i < count; ++i) l.w[i] = vals[i];
                placed = true;
            } else if (name == base + ".b") {
                require(count == l.b.size(), "checkpoint block size mismatch: " + name);
                for (std::size_t i = 0; i < count; ++i) l.b[i] = vals[i];
                placed = true;
            }
        }
        for (std::size_t ii = 0; ii < ck.net.states.size() && !placed; ++ii)
            for (std::size_t f = 0; f < ck.net.states[ii].size() && !placed; ++f) {
                const std::string base = "interp" + std::to_string(ii) + ".f" + std::to_string(f);
                if (name == base + ".log_z") {
                    ck.net.states[ii][f].log_z = vals;
                    placed = true;
                } else if (name == base + ".log_px") {
                    ck.net.states[ii][f].log_px = vals[0];
                    placed = true;
                }
            }
        if (!placed) throw std::runtime_error("unknown checkpoint block " + name + " in " + path);
    }
    return ck;
}

}  // namespace gbx
