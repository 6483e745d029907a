#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "gbx/archive.hpp"
#include "gbx/checkpoint.hpp"
#include "gbx/filter_objective.hpp"
#include "gbx/network.hpp"
#include "gbx/report.hpp"
#include "gbx/scene_gen.hpp"
#include "gbx/viz.hpp"

namespace {

using namespace gbx;

std::size_t env_threads() {
    const char* v = std::getenv("GBX_THREADS");
    if (!v) return 1;
    char* end = nullptr;
    const unsigned long n = std::strtoul(v, &end, 10);
    return (end && *end == '\0' && n >= 1) ? static_cast<std::size_t>(n) : 1;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

void write_effective_config(const std::string& dir, const KeyValues& kv) {
    const std::string path = dir + "/effective_config.txt";
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot write " + path);
    for (const auto& [k, v] : kv) os << k << " " << v << "\n";
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out;
    GeneratorConfig cfg;
    std::size_t count = 100;
};

int run_gen(const GenArgs& a) {
    std::vector<SyntheticScene> scenes = generate(a.cfg, a.count);
    if (a.cfg.negatives > 0) {
        std::vector<SyntheticScene> negs = generate_negatives(a.cfg, a.cfg.negatives);
        scenes.insert(scenes.end(), std::make_move_iterator(negs.begin()),
                      std::make_move_iterator(negs.end()));
    }
    std::filesystem::create_directories(a.out);
    write_archive(a.out, scenes, a.cfg.num_categories);
    write_effective_config(
        a.out, {{"command", "gen"},
                {"out", a.out},
                {"seed", std::to_string(a.cfg.seed)},
                {"count", std::to_string(a.count)},
                {"categories", std::to_string(a.cfg.num_categories)},
                {"size", std::to_string(a.cfg.image_h) + "x" + std::to_string(a.cfg.image_w)},
                {"jitter", std::to_string(a.cfg.jitter)},
                {"clutter", std::to_string(a.cfg.clutter)},
                {"noise", format_double(a.cfg.noise)},
                {"negatives", std::to_string(a.cfg.negatives)}});
    std::cout << "archive " << a.out << ": " << scenes.size() << " scenes ("
              << a.cfg.negatives << " negatives), " << a.cfg.num_categories << " categories, "
              << a.cfg.image_h << "x" << a.cfg.image_w << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data, out;
    TrainConfig cfg;
    std::string loss = "softmax";
    double tau = 0.0, alpha = 0.0, beta = 4.0;
    std::size_t filters = 16;
    bool no_filter_loss = false, no_mask = false;
};

int run_train(TrainArgs& a) {
    Archive ar = load_archive(a.data);
    std::vector<SyntheticScene> labeled;
    for (SyntheticScene& sc : ar.scenes)
        if (sc.category >= 0) labeled.push_back(std::move(sc));
    require(!labeled.empty(), "train: archive has no labeled scenes");

    ArchitectureSpec arch = default_architecture(ar.num_categories, a.filters);
    arch.input_h = ar.image_h;
    arch.input_w = ar.image_w;
    arch.mask_enabled = !a.no_mask;
    arch.tau = a.tau;
    arch.alpha = a.alpha;
    arch.beta = a.beta;

    a.cfg.loss = a.loss == "logistic" ? TaskLossKind::logistic_binary
                                      : TaskLossKind::softmax_multiclass;
    a.cfg.filter_loss_enabled = !a.no_filter_loss;
    a.cfg.threads = env_threads();

    Net net = build_net(arch, a.cfg.seed);
    std::filesystem::create_directories(a.out);
    write_effective_config(a.out, {{"command", "train"},
                                   {"data", a.data},
                                   {"out", a.out},
                                   {"epochs", std::to_string(a.cfg.epochs)},
                                   {"batch", std::to_string(a.cfg.batch)},
                                   {"lr", format_double(a.cfg.lr)},
                                   {"momentum", format_double(a.cfg.momentum)},
                                   {"lambda_k", format_double(a.cfg.lambda_k)},
                                   {"tau", format_double(a.tau)},
                                   {"alpha", format_double(a.alpha)},
                                   {"beta", format_double(a.beta)},
                                   {"seed", std::to_string(a.cfg.seed)},
                                   {"loss", a.loss},
                                   {"filters", std::to_string(a.filters)},
                                   {"filter_loss", bool_str(a.cfg.filter_loss_enabled)},
                                   {"mask", bool_str(arch.mask_enabled)},
                                   {"threads", std::to_string(a.cfg.threads)}});

    const std::string log_path = a.out + "/train_log.ndjson";
    std::ofstream log(log_path, std::ios::binary);
    require(log.good(), "cannot write " + log_path);
    const std::string ck_path = a.out + "/checkpoint.gbx";
    std::vector<EpochLog> logs =
        train(net, labeled, a.cfg, &log, [&](const EpochLog& e, Net& n) {
            save_checkpoint(ck_path, n, a.cfg.seed, e.epoch, a.cfg.loss);
        });
    std::cout << "trained " << a.cfg.epochs << " epochs on " << labeled.size()
              << " scenes; final train_acc " << format_double(logs.back().train_acc) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, out;
};

int run_eval(const EvalArgs& a) {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    Archive ar = load_archive(a.data);
    require(ar.image_h == ck.net.arch.input_h && ar.image_w == ck.net.arch.input_w,
            "eval: archive image size does not match the checkpoint architecture");
    require(ar.num_categories == ck.net.arch.num_categories,
            "eval: archive category count does not match the checkpoint architecture");
    MetricsReport rep = evaluate(ck.net, ar.scenes);
    std::filesystem::create_directories(a.out);
    write_report(a.out, rep);
    write_effective_config(a.out, {{"command", "eval"},
                                   {"checkpoint", a.checkpoint},
                                   {"data", a.data},
                                   {"out", a.out}});
    std::cout << "eval: accuracy " << format_double(rep.accuracy) << ", mean_p_f "
              << format_double(rep.mean_p_f) << ", instability "
              << format_double(rep.mean_instability) << ", purity " << format_double(rep.purity)
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyState {
    bool ok = true;

    void check(const std::string& name, bool pass, const std::string& detail = "") {
        if (pass) {
            std::cout << "ok " << name << "\n";
        } else {
            std::cout << "FAIL " << name << (detail.empty() ? "" : ": " + detail) << "\n";
            ok = false;
        }
    }
};

Tensor random_map(Rng& g, std::size_t n, double amp) {
    Tensor m({n, n});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = uniform_in(g, -amp, amp);
    return m;
}

// Mutual information of the map set against the bank with Z frozen at the
// supplied values; equals the exact loss when the frozen values are current.
double surrogate_loss(const std::vector<Tensor>& X, const TemplateBank& bank,
                      const std::vector<double>& frozen_log_z) {
    const std::size_t M = bank.num_pos() + 1;
    double loss = 0.0;
    for (const Tensor& x : X) {
        std::vector<double> lq(M), mix(M);
        for (std::size_t mu = 0; mu < M; ++mu) {
            lq[mu] = template_fitness(x, bank.at(mu)) - frozen_log_z[mu];
            mix[mu] = std::log(bank.prior(mu)) + lq[mu];
        }
        const double lpx = log_sum_exp(mix);
        for (std::size_t mu = 0; mu < M; ++mu)
            loss -= bank.prior(mu) * std::exp(lq[mu]) * (lq[mu] - lpx);
    }
    return loss;
}

int run_verify() {
    VerifyState v;
    const bool mutate = [] {
        const char* m = std::getenv("GBX_VERIFY_MUTATE");
        return m && std::string(m) == "grad_sign";
    }();

    for (std::size_t n : {std::size_t{2}, std::size_t{3}, std::size_t{6}, std::size_t{12}}) {
        const TemplateBank bank = build_templates(n, default_tau(n), default_alpha(n), 4.0);
        long double prior_sum = bank.prior_neg();  // compensated accumulation for large n
        for (std::size_t mu = 0; mu < bank.num_pos(); ++mu) prior_sum += bank.prior(mu);
        v.check("prior_normalization_n" + std::to_string(n),
                std::abs(static_cast<double>(prior_sum) - 1.0) <= 1e-15);
        bool peaks = true, corners = true, neg_const = true;
        for (std::size_t mu = 0; mu < bank.num_pos(); ++mu) {
            const std::size_t mi = mu / n, mj = mu % n;
            if (bank.pos[mu](mi, mj) != bank.tau) peaks = false;
            const std::size_t fi = mi < n / 2 ? n - 1 : 0, fj = mj < n / 2 ? n - 1 : 0;
            const double d = std::abs(double(fi) - double(mi)) + std::abs(double(fj) - double(mj));
            if (1.0 - 4.0 * d / double(n) < -1.0 && bank.pos[mu](fi, fj) != -bank.tau)
                corners = false;
        }
        for (std::size_t i = 0; i < bank.neg.size(); ++i)
            if (bank.neg[i] != -bank.tau) neg_const = false;
        v.check("template_peaks_n" + std::to_string(n), peaks);
        v.check("template_clamp_n" + std::to_string(n), corners);
        v.check("negative_template_n" + std::to_string(n), neg_const);
    }

    for (int fixture = 0; fixture < 3; ++fixture) {
        const std::size_t n = fixture == 2 ? 4 : 3;
        const std::size_t count = fixture == 2 ? 5 : 4;
        Rng g(mix_seed(101 + static_cast<std::uint64_t>(fixture), 7));
        const TemplateBank bank = build_templates(n, default_tau(n), default_alpha(n), 4.0);
        std::vector<Tensor> X;
        for (std::size_t i = 0; i < count; ++i) X.push_back(random_map(g, n, 2.0));

        ExactStats st = exact_stats(X, bank);
        FilterLossResult res = filter_loss_exact(X, bank);
        if (mutate)
            for (Tensor& gmap : res.grads) scale(gmap, -1.0);

        const double base = surrogate_loss(X, bank, st.log_z);
        v.check("surrogate_matches_exact_f" + std::to_string(fixture),
                std::abs(base - res.loss) <= 1e-12);

        double scale_ref = 1e-12, worst = 0.0;
        for (const Tensor& gmap : res.grads)
            for (std::size_t i = 0; i < gmap.size(); ++i)
                scale_ref = std::max(scale_ref, std::abs(gmap[i]));
        const double h = 1e-5;
        for (std::size_t m = 0; m < X.size(); ++m)
            for (std::size_t i = 0; i < X[m].size(); ++i) {
                const double orig = X[m][i];
                X[m][i] = orig + h;
                const double up = surrogate_loss(X, bank, st.log_z);
                X[m][i] = orig - h;
                const double dn = surrogate_loss(X, bank, st.log_z);
                X[m][i] = orig;
                worst = std::max(worst, std::abs((up - dn) / (2.0 * h) - res.grads[m][i]));
            }
        char detail[64];
        std::snprintf(detail, sizeof(detail), "max rel err %.3g", worst / scale_ref);
        v.check("gradient_fd_f" + std::to_string(fixture), worst / scale_ref < 1e-5, detail);

        DecompositionReport dec = decompose_loss(X, bank);
        v.check("decomposition_identity_f" + std::to_string(fixture),
                std::abs(dec.reconstructed_loss - res.loss) <= 1e-9);
        v.check("loss_nonpositive_f" + std::to_string(fixture), res.loss <= 1e-12);
    }

    {
        const TemplateBank bank = build_templates(3, default_tau(3), default_alpha(3), 4.0);
        Rng g(mix_seed(777, 7));
        const Tensor one = random_map(g, 3, 1.0);
        v.check("single_map_zero_loss",
                std::abs(filter_loss_exact({one}, bank).loss) <= 1e-12);
        v.check("identical_maps_zero_loss",
                std::abs(filter_loss_exact({one, one, one}, bank).loss) <= 1e-12);
    }

    std::cout << (v.ok ? "verify: all checks passed" : "verify: FAILURES present") << "\n";
    return v.ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

struct VizArgs {
    std::string checkpoint, data, out;
    std::vector<std::size_t> filters;
    std::vector<std::size_t> scenes;
};

int run_viz(const VizArgs& a) {
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    Archive ar = load_archive(a.data);
    require(ar.image_h == ck.net.arch.input_h && ar.image_w == ck.net.arch.input_w,
            "viz: archive image size does not match the checkpoint architecture");

    std::size_t total_filters = 0;
    for (const auto& layer_states : ck.net.states) total_filters += layer_states.size();
    require(total_filters > 0, "viz: checkpoint has no interpretable filters");
    for (std::size_t f : a.filters)
        require(f < total_filters, "viz: filter id " + std::to_string(f) + " out of range (have " +
                                       std::to_string(total_filters) + ")");
    std::vector<std::size_t> scene_ids = a.scenes;
    if (scene_ids.empty())
        for (std::size_t s = 0; s < std::min<std::size_t>(8, ar.scenes.size()); ++s)
            scene_ids.push_back(s);
    for (std::size_t s : scene_ids)
        require(s < ar.scenes.size(), "viz: scene id " + std::to_string(s) + " out of range");

    const auto locate = [&](std::size_t fid) {
        std::size_t ii = 0;
        while (fid >= ck.net.states[ii].size()) fid -= ck.net.states[ii++].size();
        return std::make_pair(ii, fid);
    };

    std::filesystem::create_directories(a.out);
    for (std::size_t s : scene_ids) {
        ForwardResult fwd = forward(ck.net, ar.scenes[s].image, false);
        for (std::size_t fid : a.filters) {
            const auto [ii, f] = locate(fid);
            const Tensor& raw = fwd.maps[ii][f];
            MaskResult mr = apply_mask(raw, ck.net.banks[ii]);
            char prefix[32];
            std::snprintf(prefix, sizeof(prefix), "s%05zu_f%03zu", s, fid);
            write_filter_viz(a.out, prefix, raw, ck.net.banks[ii], mr.mu_hat, mr.masked,
                             ar.image_h, ar.image_w);
        }
    }
    for (std::size_t fid : a.filters) {
        const auto [ii, f] = locate(fid);
        std::vector<std::size_t> sels;
        sels.reserve(ar.scenes.size());
        for (const SyntheticScene& sc : ar.scenes)
            sels.push_back(forward(ck.net, sc.image, false).sel[ii][f]);
        char name[32];
        std::snprintf(name, sizeof(name), "heat_f%03zu.pgm", fid);
        write_heatmap(a.out + "/" + name, selection_counts(sels, ck.net.banks[ii].n),
                      ar.image_h, ar.image_w);
    }

    KeyValues kv = {{"command", "viz"}, {"checkpoint", a.checkpoint}, {"data", a.data},
                    {"out", a.out}};
    std::string fl, sl;
    for (std::size_t f : a.filters) fl += (fl.empty() ? "" : ",") + std::to_string(f);
    for (std::size_t s : scene_ids) sl += (sl.empty() ? "" : ",") + std::to_string(s);
    kv.emplace_back("filters", fl);
    kv.emplace_back("scenes", sl);
    write_effective_config(a.out, kv);
    std::cout << "viz: " << scene_ids.size() * a.filters.size() * 3 + a.filters.size()
              << " images written to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interpretable convnet workbench: synthetic scenes, training, metrics"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen", "generate a synthetic scene archive");
    cmd_gen->add_option("--out", gen.out, "archive directory")->required();
    cmd_gen->add_option("--seed", gen.cfg.seed, "generator seed");
    cmd_gen->add_option("--count", gen.count, "number of labeled scenes");
    cmd_gen->add_option("--categories", gen.cfg.num_categories, "category count (1..6)");
    cmd_gen->add_option("--jitter", gen.cfg.jitter, "max object translation, px");
    cmd_gen->add_option("--clutter", gen.cfg.clutter, "distractor speckle count");
    cmd_gen->add_option("--noise", gen.cfg.noise, "background noise amplitude");
    cmd_gen->add_option("--negatives", gen.cfg.negatives, "clutter-only scenes to append");
    cmd_gen->set_config("--config", "", "read options from a config file");

    TrainArgs tr;
    CLI::App* cmd_train = app.add_subcommand("train", "train a network on an archive");
    cmd_train->add_option("--data", tr.data, "archive directory")->required();
    cmd_train->add_option("--out", tr.out, "run directory")->required();
    cmd_train->add_option("--epochs", tr.cfg.epochs, "training epochs");
    cmd_train->add_option("--batch", tr.cfg.batch, "batch size");
    cmd_train->add_option("--lr", tr.cfg.lr, "learning rate");
    cmd_train->add_option("--momentum", tr.cfg.momentum, "SGD momentum");
    cmd_train->add_option("--lambda-k", tr.cfg.lambda_k, "filter-loss weight constant");
    cmd_train->add_option("--tau", tr.tau, "template peak value (0 = default 0.5/n^2)");
    cmd_train->add_option("--alpha", tr.alpha, "positive prior mass (0 = default n^2/(1+n^2))");
    cmd_train->add_option("--beta", tr.beta, "template decay rate");
    cmd_train->add_option("--seed", tr.cfg.seed, "training seed");
    cmd_train->add_option("--loss", tr.loss, "task loss")
        ->check(CLI::IsMember({"logistic", "softmax"}));
    cmd_train->add_option("--filters", tr.filters, "interpretable filter count");
    cmd_train->add_flag("--no-filter-loss", tr.no_filter_loss,
                        "disable the filter loss (mask stays on)");
    cmd_train->add_flag("--no-mask", tr.no_mask, "disable the mask layer (plain baseline)");
    cmd_train->set_config("--config", "", "read options from a config file");

    EvalArgs ev;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score a checkpoint on an archive");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    cmd_eval->add_option("--data", ev.data, "archive directory")->required();
    cmd_eval->add_option("--out", ev.out, "report directory")->required();
    cmd_eval->set_config("--config", "", "read options from a config file");

    CLI::App* cmd_verify = app.add_subcommand("verify", "run built-in numerical checks");

    VizArgs vz;
    CLI::App* cmd_viz = app.add_subcommand("viz", "export filter visualizations");
    cmd_viz->add_option("--checkpoint", vz.checkpoint, "checkpoint file")->required();
    cmd_viz->add_option("--data", vz.data, "archive directory")->required();
    cmd_viz->add_option("--out", vz.out, "image directory")->required();
    cmd_viz->add_option("--filters", vz.filters, "filter ids to render")->required();
    cmd_viz->add_option("--scenes", vz.scenes, "scene ids (default: first 8)");
    cmd_viz->set_config("--config", "", "read options from a config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen(gen);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_verify->parsed()) return run_verify();
        if (cmd_viz->parsed()) return run_viz(vz);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
