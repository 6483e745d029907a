#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbx/archive.hpp"
#include "gbx/checkpoint.hpp"
#include "gbx/report.hpp"
#include "gbx/viz.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& capture = "",
            const std::string& env = "") {
    std::string cmd = env.empty() ? "" : env + " ";
    cmd += GBX_CLI_PATH " " + args;
    cmd += capture.empty() ? " > /dev/null 2>&1" : " > " + capture + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> dir_contents(const std::string& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = testutil::slurp(e.path().string());
    return out;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < text.size();) {
        if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return n;
}

bool has_line_with(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

// One generated archive plus one short training run, shared across the CLI
// tests so each case does not pay for its own training.
struct Workspace {
    testutil::TempDir dir{"gbx_cli_ws"};
    std::string data = dir.sub("data");
    std::string run = dir.sub("run");
    int gen_rc = -1, train_rc = -1;
    std::string train_flags =
        " --epochs 2 --batch 6 --lr 0.02 --lambda-k 0.05 --seed 9 --filters 8";

    Workspace() {
        gen_rc = run_cli("gen --out " + data + " --seed 21 --count 18 --categories 3 --negatives 3");
        train_rc = run_cli("train --data " + data + " --out " + run + train_flags);
    }
    std::string checkpoint() const { return run + "/checkpoint.gbx"; }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("gen writes byte-identical archives and a complete index") {
    testutil::TempDir t("cli_gen");
    const std::string flags = " --seed 7 --count 12 --categories 3 --negatives 2";
    REQUIRE(run_cli("gen --out " + t.sub("a") + flags) == 0);
    REQUIRE(run_cli("gen --out " + t.sub("b") + flags) == 0);

    auto a = dir_contents(t.sub("a"));
    auto b = dir_contents(t.sub("b"));
    REQUIRE(a.size() == b.size());
    REQUIRE(a == b);

    REQUIRE(a.count("index.txt") == 1);
    REQUIRE(a.count("scene_00000.pgm") == 1);
    const std::string& idx = a["index.txt"];
    REQUIRE(idx.rfind("GBXA1\n", 0) == 0);
    REQUIRE(has_line_with(idx, "scenes 14\n"));
    REQUIRE(has_line_with(idx, "categories 3\n"));
    REQUIRE(count_lines_starting(idx, "scene ") == 14);

    const std::string& cfg = a["effective_config.txt"];
    REQUIRE(has_line_with(cfg, "command gen\n"));
    REQUIRE(has_line_with(cfg, "seed 7\n"));
    REQUIRE(has_line_with(cfg, "count 12\n"));
}

TEST_CASE("gen usage and path errors exit 2") {
    testutil::TempDir t("cli_gen_bad");
    REQUIRE(run_cli("gen --out " + t.sub("z") + " --count 0") == 2);
    REQUIRE(run_cli("gen --out " + t.sub("z") + " --bogus 1") == 2);
    REQUIRE(run_cli("gen --count 4") == 2);  // --out is required

    {
        std::ofstream blocker(t.sub("blocker"), std::ios::binary);
        blocker << "x";
    }
    REQUIRE(run_cli("gen --out " + t.sub("blocker") + "/sub --count 4") == 2);
}

TEST_CASE("top-level parsing: help succeeds, bad subcommands fail") {
    REQUIRE(run_cli("--help") == 0);
    REQUIRE(run_cli("") == 2);
    REQUIRE(run_cli("frobnicate") == 2);
    REQUIRE(run_cli("train --data somewhere") == 2);  // --out is required
}

TEST_CASE("train writes checkpoint, epoch log, and echoed config; reruns match byte for byte") {
    REQUIRE(ws().gen_rc == 0);
    REQUIRE(ws().train_rc == 0);
    REQUIRE(fs::exists(ws().checkpoint()));

    const std::string log = testutil::slurp(ws().run + "/train_log.ndjson");
    REQUIRE(count_lines_starting(log, "{") == 2);
    std::istringstream lines(log);
    std::string line;
    std::size_t epoch = 1;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        REQUIRE(j["epoch"].get<std::size_t>() == epoch++);
        REQUIRE(std::isfinite(j["task_loss"].get<double>()));
        REQUIRE(j["train_acc"].get<double>() >= 0.0);
        REQUIRE(j["train_acc"].get<double>() <= 1.0);
        REQUIRE(j.contains("filter_loss"));
        REQUIRE(j.contains("lambda"));
    }

    const std::string cfg = testutil::slurp(ws().run + "/effective_config.txt");
    REQUIRE(has_line_with(cfg, "command train\n"));
    REQUIRE(has_line_with(cfg, "loss softmax\n"));
    REQUIRE(has_line_with(cfg, "mask true\n"));
    REQUIRE(has_line_with(cfg, "filter_loss true\n"));
    REQUIRE(has_line_with(cfg, "seed 9\n"));

    testutil::TempDir t("cli_train_rerun");
    REQUIRE(run_cli("train --data " + ws().data + " --out " + t.sub("r2") + ws().train_flags) == 0);
    REQUIRE(testutil::slurp(t.sub("r2") + "/train_log.ndjson") == log);
    REQUIRE(testutil::slurp(t.sub("r2") + "/checkpoint.gbx") ==
            testutil::slurp(ws().checkpoint()));
}

TEST_CASE("train exits 2 on a missing archive and 3 on divergence") {
    REQUIRE(ws().gen_rc == 0);
    testutil::TempDir t("cli_train_bad");
    REQUIRE(run_cli("train --data " + t.sub("absent") + " --out " + t.sub("o")) == 2);
    REQUIRE(run_cli("train --data " + ws().data + " --out " + t.sub("d") +
                    " --epochs 3 --batch 6 --lr 1e9 --seed 1 --filters 8") == 3);
}

TEST_CASE("the no-mask baseline trains and evaluates through the same entry point") {
    REQUIRE(ws().gen_rc == 0);
    testutil::TempDir t("cli_nomask");
    REQUIRE(run_cli("train --data " + ws().data + " --out " + t.sub("o") +
                    " --epochs 1 --batch 6 --lr 0.02 --lambda-k 0 --seed 3 --filters 8"
                    " --no-mask") == 0);
    const std::string cfg = testutil::slurp(t.sub("o") + "/effective_config.txt");
    REQUIRE(has_line_with(cfg, "mask false\n"));
    REQUIRE(run_cli("eval --checkpoint " + t.sub("o") + "/checkpoint.gbx --data " + ws().data +
                    " --out " + t.sub("r")) == 0);
    REQUIRE(fs::exists(t.sub("r") + "/report.json"));
}

TEST_CASE("eval reports match a direct library evaluation and reruns are byte-identical") {
    REQUIRE(ws().train_rc == 0);
    testutil::TempDir t("cli_eval");
    REQUIRE(run_cli("eval --checkpoint " + ws().checkpoint() + " --data " + ws().data +
                    " --out " + t.sub("r1")) == 0);
    REQUIRE(run_cli("eval --checkpoint " + ws().checkpoint() + " --data " + ws().data +
                    " --out " + t.sub("r2")) == 0);
    const std::string json1 = testutil::slurp(t.sub("r1") + "/report.json");
    REQUIRE(json1 == testutil::slurp(t.sub("r2") + "/report.json"));
    REQUIRE(testutil::slurp(t.sub("r1") + "/report.tsv") ==
            testutil::slurp(t.sub("r2") + "/report.tsv"));

    const gbx::LoadedCheckpoint ck = gbx::load_checkpoint(ws().checkpoint());
    const gbx::Archive ar = gbx::load_archive(ws().data);
    const gbx::MetricsReport rep = gbx::evaluate(ck.net, ar.scenes);

    const auto j = nlohmann::json::parse(json1);
    REQUIRE(j["summary"]["accuracy"].get<double>() == rep.accuracy);
    REQUIRE(j["summary"]["purity"].get<double>() == rep.purity);
    REQUIRE(j["summary"]["mean_instability"].get<double>() == rep.mean_instability);
    REQUIRE(j["summary"]["mean_p_f"].get<double>() == rep.mean_p_f);
    REQUIRE(j["filters"].size() == rep.filters.size());
    for (std::size_t i = 0; i < rep.filters.size(); ++i) {
        REQUIRE(j["filters"][i]["p_f"].get<double>() == rep.filters[i].p_f);
        REQUIRE(j["filters"][i]["target_category"].get<int>() ==
                rep.filters[i].target_category);
    }
}

TEST_CASE("eval exits 2 on a missing checkpoint or a mismatched archive") {
    REQUIRE(ws().train_rc == 0);
    testutil::TempDir t("cli_eval_bad");
    REQUIRE(run_cli("eval --checkpoint " + t.sub("missing.gbx") + " --data " + ws().data +
                    " --out " + t.sub("o")) == 2);
    REQUIRE(run_cli("gen --out " + t.sub("d2") + " --seed 5 --count 8 --categories 2") == 0);
    REQUIRE(run_cli("eval --checkpoint " + ws().checkpoint() + " --data " + t.sub("d2") +
                    " --out " + t.sub("o2")) == 2);
}

TEST_CASE("evaluating an untrained net reports warnings and baseline instability") {
    REQUIRE(ws().gen_rc == 0);
    testutil::TempDir t("cli_eval_untrained");
    gbx::Net net = gbx::build_net(gbx::default_architecture(3, 8), 17);
    gbx::save_checkpoint(t.sub("fresh.gbx"), net, 17, 0,
                         gbx::TaskLossKind::softmax_multiclass);
    REQUIRE(run_cli("eval --checkpoint " + t.sub("fresh.gbx") + " --data " + ws().data +
                    " --out " + t.sub("r")) == 0);
    const auto j = nlohmann::json::parse(testutil::slurp(t.sub("r") + "/report.json"));
    REQUIRE(j["warnings"].size() >= j["filters"].size());
    for (const auto& f : j["filters"]) {
        REQUIRE(f["target_category"].get<int>() == -1);
        REQUIRE_FALSE(f["instability_from_target"].get<bool>());
        REQUIRE(f["instability"].get<double>() == f["baseline_instability"].get<double>());
    }
}

TEST_CASE("verify passes with stable output and the mutation hook trips it") {
    testutil::TempDir t("cli_verify");
    REQUIRE(run_cli("verify", t.sub("v1.txt")) == 0);
    REQUIRE(run_cli("verify", t.sub("v2.txt")) == 0);
    const std::string v1 = testutil::slurp(t.sub("v1.txt"));
    REQUIRE(v1 == testutil::slurp(t.sub("v2.txt")));
    REQUIRE(has_line_with(v1, "verify: all checks passed"));
    REQUIRE(v1.find("FAIL") == std::string::npos);

    REQUIRE(run_cli("verify", t.sub("v3.txt"), "GBX_VERIFY_MUTATE=grad_sign") == 1);
    const std::string v3 = testutil::slurp(t.sub("v3.txt"));
    REQUIRE(has_line_with(v3, "FAIL gradient_fd"));
    REQUIRE(has_line_with(v3, "verify: FAILURES present"));
}

TEST_CASE("viz renders per-scene maps and a heatmap that matches brute-force counts") {
    REQUIRE(ws().train_rc == 0);
    testutil::TempDir t("cli_viz");
    REQUIRE(run_cli("viz --checkpoint " + ws().checkpoint() + " --data " + ws().data +
                    " --out " + t.sub("v") + " --filters 0 2 --scenes 0 3") == 0);

    for (const std::string s : {"s00000", "s00003"})
        for (const std::string f : {"_f000", "_f002"})
            for (const std::string kind : {"_raw.pgm", "_masked.pgm", "_template.pgm"})
                REQUIRE(fs::exists(t.sub("v") + "/" + s + f + kind));
    REQUIRE(fs::exists(t.sub("v") + "/heat_f000.pgm"));
    REQUIRE(fs::exists(t.sub("v") + "/heat_f002.pgm"));

    // Shared normalization keeps the masked rendering below the raw one.
    const gbx::GrayImage raw = gbx::read_pgm(t.sub("v") + "/s00000_f000_raw.pgm");
    const gbx::GrayImage masked = gbx::read_pgm(t.sub("v") + "/s00000_f000_masked.pgm");
    REQUIRE(raw.pixels.size() == masked.pixels.size());
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        REQUIRE(masked.pixels[i] <= raw.pixels[i]);

    const gbx::LoadedCheckpoint ck = gbx::load_checkpoint(ws().checkpoint());
    const gbx::Archive ar = gbx::load_archive(ws().data);
    std::vector<std::size_t> sels;
    for (const gbx::SyntheticScene& sc : ar.scenes)
        sels.push_back(gbx::forward(ck.net, sc.image, false).sel[0][0]);
    gbx::write_heatmap(t.sub("expected.pgm"),
                       gbx::selection_counts(sels, ck.net.banks[0].n), ar.image_h, ar.image_w);
    REQUIRE(testutil::slurp(t.sub("expected.pgm")) ==
            testutil::slurp(t.sub("v") + "/heat_f000.pgm"));

    REQUIRE(run_cli("viz --checkpoint " + ws().checkpoint() + " --data " + ws().data +
                    " --out " + t.sub("bad") + " --filters 99") == 2);
    REQUIRE(run_cli("viz --checkpoint " + ws().checkpoint() + " --data " + ws().data +
                    " --out " + t.sub("bad2") + " --filters 0 --scenes 999") == 2);
}

TEST_CASE("map rendering primitives") {
    SECTION("nearest-neighbor upsampling replicates blocks") {
        gbx::Tensor m({2, 2});
        m(0, 0) = 1.0;
        m(0, 1) = 2.0;
        m(1, 0) = 3.0;
        m(1, 1) = 4.0;
        const gbx::Tensor up = gbx::upsample_nearest(m, 4, 4);
        for (std::size_t p = 0; p < 4; ++p)
            for (std::size_t q = 0; q < 4; ++q) REQUIRE(up(p, q) == m(p / 2, q / 2));
        const gbx::Tensor odd = gbx::upsample_nearest(m, 3, 3);
        REQUIRE(odd(0, 0) == 1.0);
        REQUIRE(odd(0, 2) == 2.0);
        REQUIRE(odd(2, 2) == 4.0);
    }

    SECTION("an all-zero map renders as uniform black with the divisor recorded") {
        testutil::TempDir t("cli_black");
        gbx::write_map_pgm(t.sub("z.pgm"), gbx::Tensor({3, 3}, 0.0), 6, 6, 0.0);
        const gbx::GrayImage img = gbx::read_pgm(t.sub("z.pgm"));
        REQUIRE(img.h == 6);
        REQUIRE(img.w == 6);
        for (std::uint8_t px : img.pixels) REQUIRE(px == 0);
        REQUIRE(testutil::slurp(t.sub("z.pgm")).find("# max 0\n") != std::string::npos);
    }

    SECTION("selection counts accumulate cells and drop the negative index") {
        const std::vector<std::size_t> sels = {0, 1, 1, 4, 3, 4, 4};
        const gbx::Tensor counts = gbx::selection_counts(sels, 2);
        REQUIRE(counts[0] == 1.0);
        REQUIRE(counts[1] == 2.0);
        REQUIRE(counts[2] == 0.0);
        REQUIRE(counts[3] == 1.0);
        REQUIRE_THROWS_AS(gbx::selection_counts({5}, 2), std::invalid_argument);
    }
}
