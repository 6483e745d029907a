#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "gbx/checkpoint.hpp"
#include "gbx/scene_gen.hpp"
#include "helpers.hpp"

using gbx::Net;
using gbx::Tensor;

namespace {

gbx::ArchitectureSpec small_arch() {
    gbx::ArchitectureSpec a;
    a.num_categories = 3;
    a.layers = {gbx::conv_spec(4, 3, 1),  gbx::relu_spec(), gbx::pool_spec(2, 2),
                gbx::conv_spec(4, 3, 1),  gbx::relu_spec(), gbx::pool_spec(2, 2),
                gbx::conv_spec(4, 3, 0, true), gbx::relu_spec(), gbx::mask_spec(),
                gbx::fc_spec(3)};
    return a;
}

Net trained_small_net() {
    Net net = gbx::build_net(small_arch(), 7);
    gbx::GeneratorConfig gc;
    gc.seed = 91;
    gc.num_categories = 3;
    const auto data = gbx::generate(gc, 18);
    gbx::TrainConfig tc;
    tc.epochs = 2;
    tc.batch = 6;
    tc.lr = 0.02;
    tc.lambda_k = 0.05;
    tc.seed = 7;
    gbx::train(net, data, tc);
    return net;
}

void require_same_params_and_states(const Net& a, const Net& b) {
    REQUIRE(a.layers.size() == b.layers.size());
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        if (!a.layers[li].has_params) continue;
        REQUIRE(a.layers[li].w.shape() == b.layers[li].w.shape());
        for (std::size_t i = 0; i < a.layers[li].w.size(); ++i)
            REQUIRE(a.layers[li].w[i] == b.layers[li].w[i]);
        for (std::size_t i = 0; i < a.layers[li].b.size(); ++i)
            REQUIRE(a.layers[li].b[i] == b.layers[li].b[i]);
    }
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t ii = 0; ii < a.states.size(); ++ii)
        for (std::size_t f = 0; f < a.states[ii].size(); ++f) {
            const auto& sa = a.states[ii][f];
            const auto& sb = b.states[ii][f];
            REQUIRE(sa.target_category == sb.target_category);
            REQUIRE(sa.update_count == sb.update_count);
            REQUIRE(sa.log_px == sb.log_px);
            REQUIRE(sa.log_z.size() == sb.log_z.size());
            for (std::size_t mu = 0; mu < sa.log_z.size(); ++mu)
                REQUIRE(sa.log_z[mu] == sb.log_z[mu]);
        }
}

}  // namespace

TEST_CASE("architecture specs survive the JSON round trip") {
    const gbx::ArchitectureSpec a = small_arch();
    const gbx::ArchitectureSpec b = gbx::arch_from_json(gbx::arch_to_json(a));
    REQUIRE(b.num_categories == a.num_categories);
    REQUIRE(b.input_h == a.input_h);
    REQUIRE(b.mask_enabled == a.mask_enabled);
    REQUIRE(b.tau == a.tau);
    REQUIRE(b.alpha == a.alpha);
    REQUIRE(b.beta == a.beta);
    REQUIRE(b.layers.size() == a.layers.size());
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        REQUIRE(b.layers[li].kind == a.layers[li].kind);
        REQUIRE(b.layers[li].out_channels == a.layers[li].out_channels);
        REQUIRE(b.layers[li].ksize == a.layers[li].ksize);
        REQUIRE(b.layers[li].stride == a.layers[li].stride);
        REQUIRE(b.layers[li].pad == a.layers[li].pad);
        REQUIRE(b.layers[li].window == a.layers[li].window);
        REQUIRE(b.layers[li].out_dim == a.layers[li].out_dim);
    }
}

TEST_CASE("a trained checkpoint reloads bit-for-bit") {
    testutil::TempDir dir;
    const Net net = trained_small_net();
    const std::string path = dir.sub("ck.gbx");
    gbx::save_checkpoint(path, net, 7, 2, gbx::TaskLossKind::softmax_multiclass);

    const gbx::LoadedCheckpoint ck = gbx::load_checkpoint(path);
    REQUIRE(ck.seed == 7);
    REQUIRE(ck.epoch == 2);
    REQUIRE(ck.loss == gbx::TaskLossKind::softmax_multiclass);
    REQUIRE(ck.net.banks.size() == 1);
    REQUIRE(ck.net.banks[0].n == net.banks[0].n);
    REQUIRE(ck.net.banks[0].tau == net.banks[0].tau);
    REQUIRE(ck.net.banks[0].alpha == net.banks[0].alpha);
    require_same_params_and_states(net, ck.net);

    // Inference parity on fresh scenes.
    gbx::GeneratorConfig gc;
    gc.seed = 92;
    gc.num_categories = 3;
    for (const auto& sc : gbx::generate(gc, 4)) {
        const Tensor a = gbx::forward(net, sc.image, false).logits;
        const Tensor b = gbx::forward(ck.net, sc.image, false).logits;
        for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    }
}

TEST_CASE("an untrained checkpoint reloads and predicts identically") {
    testutil::TempDir dir;
    const Net net = gbx::build_net(small_arch(), 21);
    const std::string path = dir.sub("fresh.gbx");
    gbx::save_checkpoint(path, net, 21, 0, gbx::TaskLossKind::logistic_binary);
    const gbx::LoadedCheckpoint ck = gbx::load_checkpoint(path);
    REQUIRE(ck.loss == gbx::TaskLossKind::logistic_binary);
    REQUIRE(ck.epoch == 0);

    gbx::GeneratorConfig gc;
    gc.num_categories = 3;
    const auto scenes = gbx::generate(gc, 2);
    for (const auto& sc : scenes) {
        const Tensor a = gbx::predict(net, sc.image, ck.loss);
        const Tensor b = gbx::predict(ck.net, sc.image, ck.loss);
        for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    testutil::TempDir dir;
    const std::string bad = dir.sub("bad.gbx");
    std::ofstream(bad) << "GBXX\n12\n{}\n";
    REQUIRE_THROWS_AS(gbx::load_checkpoint(bad), std::runtime_error);
    REQUIRE_THROWS_AS(gbx::load_checkpoint(dir.sub("missing.gbx")), std::runtime_error);

    // Valid header, payload cut short.
    const Net net = gbx::build_net(small_arch(), 3);
    const std::string path = dir.sub("cut.gbx");
    gbx::save_checkpoint(path, net, 3, 0, gbx::TaskLossKind::softmax_multiclass);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(dir.sub("cut.gbx"), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
    out.close();
    REQUIRE_THROWS_AS(gbx::load_checkpoint(dir.sub("cut.gbx")), std::runtime_error);
}
