#include <doctest.h>

#include <filesystem>

#include "ttom/grammar.hpp"
#include "ttom/probe.hpp"
#include "ttom/tto.hpp"

using namespace ttom;

namespace {

DenoiserConfig small_config() {
    DenoiserConfig c;
    c.latent = {2, 4, 4};
    c.channels = 16;
    c.blocks = 2;
    c.heads = 2;
    c.text_len = 16;
    c.vocab = 64;
    c.sampler_steps = 4;
    c.seed = 3;
    return c;
}

TTOConfig small_tto() {
    TTOConfig t;
    t.guided_steps = 2;
    t.iters_per_step = 3;
    t.optimizer.learning_rate = 1e-2;
    t.alignment.guided_blocks = {0, 1};
    return t;
}

struct Problem {
    SpatioTemporalLayout layout;
    std::vector<ObjectTarget> targets;
    std::vector<int> tokens;
};

Problem problem(const std::string& prompt, const DenoiserConfig& c) {
    RuleBasedPlanner planner;
    Problem p;
    p.layout = verify_layout(plan_layout(prompt, planner, 4 * c.latent.tau, c.latent)).layout;
    p.targets = build_targets(p.layout);
    p.tokens = encode_tokens(tokenize(prompt), c.vocab);
    return p;
}

BinaryGrid grid_from(LatentDims dims, std::vector<unsigned char> cells) {
    BinaryGrid g(dims);
    g.values() = std::move(cells);
    return g;
}

}  // namespace

TEST_CASE("tto config rejects out-of-range settings") {
    const auto c = small_config();
    TTOConfig t = small_tto();
    CHECK_NOTHROW(t.validate(c));
    t.iters_per_step = 0;
    CHECK_THROWS_AS(t.validate(c), std::invalid_argument);
    t = small_tto();
    t.guided_steps = c.sampler_steps + 1;
    CHECK_THROWS_AS(t.validate(c), std::invalid_argument);
    t = small_tto();
    t.alignment.guided_blocks = {2};
    CHECK_THROWS_AS(t.validate(c), std::invalid_argument);
}

TEST_CASE("tto records one loss per iteration per guided step") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    const auto p = problem("a red ball moves left to right", c);
    const auto fresh = AdapterSet::fresh(c.blocks, c.channels, 2, 1);
    const auto r = run_tto(net, p.tokens, p.targets, fresh, small_tto(), 11);
    REQUIRE(r.traces.size() == 2);
    for (int s = 0; s < 2; ++s) {
        CHECK(r.traces[static_cast<std::size_t>(s)].step == s);
        CHECK(r.traces[static_cast<std::size_t>(s)].losses.size() == 3);
    }
    CHECK_FALSE(r.adapters == fresh);
    CHECK(r.sample.forward_passes == c.sampler_steps + 2);
}

TEST_CASE("disabled tto reproduces the baseline exactly") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    const auto p = problem("a cat sits beside a blue box", c);
    const auto fresh = AdapterSet::fresh(c.blocks, c.channels, 2, 9);
    TTOConfig t = small_tto();
    t.guided_steps = 0;
    const auto r = run_tto(net, p.tokens, p.targets, fresh, t, 5, {0, 1});
    CHECK(r.adapters == fresh);
    CHECK(r.traces.empty());
    const auto base = net.sample(p.tokens, nullptr, {}, 5, {0, 1});
    CHECK(r.sample.final_state.z == base.final_state.z);
    for (std::size_t s = 0; s < base.records.size(); ++s) CHECK(r.sample.records[s].blocks == base.records[s].blocks);
}

TEST_CASE("tto never touches the base weights and is reproducible") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    const auto before = net.weights().checksum();
    const auto p = problem("a red ball moves left to right", c);
    const auto fresh = AdapterSet::fresh(c.blocks, c.channels, 2, 1);
    const auto a = run_tto(net, p.tokens, p.targets, fresh, small_tto(), 11);
    const auto b = run_tto(net, p.tokens, p.targets, fresh, small_tto(), 11);
    CHECK(net.weights().checksum() == before);
    CHECK(a.adapters == b.adapters);
    CHECK(a.sample.final_state.z == b.sample.final_state.z);
    for (std::size_t s = 0; s < a.traces.size(); ++s) CHECK(a.traces[s].losses == b.traces[s].losses);
}

TEST_CASE("optimize_step leaves the latent alone and lowers the loss") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    const auto p = problem("a red ball moves left to right", c);
    AdapterSet adapters = AdapterSet::fresh(c.blocks, c.channels, 2, 1);
    AdamWState opt(adapters.parameter_count());
    const auto state = net.initial_state(2);
    const LatentState copy = state;
    TTOConfig t = small_tto();
    t.iters_per_step = 6;
    const auto trace = optimize_step(net, state, p.tokens, p.targets, adapters, opt, t);
    CHECK(state.z == copy.z);
    REQUIRE(trace.losses.size() == 6);
    const auto requests = pool_requests(p.targets, t.alignment.guided_blocks);
    const double after = net.evaluate_loss(make_loss_fn(LossKind::Jsd, p.targets), state, p.tokens, &adapters, requests);
    CHECK(after < trace.losses.front());
}

TEST_CASE("ce and com variants optimize with finite losses") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    const auto p = problem("a cat sits beside a blue box", c);
    for (LossKind k : {LossKind::Ce, LossKind::Com}) {
        TTOConfig t = small_tto();
        t.alignment.loss_kind = k;
        const auto r = run_tto(net, p.tokens, p.targets, AdapterSet::fresh(c.blocks, c.channels, 2, 1), t, 3);
        for (const auto& tr : r.traces)
            for (double l : tr.losses) CHECK(std::isfinite(l));
    }
}

TEST_CASE("binarization of a one-hot map marks its cell") {
    PooledAttention p;
    p.values = RealGrid({1, 3, 3}, 0.0);
    p.values.at(0, 2, 1) = 1.0;
    const auto b = binarize_attention(p, 1);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(b.at(0, r, c) == ((r == 2 && c == 1) ? 1 : 0));
    CHECK_THROWS_AS(binarize_attention(p, 0), std::invalid_argument);
    CHECK_THROWS_AS(binarize_attention(p, 10), std::invalid_argument);
}

TEST_CASE("binarization of a uniform map takes the first cells in row-major order") {
    PooledAttention p;
    p.values = RealGrid({2, 3, 3}, 1.0 / 18);
    const auto b = binarize_attention(p, 4);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == (i < 4 ? 1 : 0));
}

TEST_CASE("binarizing a sharp soft mask recovers its box") {
    ObjectLayout o;
    o.phrase = "a cat";
    o.token_span = {0, 2};
    o.boxes.assign(2, BBox{0.25, 0.5, 0.75, 1.0});
    o.end_frame = 1;
    const LatentDims dims{2, 8, 8};
    const auto soft = soft_mask(o, 2, dims, 1e-6);
    PooledAttention p;
    p.values = soft.values;
    const auto box = rasterize_box(o.boxes[0], 8, 8);
    int cells = 0;
    for (auto v : box.values()) cells += v;
    const auto b = binarize_attention(p, 2 * cells);
    for (int t = 0; t < 2; ++t)
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) CHECK(b.at(t, r, c) == box.at(0, r, c));
}

TEST_CASE("miou examples") {
    const LatentDims d{1, 4, 4};
    // clang-format off
    const auto a = grid_from(d, {1,1,0,0,
                                 1,1,0,0,
                                 0,0,0,0,
                                 0,0,0,0});
    const auto b = grid_from(d, {0,1,1,0,
                                 0,1,1,0,
                                 0,0,0,0,
                                 0,0,0,0});
    const auto far = grid_from(d, {0,0,0,0,
                                   0,0,0,0,
                                   0,0,1,1,
                                   0,0,1,1});
    // clang-format on
    CHECK(miou(a, a) == 1.0);
    CHECK(miou(a, far) == 0.0);
    CHECK(miou(a, b) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
    CHECK(miou(a, b) == miou(b, a));
    CHECK_THROWS_AS(miou(a, BinaryGrid(d, 0)), std::invalid_argument);
    CHECK_THROWS_AS(miou(a, BinaryGrid({1, 2, 2}, 1)), std::invalid_argument);
}

TEST_CASE("miou averages only frames where either mask is set") {
    const LatentDims d{3, 1, 2};
    const auto pred = grid_from(d, {1, 0, 0, 0, 1, 1});
    const auto truth = grid_from(d, {1, 0, 0, 0, 1, 0});
    CHECK(miou(pred, truth) == doctest::Approx((1.0 + 0.5) / 2).epsilon(1e-15));
}

TEST_CASE("probe scores lie in [0, 1] and are deterministic") {
    const auto c = small_config();
    const Denoiser net = Denoiser::random(c);
    RuleBasedPlanner planner;
    std::vector<SpatioTemporalLayout> layouts;
    for (const auto& prompt : PromptGrammar(1).generate(5)) {
        layouts.push_back(verify_layout(plan_layout(prompt, planner, 4 * c.latent.tau, c.latent)).layout);
    }
    const auto a = probe_blocks(net, layouts, 1, 7);
    const auto b = probe_blocks(net, layouts, 1, 7);
    CHECK(a == b);
    REQUIRE(a.block_scores.size() == static_cast<std::size_t>(c.blocks));
    for (double s : a.block_scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
    CHECK(a.prompt_count == 5);
    CHECK(a.sample_step == 1);
}

TEST_CASE("probe on uniform attention scores every block the same") {
    const auto c = small_config();
    DenoiserWeights w = DenoiserWeights::random(c);
    for (auto& b : w.blocks) {
        b.cross_q.setZero();
        b.cross_k.setZero();
    }
    const Denoiser net(c, w);
    RuleBasedPlanner planner;
    const std::vector<SpatioTemporalLayout> layouts{
        verify_layout(plan_layout("a red ball moves left to right", planner, 4 * c.latent.tau, c.latent)).layout};
    const auto r = probe_blocks(net, layouts, 0, 1);
    CHECK(r.block_scores[0] == doctest::Approx(r.block_scores[1]).epsilon(1e-9));
}

TEST_CASE("probe reports round-trip through JSON") {
    ProbeReport r;
    r.block_scores = {0.1, 0.25, 0.125, 0.3};
    r.prompt_count = 50;
    r.sample_step = 2;
    CHECK(ProbeReport::from_json(r.to_json()) == r);
    const auto path = (std::filesystem::temp_directory_path() / "ttom_probe_report.json").string();
    write_probe_report(r, path);
    CHECK(read_probe_report(path) == r);
    std::filesystem::remove(path);
}
