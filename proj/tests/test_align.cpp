#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ttom/align.hpp"
#include "ttom/optim.hpp"

using namespace ttom;

namespace {

RealGrid grid_of(LatentDims dims, std::vector<double> values) {
    RealGrid g(dims);
    g.values() = std::move(values);
    return g;
}

RealGrid random_distribution(LatentDims dims, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RealGrid g(dims);
    double s = 0.0;
    for (double& v : g.values()) {
        v = u(rng);
        v = v * v * v;  // skewed, with many near-zero entries
        s += v;
    }
    for (double& v : g.values()) v /= s;
    return g;
}

// Hand-built target on a (1, 2, 2) grid.
ObjectTarget target_2x2(int object_id, std::vector<double> soft, std::vector<unsigned char> box) {
    const LatentDims dims{1, 2, 2};
    ObjectTarget t;
    t.object_id = object_id;
    t.span = {0, 1};
    t.soft.values = grid_of(dims, std::move(soft));
    t.soft.object_id = object_id;
    t.box_mask = BinaryGrid(dims);
    t.box_mask.values() = std::move(box);
    t.active = {true};
    double cx = 0.0, cy = 0.0;
    int n = 0;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            if (t.box_mask.at(0, r, c)) {
                cx += c;
                cy += r;
                ++n;
            }
    t.target_cells = n;
    t.center_x = {cx / n};
    t.center_y = {cy / n};
    return t;
}

PooledAttention pooled_of(int object_id, int block, RealGrid values) {
    PooledAttention p;
    p.values = std::move(values);
    p.object_id = object_id;
    p.block = block;
    return p;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

}  // namespace

TEST_CASE("jsd of the half-half and one-hot pair") {
    const LatentDims dims{1, 1, 2};
    const double v = jsd(grid_of(dims, {0.5, 0.5}), grid_of(dims, {1.0, 0.0}));
    const double oracle = 0.5 * kl({0.5, 0.5}, {0.75, 0.25}) + 0.5 * kl({1.0, 0.0}, {0.75, 0.25});
    CHECK(v == doctest::Approx(oracle).epsilon(1e-14));
    const double closed_form = 0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25)) + 0.5 * std::log(1.0 / 0.75);
    CHECK(v == doctest::Approx(closed_form).epsilon(1e-14));
    CHECK(v == doctest::Approx(0.2157615543).epsilon(1e-9));
}

TEST_CASE("jsd of disjoint one-hot distributions is ln 2") {
    const LatentDims dims{1, 2, 2};
    CHECK(jsd(grid_of(dims, {1, 0, 0, 0}), grid_of(dims, {0, 0, 0, 1})) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("jsd is bounded, symmetric and zero on identical inputs") {
    std::mt19937_64 rng(2024);
    const LatentDims dims{4, 8, 8};
    for (int i = 0; i < 2000; ++i) {
        const auto p = random_distribution(dims, rng);
        const auto q = random_distribution(dims, rng);
        const double a = jsd(p, q);
        CHECK(a >= 0.0);
        CHECK(a <= std::log(2.0) + 1e-9);
        CHECK(std::abs(a - jsd(q, p)) < 1e-12);
        CHECK(jsd(p, p) < 1e-12);
    }
}

TEST_CASE("jsd rejects inputs that are not distributions") {
    const LatentDims dims{1, 1, 2};
    CHECK_THROWS_AS(jsd(grid_of(dims, {0.5, 0.6}), grid_of(dims, {0.5, 0.5})), std::invalid_argument);
    CHECK_THROWS_AS(jsd(grid_of(dims, {-0.1, 1.1}), grid_of(dims, {0.5, 0.5})), std::invalid_argument);
    CHECK_THROWS_AS(jsd(grid_of(dims, {0.5, 0.5}), grid_of({1, 2, 1}, {0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("alignment loss is zero when pooled maps equal the targets") {
    const auto t = target_2x2(0, {0.4, 0.3, 0.2, 0.1}, {1, 1, 0, 0});
    const std::vector<ObjectTarget> targets{t};
    const std::vector<PooledAttention> pooled{pooled_of(0, 1, t.soft.values), pooled_of(0, 2, t.soft.values)};
    CHECK(loss_align(pooled, targets).value < 1e-15);
}

TEST_CASE("alignment loss reduces to jsd for one object and block") {
    const auto t = target_2x2(0, {0.4, 0.3, 0.2, 0.1}, {1, 1, 0, 0});
    const auto p = grid_of({1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    const std::vector<ObjectTarget> targets{t};
    const std::vector<PooledAttention> pooled{pooled_of(0, 1, p)};
    CHECK(loss_align(pooled, targets).value == doctest::Approx(jsd(p, t.soft.values)).epsilon(1e-15));
}

TEST_CASE("alignment loss averages objects") {
    const auto ta = target_2x2(0, {0.4, 0.3, 0.2, 0.1}, {1, 1, 0, 0});
    const auto tb = target_2x2(1, {0.1, 0.1, 0.1, 0.7}, {0, 0, 0, 1});
    const auto pa = grid_of({1, 2, 2}, {0.25, 0.25, 0.25, 0.25});
    const auto pb = grid_of({1, 2, 2}, {0.7, 0.1, 0.1, 0.1});
    const std::vector<ObjectTarget> targets{ta, tb};
    const std::vector<PooledAttention> pooled{pooled_of(0, 1, pa), pooled_of(1, 1, pb)};
    const double a = jsd(pa, ta.soft.values);
    const double b = jsd(pb, tb.soft.values);
    CHECK(loss_align(pooled, targets).value == doctest::Approx((a + b) / 2).epsilon(1e-15));

    const std::vector<PooledAttention> missing{pooled_of(0, 1, pa)};
    CHECK_THROWS_AS(loss_align(missing, targets), std::invalid_argument);
    const std::vector<PooledAttention> stranger{pooled_of(0, 1, pa), pooled_of(1, 1, pb), pooled_of(7, 1, pb)};
    CHECK_THROWS_AS(loss_align(stranger, targets), std::invalid_argument);
}

TEST_CASE("alignment gradient matches finite differences") {
    std::mt19937_64 rng(8);
    const LatentDims dims{2, 3, 3};
    ObjectTarget t;
    t.soft.values = random_distribution(dims, rng);
    t.box_mask = BinaryGrid(dims, 0);
    t.box_mask.at(0, 1, 1) = 1;
    t.box_mask.at(1, 0, 2) = 1;
    t.target_cells = 2;
    t.active = {true, true};
    t.center_x = {0.5, 1.0};
    t.center_y = {0.5, 0.0};
    const std::vector<ObjectTarget> targets{t};
    for (LossKind kind : {LossKind::Jsd, LossKind::Ce, LossKind::Com}) {
        const auto p = random_distribution(dims, rng);
        const std::vector<PooledAttention> pooled{pooled_of(0, 0, p)};
        const auto l = alignment_loss(kind, pooled, targets);
        const double h = 1e-7;
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto plus = pooled, minus = pooled;
            plus[0].values[i] += h;
            minus[0].values[i] -= h;
            // the losses accept unnormalized perturbations for differentiation
            const double fd =
                (alignment_loss(kind, plus, targets).value - alignment_loss(kind, minus, targets).value) / (2 * h);
            CHECK(l.grad[0][i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
        }
    }
}

TEST_CASE("cross-entropy vanishes on a matched mask and is scale invariant") {
    const auto t = target_2x2(0, {0.25, 0.25, 0.25, 0.25}, {1, 1, 0, 0});
    const std::vector<ObjectTarget> targets{t};
    const std::vector<PooledAttention> matched{pooled_of(0, 0, grid_of({1, 2, 2}, {0.5, 0.5, 0.0, 0.0}))};
    CHECK(ce_loss(matched, targets).value <= 1e-6);

    const std::vector<PooledAttention> uniform{pooled_of(0, 0, grid_of({1, 2, 2}, {0.25, 0.25, 0.25, 0.25}))};
    const double phat = std::clamp(1.0, kCeClamp, 1.0 - kCeClamp);
    const double oracle = -(0.5 * std::log(phat) + 0.5 * std::log(1.0 - phat));
    CHECK(ce_loss(uniform, targets).value == doctest::Approx(oracle).epsilon(1e-12));

    const std::vector<PooledAttention> a{pooled_of(0, 0, grid_of({1, 2, 2}, {0.4, 0.3, 0.2, 0.1}))};
    const std::vector<PooledAttention> b{pooled_of(0, 0, grid_of({1, 2, 2}, {4.0, 3.0, 2.0, 1.0}))};
    CHECK(ce_loss(a, targets).value == doctest::Approx(ce_loss(b, targets).value).epsilon(1e-14));
}

TEST_CASE("center-of-mass loss examples") {
    const auto centered = target_2x2(0, {0.25, 0.25, 0.25, 0.25}, {1, 1, 1, 1});
    const std::vector<ObjectTarget> full{centered};
    const std::vector<PooledAttention> uniform{pooled_of(0, 0, grid_of({1, 2, 2}, {0.25, 0.25, 0.25, 0.25}))};
    CHECK(com_loss(uniform, full).value == doctest::Approx(0.0).scale(1e-15));

    const std::vector<PooledAttention> corner{pooled_of(0, 0, grid_of({1, 2, 2}, {1.0, 0.0, 0.0, 0.0}))};
    CHECK(com_loss(corner, full).value == doctest::Approx(0.5).epsilon(1e-15));

    const auto single = target_2x2(0, {0.7, 0.1, 0.1, 0.1}, {1, 0, 0, 0});
    const std::vector<ObjectTarget> at_corner{single};
    CHECK(com_loss(corner, at_corner).value == doctest::Approx(0.0).scale(1e-15));
}

TEST_CASE("center-of-mass loss on a full-frame uniform map is zero for a centered box") {
    const LatentDims dims{1, 8, 8};
    ObjectTarget t;
    t.soft.values = RealGrid(dims, 1.0 / 64);
    t.box_mask = BinaryGrid(dims, 0);
    t.active = {true};
    t.center_x = {0.5};  // box (0.25, 0.25, 0.75, 0.75)
    t.center_y = {0.5};
    t.target_cells = 16;
    const std::vector<ObjectTarget> targets{t};
    const std::vector<PooledAttention> pooled{pooled_of(0, 0, RealGrid(dims, 1.0 / 64))};
    CHECK(com_loss(pooled, targets).value == doctest::Approx(0.0).scale(1e-15));
}

TEST_CASE("all losses are deterministic and finite on floored inputs") {
    std::mt19937_64 rng(44);
    const LatentDims dims{2, 4, 4};
    ObjectTarget t;
    t.soft.values = random_distribution(dims, rng);
    t.box_mask = BinaryGrid(dims, 0);
    t.box_mask.at(0, 0, 0) = 1;
    t.target_cells = 1;
    t.active = {true, false};
    t.center_x = {0.0, 0.0};
    t.center_y = {0.0, 0.0};
    const std::vector<ObjectTarget> targets{t};
    for (LossKind kind : {LossKind::Jsd, LossKind::Ce, LossKind::Com}) {
        RealGrid p(dims, 1e-8);
        p[5] = 1.0 - 31 * 1e-8;
        const std::vector<PooledAttention> pooled{pooled_of(0, 0, p)};
        const double a = alignment_loss(kind, pooled, targets).value;
        CHECK(std::isfinite(a));
        CHECK(a == alignment_loss(kind, pooled, targets).value);
    }
}

TEST_CASE("loss kinds parse by name") {
    for (LossKind k : {LossKind::Jsd, LossKind::Ce, LossKind::Com}) CHECK(parse_loss_kind(loss_kind_name(k)) == k);
    CHECK_THROWS_AS(parse_loss_kind("kl"), std::invalid_argument);
}

TEST_CASE("block selection policies") {
    const std::vector<double> scores{0.1, 0.5, 0.3, 0.2};
    CHECK(select_guided_blocks(scores, {BlockPolicy::Kind::TopK, 1, 0.0}) == std::vector<int>{1});
    CHECK(select_guided_blocks(scores, {BlockPolicy::Kind::TopK, 2, 0.0}) == std::vector<int>{1, 2});
    CHECK(select_guided_blocks(scores, {BlockPolicy::Kind::Threshold, 0, 0.25}) == std::vector<int>{1, 2});
    CHECK(select_guided_blocks(scores, {BlockPolicy::Kind::Threshold, 0, 0.9}) == std::vector<int>{1});
    CHECK(select_guided_blocks({0.2, 0.2, 0.2}, {BlockPolicy::Kind::TopK, 2, 0.0}) == std::vector<int>{0, 1});
}

TEST_CASE("alignment config validates guided blocks") {
    AlignmentConfig a;
    CHECK_NOTHROW(a.validate(4));
    a.guided_blocks = {};
    CHECK_THROWS_AS(a.validate(4), std::invalid_argument);
    a.guided_blocks = {4};
    CHECK_THROWS_AS(a.validate(4), std::invalid_argument);
}

TEST_CASE("adamw with zero gradient and no decay leaves parameters unchanged") {
    std::vector<double> p{0.3, -1.2, 2.0};
    const std::vector<double> g(3, 0.0);
    AdamWState s(3);
    AdamWConfig c;
    c.weight_decay = 0.0;
    adamw_step(p, g, s, c);
    CHECK(p == std::vector<double>{0.3, -1.2, 2.0});
}

TEST_CASE("adamw single scalar step with degenerate moments") {
    std::vector<double> p{1.0};
    const std::vector<double> g{1.0};
    AdamWState s(1);
    AdamWConfig c{0.1, 0.0, 0.0, 0.0, 0.0};
    adamw_step(p, g, s, c);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("adamw decoupled decay with zero gradient") {
    std::vector<double> p{2.0, -0.5};
    const std::vector<double> g{0.0, 0.0};
    AdamWState s(2);
    AdamWConfig c;
    c.learning_rate = 0.05;
    c.weight_decay = 0.1;
    adamw_step(p, g, s, c);
    CHECK(p[0] == doctest::Approx(2.0 * (1 - 0.05 * 0.1)).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-0.5 * (1 - 0.05 * 0.1)).epsilon(1e-15));
}

TEST_CASE("adamw matches a scalar reference over several steps") {
    const AdamWConfig c{1e-2, 0.9, 0.999, 1e-8, 0.01};
    std::vector<double> p{0.7};
    AdamWState s(1);
    double ref = 0.7, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = 0.3 * t - 0.5;
        adamw_step(p, std::vector<double>{g}, s, c);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        ref -= c.learning_rate * (mh / (std::sqrt(vh) + c.epsilon) + c.weight_decay * ref);
        CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
    }
    CHECK(s.step == 5);
}

TEST_CASE("adamw refuses non-finite gradients without side effects") {
    std::vector<double> p{1.0};
    AdamWState s(1);
    CHECK_THROWS_AS(adamw_step(p, std::vector<double>{std::nan("")}, s, AdamWConfig{}), NonFiniteError);
    CHECK(p[0] == 1.0);
    CHECK(s.step == 0);
    AdamWConfig bad;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
