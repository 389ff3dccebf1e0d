#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "malt/attention.hpp"
#include "malt/errors.hpp"
#include "test_util.hpp"

using namespace malt;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t nonzeros(std::span<const double> row) {
    return std::size_t(std::count_if(row.begin(), row.end(), [](double v) { return v != 0.0; }));
}

struct Fixture {
    ParamStore store;
    AttentionWeights w;
    Fixture(std::size_t dim, std::size_t heads, AttentionMode mode, std::uint64_t seed) {
        Rng rng(seed);
        w = AttentionWeights::create(store, "unit", dim, heads, mode, rng);
    }
};

Tensor run_attention(Fixture& f, const Tensor& x1, const Tensor& x2, SparsityConfig s, AttentionTrace* trace = nullptr) {
    Graph g;
    return g.value(sparse_attention(g, f.store, f.w, g.constant(x1), g.constant(x2), s, {}, trace));
}

}  // namespace

TEST_CASE("scaled_scores examples") {
    const Tensor a = scaled_scores(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(a.at(0, 0) == doctest::Approx(0.70710678).epsilon(1e-8));
    CHECK(a.at(0, 1) == 0.0);
    CHECK(scaled_scores(Tensor({2, 3}), Tensor({4, 3})) == Tensor({2, 4}));
    Rng rng(1);
    CHECK(scaled_scores(random_normal({3, 4}, rng), random_normal({5, 4}, rng)).shape() == Shape{3, 5});
    CHECK_THROWS_AS(scaled_scores(Tensor({3, 4}), Tensor({5, 3})), DimensionError);
}

TEST_CASE("topk_mask examples") {
    const Tensor masked = topk_mask(Tensor::matrix({{1, 3, 2}, {0, 5, 4}}), 2);
    CHECK(masked == Tensor::matrix({{-kInf, 3, 2}, {-kInf, 5, 4}}));
    CHECK(topk_mask(Tensor::matrix({{1, 3, 2}}), 3) == Tensor::matrix({{1, 3, 2}}));
    CHECK(topk_mask(Tensor::matrix({{1, 3, 2}}), 7) == Tensor::matrix({{1, 3, 2}}));
    // Both entries equal to the threshold survive.
    CHECK(topk_mask(Tensor::matrix({{2, 2, 1}}), 1) == Tensor::matrix({{2, 2, -kInf}}));
    CHECK(topk_mask(Tensor::matrix({{4, 1, 4, 4, 0}}), 2) == Tensor::matrix({{4, -kInf, 4, 4, -kInf}}));
    CHECK_THROWS_AS(topk_mask(Tensor::matrix({{1, 2}}), 0), ConfigError);
}

TEST_CASE("sparse attention with k >= keys is dense attention") {
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = rng.range(1, 3);
        const std::size_t dim = heads * rng.range(1, 4);
        Fixture f(dim, heads, AttentionMode::cross, 100 + trial);
        const Tensor x1 = random_normal({rng.range(1, 6), dim}, rng);
        const Tensor x2 = random_normal({rng.range(1, 9), dim}, rng);
        const std::size_t k = x2.rows() + rng.below(3);
        const Tensor sparse = run_attention(f, x1, x2, {k, true});
        const Tensor dense = run_attention(f, x1, x2, {1, false});
        worst = std::max(worst, max_abs_diff(sparse, dense));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("k = 1 selects the value row of the best key") {
    Fixture f(4, 1, AttentionMode::cross, 9);
    Rng rng(4);
    const Tensor x1 = random_normal({3, 4}, rng);
    const Tensor x2 = random_normal({5, 4}, rng);
    AttentionTrace trace;
    const Tensor out = run_attention(f, x1, x2, {1, true}, &trace);

    const Tensor q = matmul(x1, f.store.at("unit.wq").value);
    const Tensor k = matmul(x2, f.store.at("unit.wk").value);
    const Tensor v = matmul(x2, f.store.at("unit.wv").value);
    const Tensor scores = scaled_scores(q, k);
    for (std::size_t r = 0; r < 3; ++r) {
        auto row = scores.row(r);
        const auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
        CHECK(nonzeros(trace.probabilities[0].row(r)) == 1);
        CHECK(trace.probabilities[0].at(r, best) == 1.0);
        Tensor vrow({1, 4});
        std::copy(v.row(best).begin(), v.row(best).end(), vrow.row(0).begin());
        const Tensor expected = matmul(vrow, f.store.at("unit.wo").value);
        for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(r, c) == doctest::Approx(expected[c]).epsilon(1e-12));
    }
}

TEST_CASE("top-k rows keep exactly k probabilities") {
    Fixture f(8, 2, AttentionMode::cross, 21);
    Rng rng(21);
    AttentionTrace trace;
    run_attention(f, random_normal({2, 8}, rng), random_normal({4, 8}, rng), {2, true}, &trace);
    REQUIRE(trace.probabilities.size() == 2);
    for (const auto& p : trace.probabilities) {
        for (std::size_t r = 0; r < 2; ++r) CHECK(nonzeros(p.row(r)) == 2);
    }

    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t keys = rng.range(2, 12), k = rng.range(1, keys - 1);
        Fixture h(6, 3, AttentionMode::cross, 500 + trial);
        run_attention(h, random_normal({rng.range(1, 5), 6}, rng), random_normal({keys, 6}, rng), {k, true}, &trace);
        for (const auto& p : trace.probabilities) {
            for (std::size_t r = 0; r < p.rows(); ++r) {
                CHECK(nonzeros(p.row(r)) == k);
                const double s = std::accumulate(p.row(r).begin(), p.row(r).end(), 0.0);
                CHECK(std::abs(s - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("tied threshold scores are all kept") {
    // Identity query/key projections and a duplicated dominant key: the two
    // copies tie for the top score, so k = 1 keeps both.
    Fixture f(4, 1, AttentionMode::cross, 3);
    f.store.at("unit.wq").value = Tensor::identity(4);
    f.store.at("unit.wk").value = Tensor::identity(4);
    const Tensor x1 = Tensor::matrix({{2, 1, -1, 3}});
    const Tensor x2 = Tensor::matrix({{2, 1, -1, 3}, {2, 1, -1, 3}, {0.1, 0, 0.2, 0}, {-0.3, 0.1, 0, 0.1}});
    AttentionTrace trace;
    run_attention(f, x1, x2, {1, true}, &trace);
    const Tensor& p = trace.probabilities[0];
    CHECK(nonzeros(p.row(0)) == 2);
    CHECK(p.at(0, 0) == 0.5);
    CHECK(p.at(0, 1) == 0.5);
}

TEST_CASE("permuting keys and values together leaves the output unchanged") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Fixture f(8, 2, AttentionMode::cross, 900 + trial);
        const std::size_t keys = rng.range(3, 10);
        const Tensor x1 = random_normal({3, 8}, rng);
        const Tensor x2 = random_normal({keys, 8}, rng);
        std::vector<std::size_t> perm(keys);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = keys - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        Tensor shuffled({keys, 8});
        for (std::size_t i = 0; i < keys; ++i) std::copy(x2.row(perm[i]).begin(), x2.row(perm[i]).end(), shuffled.row(i).begin());
        const SparsityConfig s{rng.range(1, keys), true};
        CHECK(max_abs_diff(run_attention(f, x1, x2, s), run_attention(f, x1, shuffled, s)) < 1e-12);
    }
}

TEST_CASE("padding keys get zero weight") {
    Fixture f(4, 2, AttentionMode::cross, 12);
    Rng rng(12);
    Graph g;
    AttentionTrace trace;
    sparse_attention(g, f.store, f.w, g.constant(random_normal({2, 4}, rng)), g.constant(random_normal({5, 4}, rng)),
                     {2, true}, {false, false, true, true, true}, &trace);
    for (const auto& p : trace.probabilities) {
        for (std::size_t r = 0; r < 2; ++r) {
            CHECK(p.at(r, 0) == 0.0);
            CHECK(p.at(r, 1) == 0.0);
            CHECK(nonzeros(p.row(r)) == 2);
        }
    }
}

TEST_CASE("attention_block") {
    Rng rng(5);
    SUBCASE("zeroed output projections make the block the identity") {
        Fixture f(8, 2, AttentionMode::cross, 1);
        f.w.zero_outputs(f.store);
        const Tensor x1 = random_normal({3, 8}, rng), x2 = random_normal({6, 8}, rng);
        Graph g;
        CHECK(g.value(attention_block(g, f.store, f.w, g.constant(x1), g.constant(x2), {2, true})) == x1);
    }
    SUBCASE("output shape equals query shape") {
        Fixture f(8, 4, AttentionMode::cross, 2);
        for (std::size_t q : {1u, 4u, 7u}) {
            Graph g;
            const Var out = attention_block(g, f.store, f.w, g.constant(random_normal({q, 8}, rng)),
                                            g.constant(random_normal({5, 8}, rng)), {3, true});
            CHECK(g.value(out).shape() == Shape{q, 8});
        }
    }
    SUBCASE("self mode needs a single input") {
        Fixture f(4, 1, AttentionMode::self, 3);
        Graph g;
        CHECK_THROWS_AS(attention_block(g, f.store, f.w, g.constant(Tensor({2, 4})), g.constant(Tensor({2, 4})), {}),
                        ContractError);
    }
    SUBCASE("gradients w.r.t. every block parameter match finite differences") {
        Fixture f(8, 2, AttentionMode::cross, 4);
        const Tensor x1 = random_normal({3, 8}, rng), x2 = random_normal({7, 8}, rng);
        const Tensor proj = random_normal({3, 8}, rng);
        LossFn loss = [&](Graph& g, ParamStore& s) {
            Var out = attention_block(g, s, f.w, g.constant(x1), g.constant(x2), {3, true});
            return sum_all(g, mul(g, out, g.constant(proj)));
        };
        double worst = 0.0;
        for (std::size_t i = 0; i < f.store.at("unit.wq").value.size(); ++i) {
            worst = std::max(worst, finite_diff_check(loss, f.store, "unit.wq", i).rel_error);
        }
        CHECK(worst < 1e-6);
        Rng pick(6);
        for (const auto& r : check_random_params(loss, f.store, 40, pick)) {
            CAPTURE(r.param);
            CHECK(r.rel_error < 1e-6);
        }
    }
}

TEST_CASE("head count must divide the model dimension") {
    ParamStore s;
    Rng rng(0);
    CHECK_THROWS_AS(AttentionWeights::create(s, "bad", 6, 4, AttentionMode::cross, rng), ConfigError);
}
