#include "malt/attention.hpp"

#include <cmath>

#include "malt/errors.hpp"

namespace malt {

namespace {

constexpr double kNormEps = 1e-5;

void add_norm(ParamStore& store, const std::string& base, std::size_t dim) {
    store.add(base + ".gain", Tensor({1, dim}, 1.0));
    store.add(base + ".bias", Tensor({1, dim}));
}

Var norm(Graph& g, ParamStore& store, const std::string& base, Var x) {
    return layer_norm(g, x, g.param(store, base + ".gain"), g.param(store, base + ".bias"), kNormEps);
}

Var feed_forward(Graph& g, ParamStore& store, const AttentionWeights& w, Var x) {
    Var h = add_row(g, matmul(g, x, g.param(store, w.name("ff1.w"))), g.param(store, w.name("ff1.b")));
    h = gelu(g, h);
    return add_row(g, matmul(g, h, g.param(store, w.name("ff2.w"))), g.param(store, w.name("ff2.b")));
}

}  // namespace

AttentionWeights AttentionWeights::create(ParamStore& store, std::string prefix, std::size_t dim, std::size_t heads,
                                          AttentionMode mode, Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("attention: head count " + std::to_string(heads) + " must divide model dim " +
                          std::to_string(dim));
    }
    AttentionWeights w{std::move(prefix), dim, heads, mode};
    const double proj_std = 1.0 / std::sqrt(double(dim));
    for (const char* leaf : {"wq", "wk", "wv", "wo"}) store.add(w.name(leaf), random_normal({dim, dim}, rng, proj_std));
    store.add(w.name("bo"), Tensor({1, dim}));
    add_norm(store, w.name("ln_q"), dim);
    if (mode == AttentionMode::cross) add_norm(store, w.name("ln_kv"), dim);
    add_norm(store, w.name("ln_ff"), dim);
    store.add(w.name("ff1.w"), random_normal({dim, 4 * dim}, rng, proj_std));
    store.add(w.name("ff1.b"), Tensor({1, 4 * dim}));
    store.add(w.name("ff2.w"), random_normal({4 * dim, dim}, rng, 1.0 / std::sqrt(double(4 * dim))));
    store.add(w.name("ff2.b"), Tensor({1, dim}));
    return w;
}

void AttentionWeights::zero_outputs(ParamStore& store) const {
    for (const char* leaf : {"wo", "bo", "ff2.w", "ff2.b"}) store.at(name(leaf)).value.fill(0.0);
}

Tensor scaled_scores(const Tensor& q, const Tensor& keys) {
    if (q.cols() != keys.cols()) {
        throw DimensionError("scaled_scores: query " + shape_str(q.shape()) + " and keys " + shape_str(keys.shape()) +
                             " differ in width");
    }
    Tensor a = matmul_nt(q, keys);
    const double inv = 1.0 / std::sqrt(double(q.cols()));
    for (double& v : a.values()) v *= inv;
    return a;
}

Var scaled_scores(Graph& g, Var q, Var keys) {
    const std::size_t d = g.value(q).cols();
    if (d != g.value(keys).cols()) {
        throw DimensionError("scaled_scores: query " + shape_str(g.value(q).shape()) + " and keys " +
                             shape_str(g.value(keys).shape()) + " differ in width");
    }
    return scale(g, matmul_nt(g, q, keys), 1.0 / std::sqrt(double(d)));
}

Var sparse_attention(Graph& g, ParamStore& store, const AttentionWeights& w, Var x1, Var x2, const SparsityConfig& s,
                     const std::vector<bool>& key_valid, AttentionTrace* trace) {
    if (g.value(x1).cols() != w.dim || g.value(x2).cols() != w.dim) {
        throw DimensionError("attention '" + w.prefix + "': inputs " + shape_str(g.value(x1).shape()) + " / " +
                             shape_str(g.value(x2).shape()) + " do not have width " + std::to_string(w.dim));
    }
    if (s.enabled && s.k < 1) throw ConfigError("attention: sparsity k must be >= 1");
    const std::size_t keys = g.value(x2).rows();
    const bool apply_topk = s.enabled && s.k < keys;

    Var q = matmul(g, x1, g.param(store, w.name("wq")));
    Var k = matmul(g, x2, g.param(store, w.name("wk")));
    Var v = matmul(g, x2, g.param(store, w.name("wv")));

    if (trace) trace->probabilities.clear();
    const std::size_t dh = w.dim / w.heads;
    std::vector<Var> head_outputs;
    head_outputs.reserve(w.heads);
    for (std::size_t h = 0; h < w.heads; ++h) {
        Var qh = w.heads == 1 ? q : slice_cols(g, q, h * dh, dh);
        Var kh = w.heads == 1 ? k : slice_cols(g, k, h * dh, dh);
        Var vh = w.heads == 1 ? v : slice_cols(g, v, h * dh, dh);
        Var scores = scaled_scores(g, qh, kh);
        if (!key_valid.empty()) scores = mask_keys(g, scores, key_valid);
        if (apply_topk) scores = topk_mask(g, scores, s.k);
        Var probs = softmax_rows(g, scores);
        if (trace) trace->probabilities.push_back(g.value(probs));
        head_outputs.push_back(matmul(g, probs, vh));
    }
    Var merged = w.heads == 1 ? head_outputs.front() : concat_cols(g, head_outputs);
    return add_row(g, matmul(g, merged, g.param(store, w.name("wo"))), g.param(store, w.name("bo")));
}

Var attention_block(Graph& g, ParamStore& store, const AttentionWeights& w, Var x1, Var x2, const SparsityConfig& s,
                    const std::vector<bool>& key_valid, AttentionTrace* trace) {
    if (w.mode == AttentionMode::self && x1.id != x2.id) {
        throw ContractError("self-attention unit '" + w.prefix + "' called with distinct query and key inputs");
    }
    Var q_in = norm(g, store, w.name("ln_q"), x1);
    Var kv_in = w.mode == AttentionMode::self ? q_in : norm(g, store, w.name("ln_kv"), x2);
    Var h = add(g, x1, sparse_attention(g, store, w, q_in, kv_in, s, key_valid, trace));
    return add(g, h, feed_forward(g, store, w, norm(g, store, w.name("ln_ff"), h)));
}

Var self_attention_block(Graph& g, ParamStore& store, const AttentionWeights& w, Var x, const SparsityConfig& s) {
    if (w.mode != AttentionMode::self) throw ContractError("'" + w.prefix + "' is not a self-attention unit");
    return attention_block(g, store, w, x, x, s);
}

Tensor positional_encoding(const std::vector<std::size_t>& ages, std::size_t dim) {
    Tensor pe({ages.size(), dim});
    for (std::size_t r = 0; r < ages.size(); ++r) {
        for (std::size_t i = 0; i < dim; i += 2) {
            const double freq = std::pow(10000.0, -double(i) / double(dim));
            pe.at(r, i) = std::sin(double(ages[r]) * freq);
            if (i + 1 < dim) pe.at(r, i + 1) = std::cos(double(ages[r]) * freq);
        }
    }
    return pe;
}

}  // namespace malt
