#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "malt/autodiff.hpp"

namespace malt {

enum class AttentionMode { self, cross };

struct SparsityConfig {
    std::size_t k = 1;  // entries kept per score row
    bool enabled = false;
};

// Names of one pre-norm transformer unit's parameters inside a ParamStore:
//   <prefix>.wq .wk .wv .wo   D x D projections (.bo output bias)
//   <prefix>.ln_q.*           norm applied to the query stream
//   <prefix>.ln_kv.*          norm applied to keys/values (cross mode only)
//   <prefix>.ln_ff.*, .ff1.*, .ff2.*  feed-forward sublayer, D -> 4D -> D
struct AttentionWeights {
    std::string prefix;
    std::size_t dim = 0;
    std::size_t heads = 1;
    AttentionMode mode = AttentionMode::cross;

    std::string name(const std::string& leaf) const { return prefix + "." + leaf; }

    // Registers the unit's parameters. Projections use N(0, 1/fan_in).
    static AttentionWeights create(ParamStore& store, std::string prefix, std::size_t dim, std::size_t heads,
                                   AttentionMode mode, Rng& rng);
    // Zeroes the output projection and the second feed-forward layer, which
    // turns the unit into the identity map on its query input.
    void zero_outputs(ParamStore& store) const;
};

// Post-softmax attention maps per head, recorded when a trace is supplied.
struct AttentionTrace {
    std::vector<Tensor> probabilities;
};

// q K^T / sqrt(q.cols()).
Tensor scaled_scores(const Tensor& q, const Tensor& keys);
Var scaled_scores(Graph& g, Var q, Var keys);

// Multi-head attention: per head softmax(topk(mask(Q K^T / sqrt(D_head)))) V,
// heads concatenated and output-projected. Inputs are used as given (no norm).
// key_valid, when non-empty, marks padding keys that must get zero weight.
Var sparse_attention(Graph& g, ParamStore& store, const AttentionWeights& w, Var x1, Var x2, const SparsityConfig& s,
                     const std::vector<bool>& key_valid = {}, AttentionTrace* trace = nullptr);

// Pre-norm residual unit: h = x1 + Attn(LN(x1), LN(x2)); out = h + FFN(LN(h)).
// In self mode x2 is ignored and the normalized x1 serves as keys and values.
Var attention_block(Graph& g, ParamStore& store, const AttentionWeights& w, Var x1, Var x2, const SparsityConfig& s,
                    const std::vector<bool>& key_valid = {}, AttentionTrace* trace = nullptr);
Var self_attention_block(Graph& g, ParamStore& store, const AttentionWeights& w, Var x, const SparsityConfig& s);

// Sinusoidal encoding of an age (frames before the current one).
Tensor positional_encoding(const std::vector<std::size_t>& ages, std::size_t dim);

}  // namespace malt
