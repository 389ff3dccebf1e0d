#include "malt/encoder.hpp"

#include <iostream>
#include <mutex>

#include "malt/errors.hpp"

namespace malt {

namespace {

std::string branch_prefix(std::size_t n) { return "encoder.branch" + std::to_string(n); }

void warn_k_clamped(std::size_t k, std::size_t keys) {
    static std::once_flag once;
    std::call_once(once, [&] {
        std::cerr << "warning: sparse k=" << k << " exceeds long-term memory length " << keys
                  << "; clamped, the top-k mask is dense\n";
    });
}

}  // namespace

EncoderWeights EncoderWeights::create(ParamStore& store, const MaltConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderWeights w;
    w.latent_len = cfg.latent_len;
    for (std::size_t n = 1; n <= cfg.branches; ++n) {
        const std::string base = branch_prefix(n);
        w.lambdas.push_back(base + ".lambda");
        store.add(w.lambdas.back(), random_normal({cfg.latent_len_of_branch(n), cfg.model_dim}, rng, 0.02));
        w.compress_self.push_back(
            AttentionWeights::create(store, base + ".compress.self", cfg.model_dim, cfg.heads, AttentionMode::self, rng));
        w.compress_cross.push_back(AttentionWeights::create(store, base + ".compress.cross", cfg.model_dim, cfg.heads,
                                                            AttentionMode::cross, rng));
        std::vector<AttentionWeights> fuse;
        for (std::size_t p = 2; p <= n; ++p) {
            fuse.push_back(AttentionWeights::create(store, base + ".fuse" + std::to_string(p), cfg.model_dim, cfg.heads,
                                                    AttentionMode::cross, rng));
        }
        w.fuse.push_back(std::move(fuse));
    }
    return w;
}

std::vector<Var> EncoderOutput::features() const {
    std::vector<Var> out;
    out.reserve(stages.size());
    for (const auto& branch : stages) out.push_back(branch.back());
    return out;
}

std::size_t stage_length(std::size_t latent_len, std::size_t n, std::size_t p) {
    if (p < 1 || p > n) throw ContractError("stage_length: stage p must lie in [1, n]");
    return latent_len >> (n - p);
}

Var compress_stage(Graph& g, ParamStore& store, Var lambda, const AttentionWeights& self_unit,
                   const AttentionWeights& cross_unit, Var memory, const SparsityConfig& s,
                   const std::vector<bool>& memory_valid) {
    const std::size_t keys = g.value(memory).rows();
    if (keys < 1) throw ContractError("compress_stage: empty long-term memory");
    SparsityConfig eff = s;
    if (eff.enabled && eff.k > keys) {
        warn_k_clamped(eff.k, keys);
        eff.k = keys;
    }
    Var refined = self_attention_block(g, store, self_unit, lambda, SparsityConfig{});
    return attention_block(g, store, cross_unit, refined, memory, eff, memory_valid);
}

Var fuse_stage(Graph& g, ParamStore& store, const AttentionWeights& unit, Var prev_branch_stage,
               Var this_branch_stage) {
    return attention_block(g, store, unit, prev_branch_stage, this_branch_stage, SparsityConfig{});
}

EncoderOutput run_encoder(Graph& g, ParamStore& store, const EncoderWeights& w, Var memory, const SparsityConfig& s,
                          const std::vector<bool>& memory_valid) {
    if (w.branches() < 1) throw ContractError("run_encoder: N must be >= 1");
    EncoderOutput out;
    out.stages.resize(w.branches());
    auto check = [&](Var v, std::size_t n, std::size_t p) {
        const std::size_t expected = stage_length(w.latent_len, n, p);
        if (g.value(v).rows() != expected) {
            throw DimensionError("encoder shape law broken at f_" + std::to_string(n) + "^" + std::to_string(p) + ": " +
                                 std::to_string(g.value(v).rows()) + " tokens, expected " + std::to_string(expected));
        }
    };
    for (std::size_t n = 1; n <= w.branches(); ++n) {
        auto& stages = out.stages[n - 1];
        Var lambda = g.param(store, w.lambdas[n - 1]);
        stages.push_back(compress_stage(g, store, lambda, w.compress_self[n - 1], w.compress_cross[n - 1], memory, s,
                                        memory_valid));
        check(stages.back(), n, 1);
        for (std::size_t p = 2; p <= n; ++p) {
            const Var query = out.stages[n - 2][p - 2];
            stages.push_back(fuse_stage(g, store, w.fuse[n - 1][p - 2], query, stages.back()));
            check(stages.back(), n, p);
        }
    }
    return out;
}

}  // namespace malt
