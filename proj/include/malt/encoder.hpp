#pragma once

#include <vector>

#include "malt/attention.hpp"
#include "malt/config.hpp"

namespace malt {

// Branch n (1-based) owns a latent query bank lambda_n of L/2^(n-1) tokens,
// a compress stage (self unit on lambda, sparse cross unit onto the long-term
// memory) and n-1 dense fuse units that read branch n-1's stage outputs.
struct EncoderWeights {
    std::size_t latent_len = 0;
    std::vector<std::string> lambdas;
    std::vector<AttentionWeights> compress_self;
    std::vector<AttentionWeights> compress_cross;
    std::vector<std::vector<AttentionWeights>> fuse;  // fuse[n-1][p-2] for stage p >= 2

    std::size_t branches() const noexcept { return lambdas.size(); }

    static EncoderWeights create(ParamStore& store, const MaltConfig& cfg, Rng& rng);
};

struct EncoderOutput {
    std::vector<std::vector<Var>> stages;  // stages[n-1][p-1] = f_n^p

    Var feature(std::size_t n) const { return stages.at(n - 1).back(); }
    std::vector<Var> features() const;
};

// Expected token count of f_n^p.
std::size_t stage_length(std::size_t latent_len, std::size_t n, std::size_t p);

// f_n^1: self unit on lambda, then sparse cross unit with queries lambda' and
// keys/values drawn from `memory`. A k larger than the memory length is
// clamped (the mask becomes the identity) with a one-time warning.
Var compress_stage(Graph& g, ParamStore& store, Var lambda, const AttentionWeights& self_unit,
                   const AttentionWeights& cross_unit, Var memory, const SparsityConfig& s,
                   const std::vector<bool>& memory_valid = {});

// f_n^p = CrossAttn(f_{n-1}^{p-1}, f_n^{p-1}), dense.
Var fuse_stage(Graph& g, ParamStore& store, const AttentionWeights& unit, Var prev_branch_stage,
               Var this_branch_stage);

// Runs branch 1 fully, then branch 2, and so on. Every stage's token count is
// checked against stage_length().
EncoderOutput run_encoder(Graph& g, ParamStore& store, const EncoderWeights& w, Var memory, const SparsityConfig& s,
                          const std::vector<bool>& memory_valid = {});

}  // namespace malt
