#pragma once

#include <vector>

#include "malt/attention.hpp"
#include "malt/config.hpp"

namespace malt {

// One self unit and one sparse cross unit, reused at every decoding stage.
struct DecoderWeights {
    AttentionWeights self;
    AttentionWeights cross;

    static DecoderWeights create(ParamStore& store, const std::string& prefix, const MaltConfig& cfg, Rng& rng);
};

struct DecoderState {
    Var query;  // L x D
    std::size_t stage = 0;
};

// Short-term frame index feeding each of the L query tokens. Token L-1 always
// reads the most recent frame; earlier tokens step back by m_s/L frames
// (subsampling when m_s > L, repetition when m_s < L).
std::vector<std::size_t> query_source_frames(std::size_t short_frames, std::size_t latent_len);

// Output token that carries the prediction for each short-term frame: the
// token whose source frame is nearest, later token on ties.
std::vector<std::size_t> frame_to_token(std::size_t short_frames, std::size_t latent_len);

// Picks the L query tokens out of the embedded short-term memory.
Var init_query_from_short_term(Graph& g, Var embedded_short_term, std::size_t latent_len);

// Q' = self(Q); Out_n = cross(Q', f_n). Returns {Out_n, stage + 1}.
DecoderState decode_stage(Graph& g, ParamStore& store, const DecoderWeights& w, const DecoderState& state, Var feature,
                          const SparsityConfig& s);

// Folds decode_stage over features f_1..f_N in order and returns Out_N.
Var run_decoder(Graph& g, ParamStore& store, const DecoderWeights& w, const std::vector<Var>& features, Var query,
                const SparsityConfig& s);

}  // namespace malt
