#include "malt/decoder.hpp"

#include <algorithm>

#include "malt/errors.hpp"

namespace malt {

DecoderWeights DecoderWeights::create(ParamStore& store, const std::string& prefix, const MaltConfig& cfg, Rng& rng) {
    DecoderWeights w;
    w.self = AttentionWeights::create(store, prefix + ".self", cfg.model_dim, cfg.heads, AttentionMode::self, rng);
    w.cross = AttentionWeights::create(store, prefix + ".cross", cfg.model_dim, cfg.heads, AttentionMode::cross, rng);
    return w;
}

std::vector<std::size_t> query_source_frames(std::size_t short_frames, std::size_t latent_len) {
    if (short_frames < 1) throw ContractError("query sampling: empty short-term memory");
    if (latent_len < 1) throw ContractError("query sampling: L must be >= 1");
    std::vector<std::size_t> src(latent_len);
    for (std::size_t j = 0; j < latent_len; ++j) {
        const std::size_t back = (latent_len - 1 - j) * short_frames / latent_len;
        src[j] = short_frames - 1 - back;
    }
    return src;
}

std::vector<std::size_t> frame_to_token(std::size_t short_frames, std::size_t latent_len) {
    const auto src = query_source_frames(short_frames, latent_len);
    std::vector<std::size_t> map(short_frames);
    for (std::size_t f = 0; f < short_frames; ++f) {
        std::size_t best = 0;
        std::size_t best_dist = short_frames + 1;
        for (std::size_t j = 0; j < latent_len; ++j) {
            const std::size_t d = src[j] > f ? src[j] - f : f - src[j];
            if (d <= best_dist) {
                best = j;
                best_dist = d;
            }
        }
        map[f] = best;
    }
    return map;
}

Var init_query_from_short_term(Graph& g, Var embedded_short_term, std::size_t latent_len) {
    const std::size_t frames = g.value(embedded_short_term).rows();
    if (frames < 1) throw ContractError("init_query_from_short_term: empty short-term memory");
    if (frames == latent_len) return embedded_short_term;
    return gather_rows(g, embedded_short_term, query_source_frames(frames, latent_len));
}

DecoderState decode_stage(Graph& g, ParamStore& store, const DecoderWeights& w, const DecoderState& state, Var feature,
                          const SparsityConfig& s) {
    SparsityConfig eff = s;
    eff.k = std::min(s.k, g.value(feature).rows());
    Var refined = self_attention_block(g, store, w.self, state.query, SparsityConfig{});
    Var out = attention_block(g, store, w.cross, refined, feature, eff);
    return {out, state.stage + 1};
}

Var run_decoder(Graph& g, ParamStore& store, const DecoderWeights& w, const std::vector<Var>& features, Var query,
                const SparsityConfig& s) {
    if (features.empty()) throw ContractError("run_decoder: empty feature list");
    const Shape shape = g.value(query).shape();
    DecoderState state{query, 0};
    for (Var f : features) {
        if (g.value(f).cols() != shape[1]) {
            throw DimensionError("run_decoder: feature width " + std::to_string(g.value(f).cols()) +
                                 " differs from query width " + std::to_string(shape[1]));
        }
        state = decode_stage(g, store, w, state, f, s);
        if (g.value(state.query).shape() != shape) throw DimensionError("run_decoder: stage changed the query shape");
    }
    return state.query;
}

}  // namespace malt
