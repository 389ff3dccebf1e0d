#include "malt/model.hpp"

#include <algorithm>
#include <cmath>

#include "malt/errors.hpp"

namespace malt {

CausalFrameSource::CausalFrameSource(const Tensor& features, std::size_t horizon)
    : features_(features), horizon_(horizon) {
    if (features.rows() == 0 || features.size() == 0) throw ContractError("partition_memory: empty stream");
    if (horizon >= features.rows()) throw ContractError("causal source: horizon beyond the end of the stream");
}

std::span<const double> CausalFrameSource::frame(std::size_t index) const {
    if (index > horizon_) {
        throw ContractError("causality guard: frame " + std::to_string(index) + " read at horizon " +
                            std::to_string(horizon_));
    }
    max_read_ = std::max(max_read_, index);
    return features_.row(index);
}

MemoryWindow partition_memory(const CausalFrameSource& source, std::size_t short_frames, std::size_t long_frames) {
    const std::size_t T = source.horizon() + 1;
    const std::size_t d = source.width();
    MemoryWindow w;
    w.short_term = Tensor({short_frames, d});
    w.long_term = Tensor({long_frames, d});
    w.short_valid.assign(short_frames, false);
    w.long_valid.assign(long_frames, false);
    // Slot s (0 = oldest) of the m_l + m_s span holds frame T - span + s.
    const std::size_t span = short_frames + long_frames;
    for (std::size_t s = 0; s < span; ++s) {
        if (s + T < span) continue;
        const bool is_long = s < long_frames;
        const std::size_t row = is_long ? s : s - long_frames;
        auto from = source.frame(s + T - span);
        std::copy(from.begin(), from.end(), (is_long ? w.long_term : w.short_term).row(row).begin());
        (is_long ? w.long_valid : w.short_valid)[row] = true;
    }
    return w;
}

MemoryWindow partition_memory(const Tensor& stream, std::size_t short_frames, std::size_t long_frames) {
    if (stream.rows() == 0 || stream.size() == 0) throw ContractError("partition_memory: empty stream");
    return partition_memory(CausalFrameSource(stream, stream.rows() - 1), short_frames, long_frames);
}

ParameterCount parameter_count(const ParamStore& params) {
    ParameterCount pc;
    for (const auto& [name, e] : params) {
        const std::string module = name.substr(0, name.find('.'));
        pc.per_module[module] += e.value.size();
        pc.total += e.value.size();
    }
    return pc;
}

Var main_loss(Graph& g, Var logits, const std::vector<int>& labels, std::size_t classes) {
    for (int y : labels) {
        if (y < 0 || std::size_t(y) > classes) {
            throw DataError("label " + std::to_string(y) + " outside {0.." + std::to_string(classes) + "}");
        }
    }
    return cross_entropy(g, logits, labels);
}

MaltModel::MaltModel(const MaltConfig& config) : config_(config) {
    config_.validate();
    const std::size_t ms = config_.short_frames, ml = config_.long_frames;
    std::vector<std::size_t> short_ages(ms), long_ages(ml);
    for (std::size_t i = 0; i < ms; ++i) short_ages[i] = ms - 1 - i;
    for (std::size_t j = 0; j < ml; ++j) long_ages[j] = ms + ml - 1 - j;
    short_pe_ = positional_encoding(short_ages, config_.model_dim);
    long_pe_ = positional_encoding(long_ages, config_.model_dim);
    Rng rng(config_.seed);
    const std::size_t D = config_.model_dim;
    params_.add("embed.w", random_normal({config_.input_dim, D}, rng, 1.0 / std::sqrt(double(config_.input_dim))));
    params_.add("embed.b", Tensor({1, D}));
    encoder_ = EncoderWeights::create(params_, config_, rng);
    if (config_.fusion == FusionMode::cascade) {
        for (std::size_t n = 1; n <= config_.branches; ++n) {
            decoder_.push_back(DecoderWeights::create(params_, "decoder.stage" + std::to_string(n), config_, rng));
        }
    } else {
        decoder_.push_back(DecoderWeights::create(params_, "decoder", config_, rng));
    }
    const std::size_t out = config_.classes + 1;
    params_.add("classifier.head.norm.gain", Tensor({1, D}, 1.0));
    params_.add("classifier.head.norm.bias", Tensor({1, D}));
    params_.add("classifier.head.w", random_normal({D, out}, rng, 0.02));
    params_.add("classifier.head.b", Tensor({1, out}));
    for (std::size_t n = 1; n <= config_.branches; ++n) {
        const std::string base = "classifier.aux" + std::to_string(n);
        params_.add(base + ".w", random_normal({D, out}, rng, 0.02));
        params_.add(base + ".b", Tensor({1, out}));
    }
    frame_token_ = frame_to_token(config_.short_frames, config_.latent_len);
}

Var MaltModel::embed(Graph& g, const Tensor& frames, const Tensor& pe) {
    if (frames.cols() != config_.input_dim) {
        throw DimensionError("input feature width " + std::to_string(frames.cols()) + " does not match D_in " +
                             std::to_string(config_.input_dim));
    }
    Var x = matmul(g, g.constant(frames), g.param(params_, "embed.w"));
    x = add_row(g, x, g.param(params_, "embed.b"));
    return add(g, x, g.constant(pe));
}

ForwardResult MaltModel::forward(Graph& g, const MemoryWindow& window) {
    const std::size_t ms = config_.short_frames, ml = config_.long_frames;
    if (window.short_term.rows() != ms || window.long_term.rows() != ml) {
        throw DimensionError("memory window " + shape_str(window.short_term.shape()) + " / " +
                             shape_str(window.long_term.shape()) + " does not match m_s=" + std::to_string(ms) +
                             ", m_l=" + std::to_string(ml));
    }
    Var short_mem = embed(g, window.short_term, short_pe_);
    Var long_mem = embed(g, window.long_term, long_pe_);

    // With no valid long-term frame at all (stream start) the padding rows
    // are attended rather than leaving every score row empty.
    const auto valid_count = std::count(window.long_valid.begin(), window.long_valid.end(), true);
    std::vector<bool> key_valid;
    if (valid_count > 0 && std::size_t(valid_count) < ml) key_valid = window.long_valid;

    const SparsityConfig sparsity{config_.topk, config_.sparse};
    ForwardResult r;
    r.encoder = run_encoder(g, params_, encoder_, long_mem, sparsity, key_valid);
    r.features = r.encoder.features();

    Var query = init_query_from_short_term(g, short_mem, config_.latent_len);
    switch (config_.fusion) {
        case FusionMode::recurrent:
            r.decoded = run_decoder(g, params_, decoder_.front(), r.features, query, sparsity);
            break;
        case FusionMode::cascade: {
            DecoderState state{query, 0};
            for (std::size_t n = 0; n < r.features.size(); ++n) {
                state = decode_stage(g, params_, decoder_[n], state, r.features[n], sparsity);
            }
            r.decoded = state.query;
            break;
        }
        case FusionMode::add: {
            Var sum = r.features.front();
            for (std::size_t n = 1; n < r.features.size(); ++n) sum = add(g, sum, r.features[n]);
            r.decoded = decode_stage(g, params_, decoder_.front(), DecoderState{query, 0}, sum, sparsity).query;
            break;
        }
    }

    Var h = layer_norm(g, r.decoded, g.param(params_, "classifier.head.norm.gain"),
                       g.param(params_, "classifier.head.norm.bias"), 1e-5);
    Var token_logits = add_row(g, matmul(g, h, g.param(params_, "classifier.head.w")),
                               g.param(params_, "classifier.head.b"));
    r.logits = config_.latent_len == ms ? token_logits : gather_rows(g, token_logits, frame_token_);
    return r;
}

std::vector<Var> MaltModel::aux_losses(Graph& g, const std::vector<Var>& features, int current_label) {
    std::vector<Var> out;
    out.reserve(features.size());
    for (std::size_t n = 0; n < features.size(); ++n) {
        const std::string base = "classifier.aux" + std::to_string(n + 1);
        Var pooled = mean_rows(g, features[n]);
        Var logits = add_row(g, matmul(g, pooled, g.param(params_, base + ".w")), g.param(params_, base + ".b"));
        out.push_back(main_loss(g, logits, {current_label}, config_.classes));
    }
    return out;
}

LossResult MaltModel::loss(Graph& g, const MemoryWindow& window, const std::vector<int>& labels) {
    if (labels.size() != config_.short_frames) {
        throw ContractError("loss: expected " + std::to_string(config_.short_frames) + " labels, got " +
                            std::to_string(labels.size()));
    }
    LossResult r;
    r.forward = forward(g, window);
    r.main = main_loss(g, r.forward.logits, labels, config_.classes);
    r.aux = aux_losses(g, r.forward.features, labels.back());

    std::vector<Var> terms{r.main};
    std::vector<double> weights{config_.alpha};
    for (Var a : r.aux) {
        terms.push_back(a);
        weights.push_back(config_.beta);
    }
    r.total = weighted_sum(g, terms, weights);

    r.breakdown.main = g.value(r.main).item();
    for (Var a : r.aux) r.breakdown.aux.push_back(g.value(a).item());
    r.breakdown.total = g.value(r.total).item();
    return r;
}

Tensor MaltModel::predict(const MemoryWindow& window) {
    Graph g;
    return softmax_rows(g.value(forward(g, window).logits));
}

}  // namespace malt
