#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "malt/config.hpp"
#include "malt/decoder.hpp"
#include "malt/encoder.hpp"

namespace malt {

// Short- and long-term memories for the current frame (the last frame of the
// stream). Positions before the start of the stream are zero rows with
// their validity flag cleared.
struct MemoryWindow {
    Tensor short_term;              // m_s x D_in, oldest first
    Tensor long_term;               // m_l x D_in, oldest first
    std::vector<bool> short_valid;  // m_s
    std::vector<bool> long_valid;   // m_l
};

// Read-only view of a stream that refuses to hand out any frame after the
// horizon t. Every window the model sees is built through one.
class CausalFrameSource {
public:
    CausalFrameSource(const Tensor& features, std::size_t horizon);

    std::span<const double> frame(std::size_t index) const;
    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t width() const noexcept { return features_.cols(); }
    // Highest frame index handed out so far.
    std::size_t max_index_read() const noexcept { return max_read_; }

private:
    const Tensor& features_;
    std::size_t horizon_;
    mutable std::size_t max_read_ = 0;
};

// M_S = the last m_s frames up to the horizon, M_L = the m_l frames before them.
MemoryWindow partition_memory(const CausalFrameSource& source, std::size_t short_frames, std::size_t long_frames);
MemoryWindow partition_memory(const Tensor& stream, std::size_t short_frames, std::size_t long_frames);

struct LossBreakdown {
    double main = 0.0;
    std::vector<double> aux;
    double total = 0.0;
};

struct ForwardResult {
    Var logits;                 // m_s x (C+1), row i classifies frame -m_s+1+i
    std::vector<Var> features;  // f_1..f_N
    EncoderOutput encoder;
    Var decoded;                // L x D decoder output
};

struct LossResult {
    Var total;
    Var main;
    std::vector<Var> aux;
    LossBreakdown breakdown;
    ForwardResult forward;
};

struct ParameterCount {
    std::map<std::string, std::size_t> per_module;  // embed, encoder, decoder, classifier
    std::size_t total = 0;
};

ParameterCount parameter_count(const ParamStore& params);

// Mean cross-entropy over the short-term frames.
Var main_loss(Graph& g, Var logits, const std::vector<int>& labels, std::size_t classes);

class MaltModel {
public:
    // Validates the config and draws all initial weights from config.seed.
    explicit MaltModel(const MaltConfig& config);

    const MaltConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }
    const EncoderWeights& encoder() const noexcept { return encoder_; }
    const std::vector<DecoderWeights>& decoder() const noexcept { return decoder_; }

    // Linear map to D plus the positional encoding `pe` (one row per frame).
    Var embed(Graph& g, const Tensor& frames, const Tensor& pe);
    ForwardResult forward(Graph& g, const MemoryWindow& window);

    // Per-branch aux losses: mean-pool f_n, linear classifier, cross-entropy
    // against the current-frame label.
    std::vector<Var> aux_losses(Graph& g, const std::vector<Var>& features, int current_label);

    // total = alpha * main + sum_n beta * aux_n.
    LossResult loss(Graph& g, const MemoryWindow& window, const std::vector<int>& labels);

    // Softmax scores per short-term frame, m_s x (C+1).
    Tensor predict(const MemoryWindow& window);

private:
    MaltConfig config_;
    ParamStore params_;
    EncoderWeights encoder_;
    std::vector<DecoderWeights> decoder_;  // one entry unless fusion == cascade
    std::vector<std::size_t> frame_token_;
    Tensor short_pe_, long_pe_;  // encodings of the fixed frame ages
};

}  // namespace malt
