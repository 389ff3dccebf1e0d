#pragma once

#include <functional>
#include <vector>

#include "malt/data.hpp"
#include "malt/metrics.hpp"
#include "malt/model.hpp"

namespace malt {

// Window whose current frame is `end`, built through the causality guard.
MemoryWindow stream_window(const LabeledStream& stream, std::size_t end, const MaltConfig& cfg);
// Labels of the m_s frames ending at `end`; positions before the stream start are background.
std::vector<int> window_labels(const LabeledStream& stream, std::size_t end, std::size_t short_frames);

struct BatchLog {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    LossBreakdown loss;  // mean over the batch
    // |total - (alpha * main + beta * sum aux)| for this batch.
    double identity_gap = 0.0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double mean_main = 0.0;
};

class Trainer {
public:
    Trainer(MaltModel& model, std::uint64_t seed);

    // One epoch of config.windows_per_epoch windows sampled uniformly over
    // streams and end frames, in batches of config.batch_size.
    EpochLog run_epoch(const std::vector<LabeledStream>& streams);

    std::function<void(const BatchLog&)> on_batch;

    std::size_t epoch() const noexcept { return epoch_; }
    std::uint64_t step() const noexcept { return step_; }
    Rng& rng() noexcept { return rng_; }
    const Rng& rng() const noexcept { return rng_; }
    void restore(std::size_t epoch, std::uint64_t step, std::uint64_t rng_state);

private:
    MaltModel& model_;
    Rng rng_;
    std::size_t epoch_ = 0;
    std::uint64_t step_ = 0;
};

enum class EvalProtocol {
    chunked,  // windows every m_s frames, each scoring all of its m_s frames
    online,   // one window per frame, scored by its last output token
};

// T x (C+1) frame scores for one stream.
Tensor score_stream(MaltModel& model, const LabeledStream& stream, EvalProtocol protocol);

// Scores of every stream concatenated, then the per-frame protocol. With
// stride s > 1 (online only) frames t = 0, s, 2s, ... of each stream are scored.
MetricReport evaluate(MaltModel& model, const std::vector<LabeledStream>& streams, EvalProtocol protocol,
                      std::size_t stride = 1);

}  // namespace malt
