#include "malt/train.hpp"

#include <cmath>

#include "malt/errors.hpp"

namespace malt {

MemoryWindow stream_window(const LabeledStream& stream, std::size_t end, const MaltConfig& cfg) {
    if (stream.features.cols() != cfg.input_dim) {
        throw DimensionError("stream feature width " + std::to_string(stream.features.cols()) +
                             " does not match model D_in " + std::to_string(cfg.input_dim));
    }
    return partition_memory(CausalFrameSource(stream.features, end), cfg.short_frames, cfg.long_frames);
}

std::vector<int> window_labels(const LabeledStream& stream, std::size_t end, std::size_t short_frames) {
    std::vector<int> labels(short_frames, 0);
    for (std::size_t i = 0; i < short_frames; ++i) {
        const std::size_t back = short_frames - 1 - i;
        if (back <= end) labels[i] = stream.labels.at(end - back);
    }
    return labels;
}

Trainer::Trainer(MaltModel& model, std::uint64_t seed) : model_(model), rng_(seed) {}

void Trainer::restore(std::size_t epoch, std::uint64_t step, std::uint64_t rng_state) {
    epoch_ = epoch;
    step_ = step;
    rng_.set_state(rng_state);
}

EpochLog Trainer::run_epoch(const std::vector<LabeledStream>& streams) {
    if (streams.empty()) throw ContractError("train: no training streams");
    const MaltConfig& cfg = model_.config();
    for (const auto& s : streams) {
        if (s.length() < cfg.short_frames) throw DataError("train: stream shorter than m_s");
        if (s.classes != cfg.classes) {
            throw DimensionError("train: stream has C=" + std::to_string(s.classes) + ", model has C=" +
                                 std::to_string(cfg.classes));
        }
    }
    ++epoch_;
    EpochLog log;
    log.epoch = epoch_;
    std::size_t done = 0;
    double loss_sum = 0.0, main_sum = 0.0;
    ParamStore& params = model_.params();
    params.zero_grad();
    while (done < cfg.windows_per_epoch) {
        const std::size_t batch = std::min(cfg.batch_size, cfg.windows_per_epoch - done);
        BatchLog b;
        b.epoch = epoch_;
        b.loss.aux.assign(cfg.branches, 0.0);
        for (std::size_t i = 0; i < batch; ++i) {
            const auto& s = streams[rng_.below(streams.size())];
            const std::size_t end = rng_.range(cfg.short_frames - 1, s.length() - 1);
            Graph g;
            LossResult r = model_.loss(g, stream_window(s, end, cfg), window_labels(s, end, cfg.short_frames));
            g.backward(r.total);
            b.loss.main += r.breakdown.main;
            b.loss.total += r.breakdown.total;
            for (std::size_t n = 0; n < cfg.branches; ++n) b.loss.aux[n] += r.breakdown.aux[n];
        }
        const double inv = 1.0 / double(batch);
        b.loss.main *= inv;
        b.loss.total *= inv;
        double combined = cfg.alpha * b.loss.main;
        for (double& a : b.loss.aux) {
            a *= inv;
            combined += cfg.beta * a;
        }
        b.identity_gap = std::abs(b.loss.total - combined);
        params.scale_grad(inv);
        adam_step(params, AdamConfig{.lr = cfg.lr}, ++step_);
        b.step = step_;
        if (on_batch) on_batch(b);
        loss_sum += b.loss.total * double(batch);
        main_sum += b.loss.main * double(batch);
        done += batch;
    }
    log.mean_loss = loss_sum / double(done);
    log.mean_main = main_sum / double(done);
    return log;
}

Tensor score_stream(MaltModel& model, const LabeledStream& stream, EvalProtocol protocol) {
    const MaltConfig& cfg = model.config();
    const std::size_t T = stream.length();
    const std::size_t out = cfg.classes + 1;
    if (T == 0) throw ContractError("score_stream: empty stream");
    Tensor scores({T, out});
    auto copy_row = [&](const Tensor& probs, std::size_t from_row, std::size_t to_frame) {
        auto src = probs.row(from_row);
        std::copy(src.begin(), src.end(), scores.row(to_frame).begin());
    };
    if (protocol == EvalProtocol::online) {
        for (std::size_t t = 0; t < T; ++t) {
            copy_row(model.predict(stream_window(stream, t, cfg)), cfg.short_frames - 1, t);
        }
        return scores;
    }
    const std::size_t ms = cfg.short_frames;
    std::size_t covered = 0;  // frames [0, covered) already scored
    while (covered < T) {
        const std::size_t end = std::min(covered + ms - 1, T - 1);
        const Tensor probs = model.predict(stream_window(stream, end, cfg));
        for (std::size_t f = covered; f <= end; ++f) {
            const std::size_t back = end - f;
            copy_row(probs, ms - 1 - back, f);
        }
        covered = end + 1;
    }
    return scores;
}

MetricReport evaluate(MaltModel& model, const std::vector<LabeledStream>& streams, EvalProtocol protocol,
                      std::size_t stride) {
    if (streams.empty()) throw ContractError("evaluate: no streams");
    if (stride == 0) throw ConfigError("evaluate: stride must be >= 1");
    if (stride > 1 && protocol != EvalProtocol::online) throw ConfigError("evaluate: a frame stride needs the online protocol");
    const MaltConfig& cfg = model.config();
    std::size_t total = 0;
    for (const auto& s : streams) {
        if (s.classes != cfg.classes) {
            throw DimensionError("evaluate: data has C=" + std::to_string(s.classes) + ", checkpoint has C=" +
                                 std::to_string(cfg.classes));
        }
        total += (s.length() + stride - 1) / stride;
    }
    Tensor all({total, cfg.classes + 1});
    std::vector<int> labels;
    labels.reserve(total);
    for (const auto& s : streams) {
        if (stride == 1) {
            const Tensor sc = score_stream(model, s, protocol);
            std::copy(sc.values().begin(), sc.values().end(),
                      all.values().begin() + std::ptrdiff_t(labels.size() * sc.cols()));
            labels.insert(labels.end(), s.labels.begin(), s.labels.end());
            continue;
        }
        for (std::size_t t = 0; t < s.length(); t += stride) {
            const Tensor probs = model.predict(stream_window(s, t, cfg));
            const auto row = probs.row(cfg.short_frames - 1);
            std::copy(row.begin(), row.end(), all.row(labels.size()).begin());
            labels.push_back(s.labels[t]);
        }
    }
    return per_frame_map(all, labels);
}

}  // namespace malt
