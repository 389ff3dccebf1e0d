#include "malt/metrics.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

#include "malt/errors.hpp"

namespace malt {

std::vector<std::size_t> rank_frames(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

namespace {

template <typename PrecisionFn>
std::optional<double> ranked_precision_mean(std::span<const double> scores, std::span<const bool> positive,
                                            PrecisionFn precision) {
    if (scores.size() != positive.size()) throw DimensionError("average precision: scores and labels differ in length");
    const auto pos = std::size_t(std::count(positive.begin(), positive.end(), true));
    if (pos == 0) return std::nullopt;
    const std::size_t neg = positive.size() - pos;
    double sum = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t idx : rank_frames(scores)) {
        if (positive[idx]) {
            ++tp;
            sum += precision(tp, fp, pos, neg);
        } else {
            ++fp;
        }
    }
    return sum / double(pos);
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores, std::span<const bool> positive) {
    return ranked_precision_mean(scores, positive, [](std::size_t tp, std::size_t fp, std::size_t, std::size_t) {
        return double(tp) / double(tp + fp);
    });
}

std::optional<double> calibrated_average_precision(std::span<const double> scores, std::span<const bool> positive) {
    return ranked_precision_mean(scores, positive, [](std::size_t tp, std::size_t fp, std::size_t pos, std::size_t neg) {
        if (fp == 0) return 1.0;
        const double w = double(neg) / double(pos);
        return double(tp) / (double(tp) + double(fp) / w);
    });
}

MetricReport per_frame_map(const Tensor& scores, const std::vector<int>& labels) {
    if (scores.rows() != labels.size()) {
        throw DimensionError("per_frame_map: " + std::to_string(scores.rows()) + " score rows for " +
                             std::to_string(labels.size()) + " labels");
    }
    if (scores.cols() < 2) throw DimensionError("per_frame_map: need background plus at least one action column");
    MetricReport r;
    r.classes = scores.cols() - 1;
    r.frames = labels.size();
    for (int y : labels) {
        if (y < 0 || std::size_t(y) > r.classes) throw DataError("per_frame_map: label " + std::to_string(y) + " out of range");
    }
    const std::size_t T = labels.size();
    std::vector<double> column(T);
    std::unique_ptr<bool[]> positive(new bool[T]);
    double ap_sum = 0.0, cap_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 1; c <= r.classes; ++c) {
        std::size_t pos = 0;
        for (std::size_t t = 0; t < T; ++t) {
            column[t] = scores.at(t, c);
            positive[t] = labels[t] == int(c);
            pos += positive[t] ? 1 : 0;
        }
        r.positives.push_back(pos);
        const std::span<const bool> pos_span(positive.get(), T);
        r.ap.push_back(average_precision(column, pos_span));
        r.cap.push_back(calibrated_average_precision(column, pos_span));
        if (!r.ap.back()) {
            r.excluded.push_back(c);
            continue;
        }
        ap_sum += *r.ap.back();
        cap_sum += *r.cap.back();
        ++counted;
    }
    if (counted > 0) {
        r.mean_ap = ap_sum / double(counted);
        r.mean_cap = cap_sum / double(counted);
    }
    std::size_t correct = 0;
    for (std::size_t t = 0; t < T; ++t) {
        auto row = scores.row(t);
        const auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
        correct += best == std::size_t(labels[t]) ? 1 : 0;
    }
    r.accuracy = T ? double(correct) / double(T) : 0.0;
    return r;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json records = nlohmann::json::array();
    for (std::size_t c = 1; c <= r.classes; ++c) {
        nlohmann::json rec{{"record", "class"}, {"class", c}, {"positives", r.positives[c - 1]}};
        rec["ap"] = r.ap[c - 1] ? nlohmann::json(*r.ap[c - 1]) : nlohmann::json(nullptr);
        rec["cap"] = r.cap[c - 1] ? nlohmann::json(*r.cap[c - 1]) : nlohmann::json(nullptr);
        records.push_back(rec);
    }
    records.push_back({{"record", "summary"},
                       {"frames", r.frames},
                       {"mAP", r.mean_ap},
                       {"mcAP", r.mean_cap},
                       {"accuracy", r.accuracy},
                       {"excluded_classes", r.excluded}});
    return records;
}

}  // namespace malt
