#pragma once

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "malt/tensor.hpp"

namespace malt {

// Frames ranked by descending score; equal scores keep frame order (the
// earlier frame ranks higher).
std::vector<std::size_t> rank_frames(std::span<const double> scores);

// Average precision of one binary ranking problem. nullopt when there are no
// positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const bool> positive);

// Calibrated AP: precision at each positive rank is TP / (TP + FP / w) with
// w = #negatives / #positives.
std::optional<double> calibrated_average_precision(std::span<const double> scores, std::span<const bool> positive);

struct MetricReport {
    std::size_t classes = 0;
    std::vector<std::optional<double>> ap;   // index c-1 for action class c
    std::vector<std::optional<double>> cap;
    std::vector<std::size_t> positives;      // frames per action class
    std::vector<std::size_t> excluded;       // action classes with no positive frame
    std::size_t frames = 0;
    double mean_ap = 0.0;
    double mean_cap = 0.0;
    double accuracy = 0.0;                   // argmax over all C+1 classes
};

// scores: T x (C+1); the background column 0 is not averaged into mAP.
MetricReport per_frame_map(const Tensor& scores, const std::vector<int>& labels);

// One record per action class followed by a summary record.
nlohmann::json to_json(const MetricReport& r);

}  // namespace malt
