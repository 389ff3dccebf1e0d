#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "malt/tensor.hpp"

namespace malt {

// Every action class is an ordered sequence of `segments` fine segments, each
// a base vector. Classes come in pairs whose templates use the same segment
// set in reversed order, so a single frame says little about which member of
// the pair is running; the order of segments does.
struct SyntheticStreamSpec {
    std::size_t classes = 6;
    std::size_t input_dim = 32;
    std::size_t segments = 3;  // fine segments per action instance (S >= 2)
    std::size_t segment_min = 3;
    std::size_t segment_max = 6;
    std::size_t gap_min = 4;   // background frames between instances
    std::size_t gap_max = 12;
    double sigma = 0.3;
    std::size_t length = 2048;  // frames per stream
    std::uint64_t seed = 7;     // base vectors and templates

    void validate() const;
    std::size_t base_vector_count() const;  // including background
};

void to_json(nlohmann::json& j, const SyntheticStreamSpec& s);
void from_json(const nlohmann::json& j, SyntheticStreamSpec& s);

struct LabeledStream {
    Tensor features;           // T x D_in
    std::vector<int> labels;   // T, in {0..C}
    std::size_t classes = 0;

    std::size_t length() const noexcept { return labels.size(); }
};

// Base vectors and class templates derived from spec.seed.
struct SyntheticTemplates {
    Tensor base;  // rows: 0 = background, 1.. = segment vectors
    std::vector<std::vector<std::size_t>> class_segments;  // [c-1] -> base rows in order
};

SyntheticTemplates make_templates(const SyntheticStreamSpec& spec);

// Stream `index` of the benchmark; instance layout and noise come from a
// per-index generator, templates are shared by all indices.
LabeledStream generate_stream(const SyntheticStreamSpec& spec, std::size_t index = 0);
std::vector<LabeledStream> generate_streams(const SyntheticStreamSpec& spec, std::size_t count,
                                            std::size_t first_index = 0);

// Seeded shuffle, then the first round(fraction * n) indices train.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_streams(std::size_t count, double train_fraction,
                                                                           std::uint64_t seed);

// Binary layout (little-endian): "MSTR", u32 version, u64 T, u32 D_in,
// u32 C, T*D_in f64 row-major, T u16 labels.
void write_stream(const std::string& path, const LabeledStream& stream);
LabeledStream read_stream(const std::string& path);
std::vector<unsigned char> encode_stream(const LabeledStream& stream);
LabeledStream decode_stream(const std::vector<unsigned char>& bytes);

}  // namespace malt
