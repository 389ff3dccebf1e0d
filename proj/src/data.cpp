#include "malt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "malt/binary_io.hpp"
#include "malt/errors.hpp"

namespace malt {

namespace io {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace io

namespace {

constexpr char kStreamMagic[4] = {'M', 'S', 'T', 'R'};
constexpr std::uint32_t kStreamVersion = 1;

}  // namespace

void SyntheticStreamSpec::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("synthetic stream spec: " + what); };
    if (classes < 1) fail("classes >= 1");
    if (input_dim < 1) fail("input_dim >= 1");
    if (segments < 2) fail("segments >= 2 (class identity must live in segment order)");
    if (segment_min < 1 || segment_max < segment_min) fail("1 <= segment_min <= segment_max");
    if (gap_max < gap_min) fail("gap_min <= gap_max");
    if (!(sigma >= 0.0)) fail("sigma >= 0");
    if (length < gap_min + segments * segment_max) {
        fail("stream length " + std::to_string(length) + " cannot hold one action instance (needs " +
             std::to_string(gap_min + segments * segment_max) + " frames)");
    }
}

std::size_t SyntheticStreamSpec::base_vector_count() const { return 1 + (classes + 1) / 2 * segments; }

void to_json(nlohmann::json& j, const SyntheticStreamSpec& s) {
    j = nlohmann::json{{"classes", s.classes},     {"input_dim", s.input_dim},     {"segments", s.segments},
                       {"segment_min", s.segment_min}, {"segment_max", s.segment_max}, {"gap_min", s.gap_min},
                       {"gap_max", s.gap_max},     {"sigma", s.sigma},             {"length", s.length},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticStreamSpec& s) {
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "classes") value.get_to(s.classes);
            else if (key == "input_dim") value.get_to(s.input_dim);
            else if (key == "segments") value.get_to(s.segments);
            else if (key == "segment_min") value.get_to(s.segment_min);
            else if (key == "segment_max") value.get_to(s.segment_max);
            else if (key == "gap_min") value.get_to(s.gap_min);
            else if (key == "gap_max") value.get_to(s.gap_max);
            else if (key == "sigma") value.get_to(s.sigma);
            else if (key == "length") value.get_to(s.length);
            else if (key == "seed") value.get_to(s.seed);
            else throw ConfigError("unknown data spec key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed data spec: ") + e.what());
    }
}

SyntheticTemplates make_templates(const SyntheticStreamSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticTemplates t;
    t.base = random_normal({spec.base_vector_count(), spec.input_dim}, rng);
    for (std::size_t c = 1; c <= spec.classes; ++c) {
        const std::size_t pair = (c - 1) / 2;
        std::vector<std::size_t> segs(spec.segments);
        for (std::size_t i = 0; i < spec.segments; ++i) segs[i] = 1 + pair * spec.segments + i;
        if ((c - 1) % 2 == 1) std::reverse(segs.begin(), segs.end());
        t.class_segments.push_back(std::move(segs));
    }
    return t;
}

LabeledStream generate_stream(const SyntheticStreamSpec& spec, std::size_t index) {
    const SyntheticTemplates tpl = make_templates(spec);
    Rng rng(spec.seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    const std::size_t T = spec.length, d = spec.input_dim;

    LabeledStream s;
    s.classes = spec.classes;
    s.features = Tensor({T, d});
    s.labels.assign(T, 0);
    std::size_t t = 0;
    auto emit = [&](std::size_t base_row, int label, std::size_t count) {
        for (std::size_t i = 0; i < count && t < T; ++i, ++t) {
            auto dst = s.features.row(t);
            auto src = tpl.base.row(base_row);
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] + (spec.sigma > 0.0 ? rng.normal(0.0, spec.sigma) : 0.0);
            s.labels[t] = label;
        }
    };
    while (t < T) {
        emit(0, 0, rng.range(spec.gap_min, spec.gap_max));
        if (t >= T) break;
        const auto c = rng.range(1, spec.classes);
        for (std::size_t seg : tpl.class_segments[c - 1]) {
            emit(seg, int(c), rng.range(spec.segment_min, spec.segment_max));
        }
    }
    return s;
}

std::vector<LabeledStream> generate_streams(const SyntheticStreamSpec& spec, std::size_t count,
                                            std::size_t first_index) {
    std::vector<LabeledStream> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_stream(spec, first_index + i));
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_streams(std::size_t count, double train_fraction,
                                                                           std::uint64_t seed) {
    if (count < 2) throw ContractError("split_streams: need at least 2 streams");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("split_streams: train fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = count - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    auto n_train = std::size_t(std::llround(train_fraction * double(count)));
    n_train = std::clamp<std::size_t>(n_train, 1, count - 1);
    std::vector<std::size_t> train(idx.begin(), idx.begin() + std::ptrdiff_t(n_train));
    std::vector<std::size_t> eval(idx.begin() + std::ptrdiff_t(n_train), idx.end());
    std::sort(train.begin(), train.end());
    std::sort(eval.begin(), eval.end());
    return {train, eval};
}

std::vector<unsigned char> encode_stream(const LabeledStream& stream) {
    if (stream.features.rows() != stream.labels.size()) throw DataError("stream features and labels differ in length");
    io::Writer w;
    w.put_bytes(kStreamMagic, 4);
    w.put<std::uint32_t>(kStreamVersion);
    w.put<std::uint64_t>(stream.labels.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(stream.features.cols()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(stream.classes));
    w.put_bytes(stream.features.data(), stream.features.size() * sizeof(double));
    for (int y : stream.labels) {
        if (y < 0 || std::size_t(y) > stream.classes) throw DataError("label out of range while encoding stream");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(y));
    }
    return std::move(w.bytes());
}

LabeledStream decode_stream(const std::vector<unsigned char>& bytes) {
    io::Reader r(bytes);
    char magic[4];
    r.get_bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kStreamMagic)) throw DataError("not a stream file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kStreamVersion) throw DataError("unsupported stream version " + std::to_string(version));
    const auto T = r.get<std::uint64_t>();
    const auto d = r.get<std::uint32_t>();
    LabeledStream s;
    s.classes = r.get<std::uint32_t>();
    if (T > bytes.size() || d == 0) throw DataError("stream header is inconsistent with file size");
    std::vector<double> data(std::size_t(T) * d);
    r.get_bytes(data.data(), data.size() * sizeof(double));
    s.features = Tensor({std::size_t(T), d}, std::move(data));
    s.labels.resize(std::size_t(T));
    for (auto& y : s.labels) {
        y = r.get<std::uint16_t>();
        if (std::size_t(y) > s.classes) throw DataError("stream label " + std::to_string(y) + " exceeds C");
    }
    if (!r.done()) throw DataError("trailing bytes after stream payload");
    return s;
}

void write_stream(const std::string& path, const LabeledStream& stream) { io::write_file(path, encode_stream(stream)); }

LabeledStream read_stream(const std::string& path) { return decode_stream(io::read_file(path)); }

}  // namespace malt
