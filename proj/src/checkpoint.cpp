#include "malt/checkpoint.hpp"

#include <algorithm>

#include "malt/binary_io.hpp"
#include "malt/errors.hpp"

namespace malt {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'L', 'T'};
const std::string kMoment1 = "adam_m/";
const std::string kMoment2 = "adam_v/";

void put_tensor(io::Writer& w, const std::string& name, const Tensor& t) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.put_bytes(t.data(), t.size() * sizeof(double));
}

Tensor get_tensor(io::Reader& r, std::size_t budget) {
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = r.get<std::uint64_t>();
        n *= d;
        if (n > budget) throw DataError("checkpoint: tensor larger than the file");
    }
    std::vector<double> data(n);
    r.get_bytes(data.data(), n * sizeof(double));
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
    io::Writer w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(Checkpoint::kVersion);
    w.put_string(nlohmann::json(ckpt.config).dump());
    w.put<std::uint64_t>(ckpt.rng_state);
    w.put<std::uint64_t>(ckpt.epoch);
    w.put<std::uint64_t>(ckpt.adam_step);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(3 * ckpt.params.entries()));
    for (const auto& [name, e] : ckpt.params) {
        put_tensor(w, name, e.value);
        put_tensor(w, kMoment1 + name, e.m);
        put_tensor(w, kMoment2 + name, e.v);
    }
    return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    io::Reader r(bytes);
    char magic[4];
    r.get_bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw DataError("not a MALT checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != Checkpoint::kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    try {
        nlohmann::json::parse(r.get_string()).get_to(c.config);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed config record: ") + e.what());
    }
    c.rng_state = r.get<std::uint64_t>();
    c.epoch = r.get<std::uint64_t>();
    c.adam_step = r.get<std::uint64_t>();
    const auto records = r.get<std::uint32_t>();
    const std::size_t budget = bytes.size() / sizeof(double);
    for (std::uint32_t i = 0; i < records; ++i) {
        const std::string name = r.get_string();
        Tensor t = get_tensor(r, budget);
        if (name.rfind(kMoment1, 0) == 0 || name.rfind(kMoment2, 0) == 0) {
            const bool first = name.rfind(kMoment1, 0) == 0;
            const std::string param = name.substr((first ? kMoment1 : kMoment2).size());
            ParamEntry& e = c.params.at(param);
            if (!t.same_shape(e.value)) throw DataError("checkpoint: moment shape mismatch for '" + param + "'");
            (first ? e.m : e.v) = std::move(t);
        } else {
            c.params.add(name, std::move(t));
        }
    }
    if (!r.done()) throw DataError("checkpoint: trailing bytes");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { io::write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

void restore_params(const Checkpoint& ckpt, const MaltConfig& expected, ParamStore& target) {
    if (!ckpt.config.same_model(expected)) {
        throw ConfigError("checkpoint config does not match the requested config: checkpoint " +
                          nlohmann::json(ckpt.config).dump() + " vs " + nlohmann::json(expected).dump());
    }
    if (ckpt.params.entries() != target.entries()) throw DataError("checkpoint: parameter set differs from model");
    for (auto& [name, e] : target) {
        const ParamEntry& src = ckpt.params.at(name);
        if (!src.value.same_shape(e.value)) {
            throw DimensionError("checkpoint: '" + name + "' has shape " + shape_str(src.value.shape()) +
                                 ", model expects " + shape_str(e.value.shape()));
        }
        e.value = src.value;
        e.m = src.m;
        e.v = src.v;
        e.grad.fill(0.0);
    }
}

}  // namespace malt
