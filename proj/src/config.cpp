#include "malt/config.hpp"

#include <fstream>
#include <sstream>

#include "malt/errors.hpp"

namespace malt {

std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::recurrent: return "recurrent";
        case FusionMode::cascade: return "cascade";
        case FusionMode::add: return "add";
    }
    return "?";
}

FusionMode fusion_from_string(const std::string& s) {
    if (s == "recurrent") return FusionMode::recurrent;
    if (s == "cascade") return FusionMode::cascade;
    if (s == "add") return FusionMode::add;
    throw ConfigError("unknown fusion mode '" + s + "' (expected recurrent, cascade or add)");
}

void MaltConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config invariant violated: " + what); };
    if (short_frames < 1) fail("m_s >= 1");
    if (!(short_frames < long_frames)) fail("m_s < m_l");
    if (input_dim < 1) fail("D_in >= 1");
    if (model_dim < 1) fail("D >= 1");
    if (heads < 1 || model_dim % heads != 0) fail("heads divides D");
    if (branches < 1) fail("N >= 1");
    if (branches > 32 || latent_len == 0 || latent_len % (std::size_t{1} << (branches - 1)) != 0) {
        fail("L divisible by 2^(N-1)");
    }
    if (topk < 1) fail("1 <= k");
    if (classes < 1) fail("C >= 1");
    if (classes + 1 > 65535) fail("C + 1 fits 16-bit labels");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) fail("alpha, beta >= 0");
    if (!(lr > 0.0)) fail("lr > 0");
    if (batch_size < 1) fail("batch_size >= 1");
    if (windows_per_epoch < 1) fail("windows_per_epoch >= 1");
}

bool MaltConfig::same_model(const MaltConfig& other) const {
    MaltConfig a = *this, b = other;
    a.epochs = b.epochs = 0;
    return a == b;
}

void to_json(nlohmann::json& j, const MaltConfig& c) {
    j = nlohmann::json{{"m_s", c.short_frames},
                       {"m_l", c.long_frames},
                       {"input_dim", c.input_dim},
                       {"model_dim", c.model_dim},
                       {"heads", c.heads},
                       {"latent_len", c.latent_len},
                       {"branches", c.branches},
                       {"topk", c.topk},
                       {"sparse", c.sparse},
                       {"classes", c.classes},
                       {"alpha", c.alpha},
                       {"beta", c.beta},
                       {"fusion", to_string(c.fusion)},
                       {"lr", c.lr},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"windows_per_epoch", c.windows_per_epoch},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, MaltConfig& c) {
    static const char* known[] = {"m_s",     "m_l",    "input_dim", "model_dim", "heads",  "latent_len",
                                  "branches", "topk",  "sparse",    "classes",   "alpha",  "beta",
                                  "fusion",  "lr",     "epochs",    "batch_size", "windows_per_epoch", "seed"};
    if (!j.is_object()) throw ConfigError("model config must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown model config key '" + key + "'");
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("m_s", c.short_frames);
        get("m_l", c.long_frames);
        get("input_dim", c.input_dim);
        get("model_dim", c.model_dim);
        get("heads", c.heads);
        get("latent_len", c.latent_len);
        get("branches", c.branches);
        get("topk", c.topk);
        get("sparse", c.sparse);
        get("classes", c.classes);
        get("alpha", c.alpha);
        get("beta", c.beta);
        if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
        get("lr", c.lr);
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        get("windows_per_epoch", c.windows_per_epoch);
        get("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
}

MaltConfig tiny_config() {
    MaltConfig c;
    c.short_frames = 4;
    c.long_frames = 8;
    c.input_dim = 5;
    c.model_dim = 8;
    c.heads = 2;
    c.latent_len = 4;
    c.branches = 2;
    c.topk = 4;
    c.classes = 2;
    return c;
}

nlohmann::json parse_config_text(const std::string& text) {
    try {
        return nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
}

nlohmann::json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    return fnv1a64(s.data(), s.size());
}

}  // namespace malt
