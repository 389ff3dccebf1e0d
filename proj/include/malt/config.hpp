#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

namespace malt {

// How the decoder combines the encoder features {f_1..f_N}.
enum class FusionMode {
    recurrent,  // one shared self+cross unit applied N times
    cascade,    // N unshared units, one per feature
    add,        // f_1 + ... + f_N decoded by a single pass
};

std::string to_string(FusionMode m);
FusionMode fusion_from_string(const std::string& s);

// Full-scale values are noted next to the desk-scale defaults.
struct MaltConfig {
    std::size_t short_frames = 16;   // m_s
    std::size_t long_frames = 128;   // m_l (full scale: 512)
    std::size_t input_dim = 32;      // D_in (full scale: two-stream video features)
    std::size_t model_dim = 64;      // D (full scale: 1024)
    std::size_t heads = 4;           // (full scale: 16)
    std::size_t latent_len = 16;     // L (full scale: 32)
    std::size_t branches = 2;        // N
    std::size_t topk = 32;           // k (full scale: 370)
    bool sparse = true;
    std::size_t classes = 6;         // C action classes; label 0 is background
    double alpha = 1.0;
    double beta = 0.4;
    FusionMode fusion = FusionMode::recurrent;

    double lr = 1e-3;                // (full scale: 5e-5)
    std::size_t epochs = 25;
    std::size_t batch_size = 8;
    std::size_t windows_per_epoch = 192;  // sampled training windows per epoch
    std::uint64_t seed = 1;

    // Throws ConfigError naming the first violated invariant.
    void validate() const;

    std::size_t latent_len_of_branch(std::size_t n) const { return latent_len >> (n - 1); }

    // Fields that define parameter shapes and forward semantics; the
    // training schedule (epochs) is excluded so runs can be resumed longer.
    bool same_model(const MaltConfig& other) const;

    friend bool operator==(const MaltConfig&, const MaltConfig&) = default;
};

void to_json(nlohmann::json& j, const MaltConfig& c);
void from_json(const nlohmann::json& j, MaltConfig& c);

// The tiny configuration used for end-to-end gradient checks.
MaltConfig tiny_config();

// Parses JSON text; '//' and '/* */' comments are accepted.
nlohmann::json parse_config_text(const std::string& text);
nlohmann::json load_config_file(const std::string& path);

// FNV-1a 64 of the canonical (sorted-key, compact) JSON dump.
std::uint64_t config_hash(const nlohmann::json& j);
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace malt
