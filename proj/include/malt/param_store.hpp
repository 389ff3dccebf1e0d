#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "malt/tensor.hpp"

namespace malt {

struct ParamEntry {
    Tensor value;
    Tensor grad;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
};

// Named trainable tensors, kept in name order so every traversal (counting,
// checkpointing, optimizer updates) is deterministic.
class ParamStore {
public:
    using Map = std::map<std::string, ParamEntry>;

    ParamEntry& add(const std::string& name, Tensor init);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;

    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }
    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }
    std::size_t entries() const noexcept { return entries_.size(); }

    // Total number of scalar parameters.
    std::size_t scalar_count() const;
    // Scalars under a dotted prefix, e.g. "decoder." .
    std::size_t scalar_count(const std::string& prefix) const;

    void zero_grad();
    void scale_grad(double factor);

private:
    Map entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update for step index t (1-based), then zeroes grads.
void adam_step(ParamStore& store, const AdamConfig& cfg, std::uint64_t t);

}  // namespace malt
