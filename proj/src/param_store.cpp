#include "malt/param_store.hpp"

#include <cmath>

#include "malt/errors.hpp"

namespace malt {

ParamEntry& ParamStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    ParamEntry e;
    e.grad = Tensor(init.shape());
    e.m = Tensor(init.shape());
    e.v = Tensor(init.shape());
    e.value = std::move(init);
    return entries_.emplace(name, std::move(e)).first->second;
}

ParamEntry& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
}

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (name.compare(0, prefix.size(), prefix) == 0) n += e.value.size();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

void ParamStore::scale_grad(double factor) {
    for (auto& [name, e] : entries_) {
        for (double& g : e.grad.values()) g *= factor;
    }
}

void adam_step(ParamStore& store, const AdamConfig& cfg, std::uint64_t t) {
    if (t == 0) throw ContractError("adam_step: step index must be >= 1");
    const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
    for (auto& [name, e] : store) {
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = e.m[i] / c1;
            const double vhat = e.v[i] / c2;
            e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        e.grad.fill(0.0);
    }
}

}  // namespace malt
