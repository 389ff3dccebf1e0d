#include "malt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "malt/errors.hpp"

namespace malt {

double evaluate_loss(const LossFn& f, ParamStore& store) {
    Graph g;
    const double v = g.value(f(g, store)).item();
    if (!std::isfinite(v)) throw Error("gradient check: loss is not finite");
    return v;
}

void compute_gradients(const LossFn& f, ParamStore& store) {
    store.zero_grad();
    Graph g;
    Var loss = f(g, store);
    if (!std::isfinite(g.value(loss).item())) throw Error("gradient check: loss is not finite");
    g.backward(loss);
}

namespace {

GradCheckResult numeric_vs(const LossFn& f, ParamStore& store, const std::string& name, std::size_t index, double h,
                           double analytic) {
    if (!(h > 0.0)) throw ContractError("finite_diff_check: h must be > 0");
    Tensor& value = store.at(name).value;
    if (index >= value.size()) throw ContractError("finite_diff_check: index out of range for '" + name + "'");
    const double original = value[index];
    value[index] = original + h;
    const double plus = evaluate_loss(f, store);
    value[index] = original - h;
    const double minus = evaluate_loss(f, store);
    value[index] = original;

    GradCheckResult r;
    r.param = name;
    r.index = index;
    r.analytic = analytic;
    r.numeric = (plus - minus) / (2.0 * h);
    r.rel_error = std::abs(r.analytic - r.numeric) / std::max(1.0, std::abs(r.analytic));
    return r;
}

}  // namespace

GradCheckResult finite_diff_check(const LossFn& f, ParamStore& store, const std::string& name, std::size_t index,
                                  double h) {
    compute_gradients(f, store);
    const double analytic = store.at(name).grad[index];
    return numeric_vs(f, store, name, index, h, analytic);
}

std::vector<GradCheckResult> check_random_params(const LossFn& f, ParamStore& store, std::size_t count, Rng& rng,
                                                 double h) {
    compute_gradients(f, store);
    std::vector<const std::string*> names;
    for (const auto& [name, e] : store) names.push_back(&name);
    if (names.empty()) throw ContractError("check_random_params: empty parameter store");
    std::vector<std::pair<std::string, std::size_t>> picks;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string& name = *names[rng.below(names.size())];
        picks.emplace_back(name, rng.below(store.at(name).value.size()));
    }
    std::vector<GradCheckResult> out;
    out.reserve(picks.size());
    for (const auto& [name, index] : picks) {
        out.push_back(numeric_vs(f, store, name, index, h, store.at(name).grad[index]));
    }
    return out;
}

}  // namespace malt
