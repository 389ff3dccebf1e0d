#pragma once

#include <functional>
#include <string>
#include <vector>

#include "malt/autodiff.hpp"

namespace malt {

// Builds a scalar loss on a fresh graph from the parameters in the store.
using LossFn = std::function<Var(Graph&, ParamStore&)>;

struct GradCheckResult {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;  // |analytic - numeric| / max(1, |analytic|)
};

double evaluate_loss(const LossFn& f, ParamStore& store);

// Analytic gradient of every parameter, left in the store's grad slots.
void compute_gradients(const LossFn& f, ParamStore& store);

// Central difference (f(x+h) - f(x-h)) / 2h against the backward pass for a
// single scalar of one parameter. The parameter value is restored afterwards.
GradCheckResult finite_diff_check(const LossFn& f, ParamStore& store, const std::string& name, std::size_t index,
                                  double h = 1e-5);

// Checks `count` scalars: a parameter tensor is drawn uniformly, then an
// index within it, so small tensors (norm gains, latents) are not starved.
std::vector<GradCheckResult> check_random_params(const LossFn& f, ParamStore& store, std::size_t count, Rng& rng,
                                                 double h = 1e-5);

}  // namespace malt
