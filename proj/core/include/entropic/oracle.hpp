#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace entropic::oracle {

using LossFn = std::function<double(std::span<const double>)>;

// Central differences; h_i = h (1 + |theta_i|), h defaults to 1e-5.
std::vector<double> fd_gradient(const LossFn& loss, std::span<const double> theta, double h = 1e-5);

// sum_i [l(theta + h e_i) - 2 l(theta) + l(theta - h e_i)] / h^2, at most 500 parameters.
double fd_hessian_trace(const LossFn& loss, std::span<const double> theta, double h = 1e-4);

struct NStepResult {
  std::vector<double> theta;
  bool diverged = false;
};

// Literal n-step gradient descent with step lr using fd_gradient.
NStepResult brute_n_step(const LossFn& loss, std::span<const double> theta0, double lr, std::size_t n,
                         double h = 1e-5);

}  // namespace entropic::oracle
