#include "entropic/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace entropic::oracle {

std::vector<double> fd_gradient(const LossFn& loss, std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd step must be positive");
  std::vector<double> t(theta.begin(), theta.end());
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double step = h * (1.0 + std::fabs(theta[i]));
    t[i] = theta[i] + step;
    const double up = loss(t);
    t[i] = theta[i] - step;
    const double down = loss(t);
    t[i] = theta[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double fd_hessian_trace(const LossFn& loss, std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd step must be positive");
  if (theta.size() > 500) throw std::invalid_argument("fd_hessian_trace is limited to 500 parameters");
  std::vector<double> t(theta.begin(), theta.end());
  const double center = loss(t);
  double tr = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = theta[i] + h;
    const double up = loss(t);
    t[i] = theta[i] - h;
    const double down = loss(t);
    t[i] = theta[i];
    tr += (up - 2.0 * center + down) / (h * h);
  }
  return tr;
}

NStepResult brute_n_step(const LossFn& loss, std::span<const double> theta0, double lr, std::size_t n,
                         double h) {
  if (n < 1) throw std::invalid_argument("brute_n_step needs n >= 1");
  NStepResult r{std::vector<double>(theta0.begin(), theta0.end()), false};
  for (std::size_t k = 0; k < n; ++k) {
    const auto g = fd_gradient(loss, r.theta, h);
    double norm = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      r.theta[i] -= lr * g[i];
      norm += r.theta[i] * r.theta[i];
    }
    if (!std::isfinite(norm) || norm > 1e12) {
      r.diverged = true;
      break;
    }
  }
  return r;
}

}  // namespace entropic::oracle
