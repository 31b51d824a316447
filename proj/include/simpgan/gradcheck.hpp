#pragma once

#include <functional>
#include <string>
#include <vector>

#include "simpgan/tensor.hpp"

namespace simpgan {

template <typename T>
using ScalarFn = std::function<Tensor<T>(Graph<T>&, const std::vector<Tensor<T>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int tensor_index = -1;  // coordinate of the worst (or first non-finite) entry
  std::int64_t coord = -1;
  bool finite = true;

  bool ok(double tol) const { return finite && max_rel_err < tol; }
};

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences at `point`. Every coordinate of every point
/// tensor is perturbed; the relative error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// Point tensors are evaluated in place (values are perturbed and restored),
/// so parameter handles captured by `fn` can be passed directly.
template <typename T>
GradCheckReport grad_check(const ScalarFn<T>& fn, std::vector<Tensor<T>> point, double epsilon) {
  if (!(epsilon > 0)) throw NumericError("grad_check: epsilon must be positive");

  // Analytic pass. Point tensors are temporarily promoted to leaves.
  std::vector<bool> saved_flags;
  saved_flags.reserve(point.size());
  for (auto& p : point) {
    saved_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
  }
  std::vector<std::vector<T>> analytic;
  {
    Graph<T> g;
    for (auto& p : point) g.watch(p);
    Tensor<T> loss = fn(g, point);
    auto grads = g.backward(loss);
    for (auto& p : point) analytic.push_back(grads.at(p.id()).value());
  }
  for (std::size_t i = 0; i < point.size(); ++i) point[i].set_requires_grad(saved_flags[i]);

  auto eval = [&fn, &point]() -> double {
    Graph<T> g(false);
    return static_cast<double>(fn(g, point).item());
  };

  GradCheckReport report;
  const T eps = static_cast<T>(epsilon);
  for (std::size_t t = 0; t < point.size(); ++t) {
    auto& values = point[t].value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + eps;
      const double up = eval();
      values[i] = saved - eps;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[t][i]);
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.finite = false;
        report.tensor_index = static_cast<int>(t);
        report.coord = static_cast<std::int64_t>(i);
        return report;
      }
      const double rel =
          std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.tensor_index = static_cast<int>(t);
        report.coord = static_cast<std::int64_t>(i);
      }
    }
  }
  return report;
}

}  // namespace simpgan
