#pragma once

// Shared per-op gradient-check scenarios. Each scenario draws random points
// with coordinates kept a margin away from any non-differentiable kink, and
// reduces the op output to a scalar through a fixed random projection so
// every output coordinate affects the loss with an O(1) weight.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "simpgan/gradcheck.hpp"
#include "simpgan/rng.hpp"
#include "simpgan/tensor.hpp"

namespace simpgan::testing {

template <typename T>
struct OpScenario {
  std::string name;
  ScalarFn<T> fn;
  std::function<std::vector<Tensor<T>>(Rng&)> make_point;
  double float_eps = 3e-2;   // smaller for strongly curved ops
  double cond_floor = 0.02;  // larger for mean-removing ops
};

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                        double kink = 0.0, double margin = 0.0) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    double d = rng.uniform(lo, hi);
    if (margin > 0.0) {
      while (std::fabs(d - kink) < margin) d = rng.uniform(lo, hi);
    }
    x = static_cast<T>(d);
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Projection weights are a deterministic function of the output size only,
// so the same scenario is comparable across precisions.
template <typename T>
Tensor<T> projector(const Shape& shape) {
  Rng rng(fnv1a64("projector") ^ static_cast<std::uint64_t>(numel(shape)));
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1 : -1));
  return Tensor<T>::from(shape, std::move(v));
}

template <typename T>
Tensor<T> project(Graph<T>& g, const Tensor<T>& out) {
  return g.sum(g.mul(out, projector<T>(out.shape())));
}

template <typename T>
std::vector<Tensor<T>> cast_point(const std::vector<Tensor<double>>& point) {
  std::vector<Tensor<T>> out;
  out.reserve(point.size());
  for (const auto& p : point) {
    std::vector<T> v(p.value().begin(), p.value().end());
    out.push_back(Tensor<T>::from(p.shape(), std::move(v)));
  }
  return out;
}

struct PointProbe {
  double min_nonzero_grad = std::numeric_limits<double>::infinity();
  double kink_clearance = std::numeric_limits<double>::infinity();
  double min_norm_std = std::numeric_limits<double>::infinity();
};

/// Wide-precision probe of a candidate point: the smallest nonzero
/// |gradient| coordinate (structural zeros excluded — central differences
/// reproduce those exactly in any precision) and the smallest distance of
/// any internal pre-activation from a kink.
inline PointProbe probe_point(const ScalarFn<double>& fn, std::vector<Tensor<double>> point) {
  Graph<double> g;
  g.track_kink_clearance(true);
  for (auto& p : point) {
    p.set_requires_grad(true);
    g.watch(p);
  }
  auto grads = g.backward(fn(g, point));
  PointProbe probe;
  probe.kink_clearance = g.kink_clearance();
  probe.min_norm_std = g.min_norm_std();
  for (auto& p : point) {
    for (double v : grads.at(p.id()).value()) {
      const double a = std::fabs(v);
      if (a > 1e-12 && a < probe.min_nonzero_grad) probe.min_nonzero_grad = a;
    }
  }
  return probe;
}

/// Draws a point that finite differences can resolve: every nonzero gradient
/// coordinate exceeds `floor` (tiny-but-nonzero derivatives drown in
/// single-precision roundoff) and every internal pre-activation keeps the
/// same margin from kinks that the raw inputs do.
inline std::vector<Tensor<double>> draw_conditioned_point(
    const std::function<std::vector<Tensor<double>>(Rng&)>& make_point,
    const ScalarFn<double>& fn, Rng& rng, double floor = 0.02, double clearance = 0.05,
    int max_attempts = 200) {
  std::vector<Tensor<double>> point = make_point(rng);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const PointProbe probe = probe_point(fn, point);
    if (probe.min_nonzero_grad >= floor && probe.kink_clearance >= clearance &&
        probe.min_norm_std >= 0.5) {
      break;
    }
    point = make_point(rng);
  }
  return point;
}

template <typename T>
std::vector<OpScenario<T>> op_scenarios() {
  const double kMargin = 0.05;
  std::vector<OpScenario<T>> s;

  auto elementwise = [&](Op op) {
    s.push_back({std::string(op_name(op)),
                 [op](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                   return project(g, g.forward(op, {p[0], p[1]}));
                 },
                 [](Rng& rng) {
                   return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3}),
                                                 random_tensor<T>(rng, {2, 3})};
                 }});
    s.push_back({std::string(op_name(op)) + "_scalar_rhs",
                 [op](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                   return project(g, g.forward(op, {p[0], p[1]}));
                 },
                 [](Rng& rng) {
                   return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3}),
                                                 random_tensor<T>(rng, {1})};
                 }});
  };
  elementwise(Op::add);
  elementwise(Op::sub);
  elementwise(Op::mul);

  s.push_back({"scale",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.scale(p[0], -1.7));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {3, 2})}; }});

  s.push_back({"matmul",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.matmul(p[0], p[1]));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {3, 4}),
                                               random_tensor<T>(rng, {4, 2})};
               }});
  s.push_back({"matmul_vec",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.matmul(p[0], p[1]));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {3, 4}),
                                               random_tensor<T>(rng, {4})};
               }});

  s.push_back({"conv2d",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.conv2d(p[0], p[1], p[2], 1, 1));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {1, 2, 5, 4}),
                                               random_tensor<T>(rng, {3, 2, 3, 3}),
                                               random_tensor<T>(rng, {3})};
               }});
  s.push_back({"conv2d_strided",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.conv2d(p[0], p[1], p[2], 2, 1));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 2, 5, 4}),
                                               random_tensor<T>(rng, {3, 2, 3, 3}),
                                               random_tensor<T>(rng, {3})};
               }});

  s.push_back({"relu",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.relu(p[0]));
               },
               [kMargin](Rng& rng) {
                 return std::vector<Tensor<T>>{
                     random_tensor<T>(rng, {2, 3}, -1, 1, 0.0, kMargin)};
               }});
  s.push_back({"leaky_relu",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.leaky_relu(p[0], 0.2));
               },
               [kMargin](Rng& rng) {
                 return std::vector<Tensor<T>>{
                     random_tensor<T>(rng, {2, 3}, -1, 1, 0.0, kMargin)};
               }});
  s.push_back({"sigmoid",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.sigmoid(p[0]));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3}, -2, 2)}; }});
  s.push_back({"tanh",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.tanh(p[0]));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3}, -2, 2)}; }});
  s.push_back({"square",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.square(p[0]));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3})}; }});
  s.push_back({"abs",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.abs(p[0]));
               },
               [kMargin](Rng& rng) {
                 return std::vector<Tensor<T>>{
                     random_tensor<T>(rng, {2, 3}, -1, 1, 0.0, kMargin)};
               }});
  s.push_back({"log",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.log(p[0]));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3}, 0.3, 1.8)};
               },
               1e-2});
  s.push_back({"clamp",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.clamp(p[0], -0.8, 0.8));
               },
               [kMargin](Rng& rng) {
                 auto t = random_tensor<T>(rng, {2, 3}, -1, 1);
                 for (auto& v : t.value()) {
                   while (std::fabs(std::fabs(double(v)) - 0.8) < kMargin) {
                     v = static_cast<T>(rng.uniform(-1, 1));
                   }
                 }
                 return std::vector<Tensor<T>>{t};
               }});

  s.push_back({"softmax",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.softmax(p[0], -1));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {5}, -2, 2)}; }});
  s.push_back({"softmax_axis0",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.softmax(p[0], 0));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {4, 3}, -2, 2)};
               }});

  s.push_back({"sum",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) { return g.sum(p[0]); },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3, 2})}; }});
  s.push_back({"sum_axes",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.sum(p[0], {0, 2}));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3, 2})}; }});
  s.push_back({"mean",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) { return g.mean(p[0]); },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3, 2})}; }});
  s.push_back({"mean_spatial",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.mean(p[0], {2, 3}));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3, 4, 2})};
               }});

  s.push_back({"concat",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.concat({p[0], p[1]}, 1));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 2}),
                                               random_tensor<T>(rng, {2, 3})};
               }});
  s.push_back({"pad",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.pad(p[0], 1, 2));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {1, 2, 3, 2})};
               }});
  s.push_back({"upsample_nearest",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.upsample_nearest(p[0], 2));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {1, 2, 3, 2})};
               }});

  s.push_back({"instance_norm",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.instance_norm(p[0]));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {1, 2, 4, 3}, -2, 2)};
               },
               2e-2, 0.05});
  s.push_back({"instance_norm_affine",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.instance_norm(p[0], p[1], p[2]));
               },
               [](Rng& rng) {
                 return std::vector<Tensor<T>>{random_tensor<T>(rng, {1, 2, 4, 3}, -2, 2),
                                               random_tensor<T>(rng, {2}, 0.5, 1.5),
                                               random_tensor<T>(rng, {2}, -0.5, 0.5)};
               },
               2e-2, 0.05});

  s.push_back({"reshape",
               [](Graph<T>& g, const std::vector<Tensor<T>>& p) {
                 return project(g, g.reshape(p[0], {6}));
               },
               [](Rng& rng) { return std::vector<Tensor<T>>{random_tensor<T>(rng, {2, 3})}; }});

  return s;
}

struct OpSuiteResult {
  std::string name;
  double float_err = 0.0;
  double double_err = 0.0;
  bool finite = true;
};

/// Runs every op scenario at `points_per_op` seeded random points in both
/// precisions (float with eps 3e-2, double with eps 1e-3) and reports the
/// worst relative error per scenario.
inline std::vector<OpSuiteResult> run_op_gradcheck_suite(int points_per_op = 10) {
  auto scf = op_scenarios<float>();
  auto scd = op_scenarios<double>();
  std::vector<OpSuiteResult> results;
  for (std::size_t i = 0; i < scd.size(); ++i) {
    OpSuiteResult r;
    r.name = scd[i].name;
    Rng rng(fnv1a64(scd[i].name) ^ 0x5eedULL);
    for (int trial = 0; trial < points_per_op; ++trial) {
      auto pd = draw_conditioned_point(scd[i].make_point, scd[i].fn, rng, scd[i].cond_floor);
      auto rd = grad_check<double>(scd[i].fn, pd, 1e-4);
      auto rf = grad_check<float>(scf[i].fn, cast_point<float>(pd), scd[i].float_eps);
      r.finite = r.finite && rd.finite && rf.finite;
      r.double_err = std::max(r.double_err, rd.max_rel_err);
      r.float_err = std::max(r.float_err, rf.max_rel_err);
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace simpgan::testing
