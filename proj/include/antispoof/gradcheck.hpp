#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/graph.hpp"
#include "antispoof/tensor.hpp"

// Finite-difference verification of the reverse-mode gradients. Always runs
// in double; float gradients are exercised indirectly (same templated code).

namespace antispoof {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t coords_checked = 0;
};

// `loss_fn(g)` must rebuild the computation and return a scalar loss. It is
// called repeatedly with perturbed parameter values and with g == nullptr for
// the forward-only evaluations, so it has to be deterministic (fix any
// dropout seed per call).
inline GradCheckReport grad_check(
    const std::function<Tensor<double>(Graph<double>*)>& loss_fn,
    const std::vector<ParamRef<double>>& params, std::uint64_t seed = 0,
    std::int64_t max_coords_per_param = 100, double eps = 1e-4) {
  // Analytic pass.
  for (const auto& p : params) p.tensor->zero_grad();
  Graph<double> graph;
  Tensor<double> loss = loss_fn(&graph);
  graph.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    const double* gp = p.tensor->grad_or_null();
    std::vector<double> copy(static_cast<std::size_t>(p.tensor->size()), 0.0);
    if (gp)
      for (std::int64_t i = 0; i < p.tensor->size(); ++i) copy[static_cast<std::size_t>(i)] = gp[i];
    analytic.push_back(std::move(copy));
  }

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& t = *params[pi].tensor;
    std::vector<std::uint64_t> coords;
    if (t.size() <= max_coords_per_param) {
      coords.resize(static_cast<std::size_t>(t.size()));
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      coords = rng.sample_without_replacement(static_cast<std::uint64_t>(t.size()),
                                              static_cast<std::uint64_t>(max_coords_per_param));
    }
    for (const std::uint64_t c : coords) {
      const std::int64_t idx = static_cast<std::int64_t>(c);
      const double saved = t[idx];
      t[idx] = saved + eps;
      const double plus = loss_fn(nullptr)[0];
      t[idx] = saved - eps;
      const double minus = loss_fn(nullptr)[0];
      t[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][static_cast<std::size_t>(idx)];
      // The 1e-6 floor makes this an absolute tolerance for near-zero
      // gradients; central differences on structurally-zero directions still
      // carry ~1e-12 of roundoff noise that must not register as error.
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace antispoof
