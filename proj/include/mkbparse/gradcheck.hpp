#pragma once

// Central finite-difference comparison against reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "mkbparse/autodiff.hpp"

namespace mkb::ad {

struct GradientCheck {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Relative error of one coordinate. Gradients smaller than `floor` are
/// compared on an absolute scale of `floor`, since finite differences carry
/// round-off of that order regardless of the true value.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` builds a fresh graph over `store` and returns the loss node.
/// Every scalar of every parameter is perturbed by +-step in place and
/// restored afterwards.
inline GradientCheck check_gradients(ParameterStore& store, const std::function<Var(Graph&)>& loss,
                                     double step = 1e-4, double floor = 1e-6) {
  Gradients analytic;
  {
    Graph g(&store);
    analytic = g.backward(loss(g));
  }
  auto eval = [&] {
    Graph g(&store);
    return g.value(loss(g))[0];
  };
  GradientCheck out;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& values = store[p].value.values();
    const Tensor* grad = analytic.find(p);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = grad ? (*grad)[i] : 0.0;
      const double rel = relative_error(a, numeric, floor);
      out.max_absolute_error = std::max(out.max_absolute_error, std::abs(a - numeric));
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst_parameter = store[p].name;
        out.worst_index = i;
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace mkb::ad
