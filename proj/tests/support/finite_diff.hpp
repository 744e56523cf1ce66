#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cafm/tensor.hpp"

namespace cafm::testing {

// Central finite difference of a scalar-valued function of several tensor
// inputs. Returns one gradient tensor per input.
inline std::vector<Tensor> finite_diff(
    const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double h = 1e-5) {
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor g = Tensor::zeros_like(inputs[k]);
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double fp = f(inputs);
      inputs[k][i] = saved - h;
      const double fm = f(inputs);
      inputs[k][i] = saved;
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// max_i |a_i - b_i| / max(1, max_i |b_i|)
inline double rel_max_err(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 1.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

}  // namespace cafm::testing
