#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nlvc/rng.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc::testing {

inline constexpr double kNormFloor = 1e-4;

struct GradCheckResult {
  // Worst over inputs of ||a - n|| / max(||a||, ||n||, kNormFloor). The floor
  // keeps exactly-zero gradients (e.g. a key bias under a positional softmax)
  // from turning rounding noise into a relative error of 1.
  double rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradCheckOptions {
  double h = 1e-6;
  std::size_t per_input = 0;
  std::uint64_t seed = 7;
  // Richardson-extrapolate from steps h and 2h, and drop coordinates whose two
  // estimates disagree (a leaky-ReLU kink inside the stencil).
  bool skip_kinks = false;
  double kink_tol = 1e-4;
  double norm_floor = kNormFloor;
};

// Central differences of a scalar loss against the tape gradient. `inputs`
// must be leaves with requires_grad; `per_input` caps how many coordinates of
// each are probed (0 = all), chosen with a fixed seed.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 const GradCheckOptions& opt) {
  const double h = opt.h;
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(&tape);
    for (auto& t : inputs) t.zero_grad();
    Tensor l = loss();
    tape.backward(l);
    for (auto& t : inputs) analytic.push_back(t.grad());
  }
  TapeScope no_grad(nullptr);
  Rng rng(opt.seed);
  const std::size_t per_input = opt.per_input;
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto v = inputs[k].values();
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_input > 0 && per_input < idx.size()) {
      for (std::size_t i = 0; i < per_input; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      idx.resize(per_input);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      const double x0 = v[i];
      auto at = [&](double step) {
        v[i] = x0 + step;
        const double f = loss().item();
        v[i] = x0;
        return f;
      };
      const double d1 = (at(h) - at(-h)) / (2.0 * h);
      double num = d1;
      if (opt.skip_kinks) {
        const double d2 = (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h);
        if (std::abs(d1 - d2) > opt.kink_tol * std::max({std::abs(d1), std::abs(d2), 1e-3})) {
          ++res.skipped;
          continue;
        }
        num = (4.0 * d1 - d2) / 3.0;
      }
      const double a = analytic[k][i];
      diff2 += (a - num) * (a - num);
      a2 += a * a;
      n2 += num * num;
      ++res.checked;
    }
    const double denom = std::max(std::sqrt(std::max(a2, n2)), opt.norm_floor);
    res.rel_error = std::max(res.rel_error, std::sqrt(diff2) / denom);
  }
  return res;
}

inline GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 double h = 1e-6, std::size_t per_input = 0,
                                 std::uint64_t seed = 7) {
  return gradcheck(loss, std::move(inputs), GradCheckOptions{h, per_input, seed});
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = rng.uniform(lo, hi);
  Tensor t(std::move(shape), std::move(v));
  if (grad) t.set_requires_grad(true);
  return t;
}

}  // namespace nlvc::testing
