#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpcf/tensor.hpp"

namespace hpcf {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Relative difference denominator is max(|analytic|, |numeric|, rel_floor).
  double rel_floor = 1e-6;
  /// 0 checks every element; otherwise a seeded sample of this many per input.
  int max_samples_per_input = 0;
  std::uint64_t sample_seed = 17;
};

struct GradReport {
  struct InputReport {
    std::string name;
    double max_abs_diff = 0.0;
    double max_rel_diff = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t checked = 0;
    bool pass = true;
  };
  std::string op;
  double tol = 0.0;
  bool pass = true;
  std::vector<InputReport> inputs;

  double worst_rel() const;
  std::string summary() const;
};

/// Central difference (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps) per element.
/// f must be deterministic; evaluations run with the tape disabled.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps);

/// Compares the analytic gradients of forward() against central differences.
///
/// `leaves` lists the (name, tensor) pairs to check. Each tensor must be a
/// requires_grad leaf that forward() reads; elements are perturbed in place
/// for the numeric passes and restored afterwards. Failures are reported,
/// not thrown.
GradReport gradcheck(std::string op_name, const std::function<Tensor()>& forward,
                     std::span<const std::pair<std::string, Tensor>> leaves,
                     const GradCheckOptions& opt = {});

}  // namespace hpcf
