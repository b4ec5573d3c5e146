#pragma once

#include <vector>

#include "hpcf/gradcheck.hpp"
#include "hpcf/model.hpp"

namespace hpcf {

/// Finite-difference check of a whole network: both input images and every
/// learnable parameter (index-sampled for the big tensors). Batch-norm
/// running statistics are snapshotted and restored around the sweep.
GradReport model_gradcheck(ChangeDetector& model, const Tensor& t0, const Tensor& t1,
                           const std::vector<ChangeMap>& labels, const GradCheckOptions& opt);

struct SuiteOptions {
  int width_div = 16;        // model-level check configuration
  int image_size = 32;
  double op_tol = 1e-4;      // individual operations
  double model_tol = 1e-3;   // end-to-end model
  int model_samples = 6;     // sampled elements per parameter tensor
  std::uint64_t seed = 2024;
};

/// Every differentiable operation plus cfs/pagc/rsa/mpfl and the end-to-end
/// model, on seeded kink-avoiding inputs.
std::vector<GradReport> gradcheck_suite(const SuiteOptions& opt);

}  // namespace hpcf
