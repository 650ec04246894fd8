// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the autodiff primitives and of every
// composed layer built on them.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dst/autodiff.hpp"

namespace dst {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so entries whose true gradient
  /// is ~0 are judged on absolute error.
  double floor = 1e-5;
  /// Entries perturbed per tensor; larger tensors are subsampled with `seed`.
  std::size_t max_entries = 48;
  std::uint64_t seed = 1;
};

/// Max over the checked entries of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// with numeric from central differences of `loss` (a scalar rebuilt on every call).
/// Every tensor in `wrt` must be a leaf with requires_grad and no pending gradient.
double max_relative_error(const std::function<ad::Tensor()>& loss, const std::vector<ad::Tensor>& wrt,
                          const GradCheckOptions& options = {});

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Every primitive, then Linear, GRU, feature embedding, GAT, HGNN, contrastive
/// loss, the full spatial model, transformer block, both temporal loss heads and
/// gated fusion.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options = {});

}  // namespace dst
