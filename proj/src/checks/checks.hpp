// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace protoocc::checks {

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  // Gradient checks: relative error with floor 1e-8. Oracle checks: absolute
  // error, taken relative to the reference where its magnitude exceeds 1.
  double max_error = 0;
  double tolerance = 0;
  double seconds = 0;

  bool passed() const { return instances > 0 && max_error <= tolerance; }
};

/// Names accepted by run_gradient_suite / run_oracle_suite as `only`.
std::vector<std::string> gradient_ops();
std::vector<std::string> oracle_ops();

/// Reverse-mode vs central differences on random small instances, 1e-4 relative.
/// An unknown `only` name throws ConfigError.
std::vector<CheckResult> run_gradient_suite(std::size_t instances = 20, std::uint64_t seed = 1,
                                            const std::string& only = "");

/// Vectorised operations vs naive loops on random instances with N <= 2,
/// M <= 4, K <= 8, d <= 4, S <= 4; absolute tolerance 1e-10.
std::vector<CheckResult> run_oracle_suite(std::size_t instances = 100, std::uint64_t seed = 2,
                                          const std::string& only = "");

/// 2x2 slab expansions (original, transpose, flip) at a=1, b=2, c=3, d=4 with
/// random kernels vs conv_transpose3d.
CheckResult check_slab_expansions(std::size_t kernels, std::uint64_t seed);
/// T^-1(CT(T(x), k)) == CT(x, T_k(k)) on random 3D cases.
CheckResult check_kernel_transform_identity(std::size_t cases, std::uint64_t seed);
/// Minimum over random continuous kernels of max |realigned branch - branch 0|;
/// the check passes when every kernel gives a difference above 1e-6.
CheckResult check_branch_distinctness(std::size_t kernels, std::uint64_t seed);

/// Sharpen sums to 1 and keeps argmax on random distributions.
CheckResult check_sharpen(std::size_t distributions, std::uint64_t seed);
/// consistency_loss on identical branches at tau = 1.
CheckResult check_consensus_zero(std::size_t cases, std::uint64_t seed);
/// contrastive_loss with a single mask.
CheckResult check_single_mask_contrastive(std::size_t cases, std::uint64_t seed);

std::string format_result(const CheckResult& r);

}  // namespace protoocc::checks
