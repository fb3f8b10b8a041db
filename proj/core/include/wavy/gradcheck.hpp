#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wavy/autodiff.hpp"
#include "wavy/blocks.hpp"

namespace wavy {

struct GradCheckOptions {
  std::size_t samples = 20;
  double eps = 1e-6;  // must lie in [1e-8, 1e-4]
  std::uint64_t seed = 0;
  /// A coordinate is excluded when a relu pre-activation within this band of
  /// zero changes side between the base and a perturbed evaluation.
  double kink_band = 1e-3;
  /// One extra coordinate is checked in every parameter whose name contains
  /// one of these substrings.
  std::vector<std::string> force_params;
  /// Upper bound on coordinate draws, as a multiple of samples, before the
  /// check gives up replacing excluded coordinates.
  std::size_t max_draw_factor = 10;
};

struct GradCheckSample {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool excluded = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::vector<GradCheckSample> samples;
};

/// |g - g_fd| / max(|g|, |g_fd|, 1e-8)
double relative_error(double analytic, double numeric) noexcept;

/// Builds a scalar loss on the given ops; must read every parameter through
/// ops.param so perturbations are seen.
using LossBuilder = std::function<Var(TapeOps&)>;

/// Central differences on randomly drawn coordinates of params, compared to
/// one reverse-mode pass. Parameters are perturbed in place and restored.
GradCheckReport grad_check(const LossBuilder& loss, std::span<const ParamRef> params,
                           const GradCheckOptions& opts);

}  // namespace wavy
