#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wavy/blocks.hpp"
#include "wavy/numerics.hpp"

namespace wavy {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  Matrix m;  // first moment, allocated on the first step
  Matrix v;  // second moment
  std::uint64_t t = 0;
};

/// One AdamW update at learning rate lr. Decay is decoupled and applied to the
/// parameter before the moment update; decay = false skips it for this tensor.
void adamw_step(AdamWState& state, Matrix& param, const Matrix& grad, double lr, const AdamWConfig& cfg,
                bool decay = true);

/// Linear warmup from 0 to base_lr over warmup_frac * total steps, then linear
/// decay to 0 at total. Throws InvalidArgument unless 0 <= step <= total.
double lr_schedule(std::size_t step, std::size_t total, double base_lr, double warmup_frac = 0.1);

/// Per-tensor AdamW over a fixed parameter list.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(std::span<const ParamRef> params, std::span<const Matrix> grads, double lr);
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<AdamWState> states_;
};

}  // namespace wavy
