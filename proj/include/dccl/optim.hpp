#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dccl/tensor.hpp"

namespace dccl::ad {

/// Scales all gradients by max_norm/g when the global L2 norm g exceeds
/// max_norm; no-op otherwise. Returns the pre-clip global norm.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_max_norm = 1.0;
};

/// Bias-corrected Adam over a fixed parameter list. Gradients are clipped to
/// the configured global norm before the moment update.
class Adam {
 public:
  Adam(AdamConfig config, std::span<const Tensor* const> params);

  /// One update step. `params` and `grads` must be aligned with the
  /// construction-time parameter list (same order, same shapes).
  /// Returns the pre-clip global gradient norm.
  double step(std::span<Tensor* const> params, std::span<Tensor> grads);

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_count_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_count_ = 0;
};

}  // namespace dccl::ad

namespace dccl {

/// Mean squared error over all entries; shapes must match.
double mse(const Tensor& pred, const Tensor& target);

/// Squared differences averaged over all non-batch axes, one value per index
/// along `batch_axis`. The mean of the result equals mse(pred, target).
std::vector<double> per_instance_mse(const Tensor& pred, const Tensor& target,
                                     std::size_t batch_axis = 0);

/// Glorot-uniform fill: entries uniform in [-a, a], a = sqrt(6/(fan_in+fan_out)),
/// drawn from a generator derived from (seed, name). Rank-2 tensors use
/// (rows, cols) as the fans; rank-1/biases use (1, size).
void glorot_init(Tensor& t, std::uint64_t seed, std::string_view name);

}  // namespace dccl
