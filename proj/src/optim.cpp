#include "dccl/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "dccl/rng.hpp"
#include "dccl/util.hpp"

namespace dccl::ad {

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  if (max_norm <= 0) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.values()) v *= scale;
    }
  }
  return norm;
}

Adam::Adam(AdamConfig config, std::span<const Tensor* const> params) : config_(config) {
  if (config_.lr < 0 || config_.beta1 <= 0 || config_.beta1 >= 1 || config_.beta2 <= 0 ||
      config_.beta2 >= 1 || config_.epsilon <= 0 || config_.clip_max_norm <= 0) {
    throw std::invalid_argument("Adam: invalid configuration");
  }
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.emplace_back(Tensor::zeros(p->shape()));
    v_.emplace_back(Tensor::zeros(p->shape()));
  }
}

double Adam::step(std::span<Tensor* const> params, std::span<Tensor> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument(cat("Adam::step: expected ", m_.size(), " tensors, got ",
                                    params.size(), " params / ", grads.size(), " grads"));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(m_[i]) || !grads[i].same_shape(m_[i])) {
      throw std::invalid_argument(cat("Adam::step: shape mismatch at parameter ", i));
    }
  }

  const double norm = clip_grad_norm(grads, config_.clip_max_norm);
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
  return norm;
}

}  // namespace dccl::ad

namespace dccl {

double mse(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument(cat("mse: shape mismatch ", shape_to_string(pred.shape()), " vs ",
                                    shape_to_string(target.shape())));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

std::vector<double> per_instance_mse(const Tensor& pred, const Tensor& target,
                                     std::size_t batch_axis) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument(cat("per_instance_mse: shape mismatch ",
                                    shape_to_string(pred.shape()), " vs ",
                                    shape_to_string(target.shape())));
  }
  const Shape& shape = pred.shape();
  if (batch_axis >= shape.size()) {
    throw std::invalid_argument(cat("per_instance_mse: batch_axis ", batch_axis,
                                    " out of range for rank ", shape.size()));
  }
  const std::size_t n = shape[batch_axis];
  std::size_t stride = 1;
  for (std::size_t d = batch_axis + 1; d < shape.size(); ++d) stride *= shape[d];
  const std::size_t per = pred.size() / n;

  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out[(i / stride) % n] += d * d;
  }
  for (double& v : out) v /= static_cast<double>(per);
  return out;
}

void glorot_init(Tensor& t, std::uint64_t seed, std::string_view name) {
  std::size_t fan_in = 1, fan_out = t.size();
  if (t.rank() == 2) {
    fan_in = t.shape()[0];
    fan_out = t.shape()[1];
  }
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  SeededRng rng = SeededRng(seed).derive(name);
  for (double& v : t.values()) v = rng.uniform(-a, a);
}

}  // namespace dccl
