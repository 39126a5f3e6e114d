#include "sat/optim.hpp"

#include <cmath>
#include <numbers>

namespace sat {

void OptimConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("optim: base_lr must be positive");
  if (rho < 0.0) throw ConfigError("optim: rho must be >= 0");
  if (epochs < 1) throw ConfigError("optim: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("optim: batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optim: momentum must be in [0, 1)");
  if (min_lr < 0.0 || min_lr > base_lr) throw ConfigError("optim: min_lr must be in [0, base_lr]");
}

double cosine_lr(std::size_t step, std::size_t total_steps, const OptimConfig& cfg) {
  if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw ContractError("cosine_lr: step beyond schedule end");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(phase));
}

template <typename T>
void MomentumSgd<T>::step(std::vector<Tensor<T>>& params, double lr) {
  if (buffers_.size() != params.size()) {
    buffers_.clear();
    for (const auto& p : params) buffers_.emplace_back(p.size(), T(0));
  }
  const T mu = static_cast<T>(momentum_);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& buf = buffers_[i];
    if (buf.size() != p.size()) throw DimensionError("momentum buffer does not match parameter");
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      buf[j] = mu * buf[j] + g[j];
      w[j] -= rate * buf[j];
    }
  }
}

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) {
    p.grad();
    p.zero_grad();
  }
}

template <typename T>
LossBreakdown sam_step(std::vector<Tensor<T>>& params, const LossClosure& compute_loss, double lr,
                       const OptimConfig& cfg, MomentumSgd<T>& base) {
  zero_grads(params);
  const LossBreakdown loss = compute_loss();

  double norm_sq = 0.0;
  for (auto& p : params) {
    for (T g : p.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(norm_sq);
  if (cfg.rho > 0.0 && norm > 0.0) {
    std::vector<std::vector<T>> saved;
    saved.reserve(params.size());
    const double factor = cfg.rho / norm;
    for (auto& p : params) {
      saved.emplace_back(p.data().begin(), p.data().end());
      auto w = p.data();
      auto g = p.grad();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] += static_cast<T>(factor * static_cast<double>(g[j]));
    }
    zero_grads(params);
    compute_loss();
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(saved[i].begin(), saved[i].end(), params[i].data().begin());
    }
  }
  base.step(params, lr);
  return loss;
}

template class MomentumSgd<float>;
template class MomentumSgd<double>;
template void zero_grads(std::vector<Tensor<float>>&);
template void zero_grads(std::vector<Tensor<double>>&);
template LossBreakdown sam_step(std::vector<Tensor<float>>&, const LossClosure&, double, const OptimConfig&,
                                MomentumSgd<float>&);
template LossBreakdown sam_step(std::vector<Tensor<double>>&, const LossClosure&, double, const OptimConfig&,
                                MomentumSgd<double>&);

}  // namespace sat
