#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sat/objective.hpp"
#include "sat/tensor.hpp"

namespace sat {

struct OptimConfig {
  double base_lr = 0.01;
  double rho = 0.05;  // SAM neighbourhood radius
  int epochs = 30;
  int batch_size = 16;
  double momentum = 0.9;
  double min_lr = 0.0;
  bool augment = true;  // random rotation, shift and flip per region image

  void validate() const;
};

// min_lr + (base_lr - min_lr) (1 + cos(pi step / total)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, const OptimConfig& cfg);

// Heavy-ball SGD: buf = momentum * buf + g; w -= lr * buf.
template <typename T>
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum = 0.9) : momentum_(momentum) {}

  void step(std::vector<Tensor<T>>& params, double lr);

  const std::vector<std::vector<T>>& buffers() const { return buffers_; }
  void set_buffers(std::vector<std::vector<T>> buffers) { buffers_ = std::move(buffers); }

 private:
  double momentum_;
  std::vector<std::vector<T>> buffers_;
};

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params);

// Runs one forward + backward pass that fills parameter gradients.
using LossClosure = std::function<LossBreakdown()>;

// Sharpness-aware step: gradient g at w, ascend to w + rho g / ||g|| (global
// norm), recompute the gradient there, restore w from a stored copy and take
// the base step with that second gradient. A zero gradient or rho = 0 skips
// the ascent and takes a plain step. Returns the loss measured at w.
template <typename T>
LossBreakdown sam_step(std::vector<Tensor<T>>& params, const LossClosure& compute_loss, double lr,
                       const OptimConfig& cfg, MomentumSgd<T>& base);

}  // namespace sat
