#pragma once

#include <vector>

#include "sat/labels.hpp"
#include "sat/tensor.hpp"

namespace sat {

struct LossWeights {
  double lambda_mu = 0.2;
  double lambda_var = 0.05;

  void validate() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double total = 0.0;
};

template <typename T>
struct LossTerms {
  Tensor<T> ce;
  Tensor<T> mean;
  Tensor<T> variance;
  Tensor<T> total;  // the scalar to differentiate
  LossWeights weights;

  // Component values in double; total is recomposed from them so that it
  // matches ce + lambda_mu * mean + lambda_var * variance exactly.
  LossBreakdown breakdown() const;
};

// probs: R tensors [B, K_r] whose rows are distributions; labels [B, R] in 1..K_r.
// (1/BR) sum_b sum_r (sum_k k p_{r,k} - y_r)^2
template <typename T>
Tensor<T> mean_loss(const std::vector<Tensor<T>>& probs, const LabelMatrix& labels);

// (1/BR) sum_b sum_r sum_k p_{r,k} (k - mu_r)^2
template <typename T>
Tensor<T> variance_loss(const std::vector<Tensor<T>>& probs);

// Mean negative log-likelihood of the labelled class, in log-sum-exp form on logits.
template <typename T>
Tensor<T> ce_loss(const std::vector<Tensor<T>>& logits, const LabelMatrix& labels);

// ce + lambda_mu * mean + lambda_var * variance.
template <typename T>
LossTerms<T> total_loss(const std::vector<Tensor<T>>& logits, const LabelMatrix& labels, const LossWeights& weights);

}  // namespace sat
