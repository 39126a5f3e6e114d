#include "sat/objective.hpp"

#include <string>

#include "sat/ops.hpp"

namespace sat {

void LossWeights::validate() const {
  if (lambda_mu < 0.0 || lambda_var < 0.0) throw ConfigError("loss weights must be non-negative");
}

template <typename T>
LossBreakdown LossTerms<T>::breakdown() const {
  LossBreakdown b;
  b.ce = static_cast<double>(ce.item());
  b.mean = static_cast<double>(mean.item());
  b.variance = static_cast<double>(variance.item());
  b.total = b.ce + weights.lambda_mu * b.mean + weights.lambda_var * b.variance;
  return b;
}

namespace {

template <typename T>
void check_inputs(const std::vector<Tensor<T>>& dists, const LabelMatrix* labels) {
  if (dists.empty()) throw DataError("loss: no regions");
  const std::size_t batch = dists[0].rank() == 2 ? dists[0].dim(0) : 0;
  for (const auto& t : dists) {
    if (t.rank() != 2 || t.dim(0) != batch) throw DimensionError("loss: every region needs a [B, K_r] tensor");
  }
  if (labels == nullptr) return;
  if (labels->rows != batch || labels->cols != dists.size()) {
    throw DimensionError("loss: labels must be [" + std::to_string(batch) + ", " + std::to_string(dists.size()) + "]");
  }
  for (std::size_t r = 0; r < dists.size(); ++r) {
    const auto k = static_cast<int>(dists[r].dim(1));
    for (std::size_t b = 0; b < batch; ++b) {
      const int y = labels->at(b, r);
      if (y < 1 || y > k) {
        throw DataError("label " + std::to_string(y) + " out of range [1, " + std::to_string(k) + "] for region " +
                        std::to_string(r));
      }
    }
  }
}

// [K, 1] column 1..K
template <typename T>
Tensor<T> score_column(std::size_t k) {
  std::vector<T> v(k);
  for (std::size_t j = 0; j < k; ++j) v[j] = static_cast<T>(j + 1);
  return Tensor<T>({k, 1}, std::move(v));
}

template <typename T>
Tensor<T> accumulate(const Tensor<T>& acc, const Tensor<T>& term) {
  return acc.defined() ? add(acc, term) : term;
}

}  // namespace

template <typename T>
Tensor<T> mean_loss(const std::vector<Tensor<T>>& probs, const LabelMatrix& labels) {
  check_inputs(probs, &labels);
  const std::size_t batch = probs[0].dim(0);
  Tensor<T> acc;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    Tensor<T> mu = matmul(probs[r], score_column<T>(probs[r].dim(1)));  // [B, 1]
    std::vector<T> y(batch);
    for (std::size_t b = 0; b < batch; ++b) y[b] = static_cast<T>(labels.at(b, r));
    Tensor<T> diff = sub(mu, Tensor<T>({batch, 1}, std::move(y)));
    acc = accumulate(acc, sum(mul(diff, diff)));
  }
  return scale(acc, T(1) / static_cast<T>(batch * probs.size()));
}

template <typename T>
Tensor<T> variance_loss(const std::vector<Tensor<T>>& probs) {
  check_inputs<T>(probs, nullptr);
  const std::size_t batch = probs[0].dim(0);
  Tensor<T> acc;
  for (const auto& p : probs) {
    const std::size_t k = p.dim(1);
    Tensor<T> mu = matmul(p, score_column<T>(k));                                 // [B, 1]
    Tensor<T> mu_wide = matmul(mu, Tensor<T>::full({1, k}, T(1)));                // [B, K]
    Tensor<T> diff = sub(mu_wide, reshape(score_column<T>(k), {k}));              // mu - k
    acc = accumulate(acc, sum(mul(p, mul(diff, diff))));
  }
  return scale(acc, T(1) / static_cast<T>(batch * probs.size()));
}

template <typename T>
Tensor<T> ce_loss(const std::vector<Tensor<T>>& logits, const LabelMatrix& labels) {
  check_inputs(logits, &labels);
  const std::size_t batch = logits[0].dim(0);
  Tensor<T> acc;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    std::vector<std::size_t> target(batch);
    for (std::size_t b = 0; b < batch; ++b) target[b] = static_cast<std::size_t>(labels.at(b, r) - 1);
    acc = accumulate(acc, sum(gather_rows(log_softmax_rows(logits[r]), target)));
  }
  return scale(acc, T(-1) / static_cast<T>(batch * logits.size()));
}

template <typename T>
LossTerms<T> total_loss(const std::vector<Tensor<T>>& logits, const LabelMatrix& labels, const LossWeights& weights) {
  weights.validate();
  std::vector<Tensor<T>> probs;
  probs.reserve(logits.size());
  for (const auto& l : logits) probs.push_back(softmax_rows(l));
  LossTerms<T> terms;
  terms.weights = weights;
  terms.ce = ce_loss(logits, labels);
  terms.mean = mean_loss(probs, labels);
  terms.variance = variance_loss(probs);
  terms.total = add(add(terms.ce, scale(terms.mean, static_cast<T>(weights.lambda_mu))),
                    scale(terms.variance, static_cast<T>(weights.lambda_var)));
  return terms;
}

#define SAT_INSTANTIATE_OBJECTIVE(T)                                                                  \
  template struct LossTerms<T>;                                                                       \
  template Tensor<T> mean_loss(const std::vector<Tensor<T>>&, const LabelMatrix&);                    \
  template Tensor<T> variance_loss(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> ce_loss(const std::vector<Tensor<T>>&, const LabelMatrix&);                      \
  template LossTerms<T> total_loss(const std::vector<Tensor<T>>&, const LabelMatrix&, const LossWeights&);

SAT_INSTANTIATE_OBJECTIVE(float)
SAT_INSTANTIATE_OBJECTIVE(double)

#undef SAT_INSTANTIATE_OBJECTIVE

}  // namespace sat
