#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sat/labels.hpp"
#include "sat/model.hpp"

namespace sat {

// Total maturity score: lateral condyle + trochlea + olecranon plus the mean
// of the two proximal-radius views. Needs exactly five scores in canonical
// region order.
double sauvegrain_sum(std::span<const double> scores);

// Monotone piecewise-linear score -> age (years) conversion.
struct AgeMap {
  std::vector<std::pair<double, double>> knots;  // (total score, age), increasing in both

  void validate() const;
  static AgeMap linear_default();  // (0, 8) -> (27, 16)
  static AgeMap from_json_file(const std::filesystem::path& path);
};

struct AgeEstimate {
  double years = 0.0;
  bool clamped = false;  // the score fell outside the knot range
};

AgeEstimate score_to_age(double sum, const AgeMap& map);

double mae(std::span<const double> pred, std::span<const double> truth);

// Percentage of pairs with |pred - truth| <= theta.
double cumulative_score(std::span<const double> pred, std::span<const double> truth, double theta);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // non-zero differences
  bool exact = true;
};

// Paired two-sided signed-rank test on a - b. Zero differences are dropped
// and tied magnitudes share their average rank. Up to 25 non-zero
// differences the null distribution is enumerated exactly; beyond that a
// tie-corrected normal approximation with continuity correction is used.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// Mean post-softmax mass from CLS row r to its own regional column R + r,
// over all records (layers, heads and samples).
std::vector<double> anisotropy(const std::vector<AttentionRecord>& records, std::size_t regions);

struct CsEntry {
  double theta = 0.0;
  std::vector<double> per_region;  // percent
  std::optional<double> sum;       // percent, when the total score is defined
};

struct EvalReport {
  std::string variant;
  std::size_t num_samples = 0;
  std::vector<double> per_region_mae;
  std::optional<double> sum_mae;
  std::optional<double> baa_mae;
  std::vector<CsEntry> cs;
  std::vector<double> anisotropy;
  double mean_anisotropy = 0.0;
  std::size_t age_clamped = 0;  // predictions or truths outside the age map

  // Per-sample absolute errors, kept at full precision for paired tests.
  std::vector<std::vector<double>> region_abs_errors;  // [N][R]
  std::vector<double> sum_abs_errors;
  std::vector<double> baa_abs_errors;
};

// Summary values are rounded to six significant digits once, here, so every
// serialisation carries the same numbers.
EvalReport build_report(const LabelMatrix& pred, const LabelMatrix& truth, const std::vector<double>& thetas,
                        const AgeMap& age_map, const std::vector<AttentionRecord>& records,
                        const std::string& variant);

double round_sig6(double x);
std::string format_sig6(double x);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_json(const std::filesystem::path& path);

}  // namespace sat
