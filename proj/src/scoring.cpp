#include "sat/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sat/errors.hpp"

namespace sat {

using nlohmann::json;

double sauvegrain_sum(std::span<const double> s) {
  if (s.size() != 5) {
    throw ConfigError("sauvegrain_sum needs 5 region scores, got " + std::to_string(s.size()));
  }
  return s[0] + s[1] + (s[2] + s[4]) / 2.0 + s[3];
}

void AgeMap::validate() const {
  if (knots.size() < 2) throw ConfigError("age map needs at least two knots");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i].first > knots[i - 1].first) || !(knots[i].second > knots[i - 1].second)) {
      throw ConfigError("age map knots must be strictly increasing in score and age");
    }
  }
}

AgeMap AgeMap::linear_default() {
  return AgeMap{{{0.0, 8.0}, {27.0, 16.0}}};
}

AgeMap AgeMap::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open age map " + path.string());
  AgeMap map;
  try {
    const json j = json::parse(is);
    for (const auto& k : j.at("knots")) map.knots.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
  } catch (const json::exception& e) {
    throw ConfigError("bad age map " + path.string() + ": " + e.what());
  }
  map.validate();
  return map;
}

AgeEstimate score_to_age(double sum, const AgeMap& map) {
  map.validate();
  const auto& k = map.knots;
  if (sum <= k.front().first) return {k.front().second, sum < k.front().first};
  if (sum >= k.back().first) return {k.back().second, sum > k.back().first};
  auto hi = std::upper_bound(k.begin(), k.end(), sum, [](double v, const auto& knot) { return v < knot.first; });
  auto lo = hi - 1;
  if (sum == lo->first) return {lo->second, false};
  const double w = (sum - lo->first) / (hi->first - lo->first);
  return {lo->second + w * (hi->second - lo->second), false};
}

namespace {

void check_pairs(std::span<const double> pred, std::span<const double> truth, const char* what) {
  if (pred.size() != truth.size()) throw DataError(std::string(what) + ": length mismatch");
  if (pred.empty()) throw DataError(std::string(what) + ": empty input");
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pairs(pred, truth, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size());
}

double cumulative_score(std::span<const double> pred, std::span<const double> truth, double theta) {
  check_pairs(pred, truth, "cumulative_score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += std::abs(pred[i] - truth[i]) <= theta ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("wilcoxon: samples are not paired (length mismatch)");
  if (a.size() < 6) throw DataError("wilcoxon: need at least 6 pairs");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult res;
  res.n = diffs.size();
  if (diffs.empty()) return res;

  // Average ranks of |d|, kept doubled so that half ranks stay integral.
  std::vector<std::size_t> order(diffs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> rank2(diffs.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const auto t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<long>(i + j + 2);  // 2 * mean rank
    i = j + 1;
  }
  long plus2 = 0, minus2 = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? plus2 : minus2) += rank2[i];
  res.w_plus = static_cast<double>(plus2) / 2.0;
  res.w_minus = static_cast<double>(minus2) / 2.0;
  res.statistic = std::min(res.w_plus, res.w_minus);
  const long stat2 = std::min(plus2, minus2);
  const auto n = static_cast<double>(diffs.size());

  if (diffs.size() <= 25) {
    // Number of sign patterns per achievable doubled W+.
    const long total2 = plus2 + minus2;
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
      reach += r;
    }
    double tail = 0.0;
    for (long s = 0; s <= stat2; ++s) tail += ways[static_cast<std::size_t>(s)];
    res.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(diffs.size())));
    res.exact = true;
  } else {
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    res.exact = false;
  }
  return res;
}

std::vector<double> anisotropy(const std::vector<AttentionRecord>& records, std::size_t regions) {
  if (records.empty()) throw DataError("anisotropy: no attention records");
  const std::size_t n = 2 * regions;
  std::vector<double> out(regions, 0.0);
  for (const auto& rec : records) {
    if (rec.post_softmax.shape() != Shape{n, n}) {
      throw DimensionError("anisotropy: record is " + to_string(rec.post_softmax.shape()) + ", expected " +
                           to_string({n, n}));
    }
    for (std::size_t r = 0; r < regions; ++r) out[r] += rec.post_softmax[r * n + regions + r];
  }
  for (auto& v : out) v /= static_cast<double>(records.size());
  return out;
}

double round_sig6(double x) {
  return std::strtod(format_sig6(x).c_str(), nullptr);
}

std::string format_sig6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

EvalReport build_report(const LabelMatrix& pred, const LabelMatrix& truth, const std::vector<double>& thetas,
                        const AgeMap& age_map, const std::vector<AttentionRecord>& records,
                        const std::string& variant) {
  if (pred.rows != truth.rows || pred.cols != truth.cols) throw DataError("report: prediction/truth shape mismatch");
  if (pred.rows == 0) throw DataError("report: no samples");
  const std::size_t N = pred.rows, R = pred.cols;
  EvalReport rep;
  rep.variant = variant;
  rep.num_samples = N;

  std::vector<std::vector<double>> p(R, std::vector<double>(N)), t(R, std::vector<double>(N));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t r = 0; r < R; ++r) {
      p[r][i] = pred.at(i, r);
      t[r][i] = truth.at(i, r);
    }
  for (std::size_t r = 0; r < R; ++r) rep.per_region_mae.push_back(round_sig6(mae(p[r], t[r])));
  rep.region_abs_errors.assign(N, std::vector<double>(R));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t r = 0; r < R; ++r) rep.region_abs_errors[i][r] = std::abs(p[r][i] - t[r][i]);

  std::vector<double> sum_pred, sum_true;
  if (R == 5) {
    std::vector<double> age_pred, age_true;
    for (std::size_t i = 0; i < N; ++i) {
      const double sp[5] = {p[0][i], p[1][i], p[2][i], p[3][i], p[4][i]};
      const double st[5] = {t[0][i], t[1][i], t[2][i], t[3][i], t[4][i]};
      sum_pred.push_back(sauvegrain_sum(sp));
      sum_true.push_back(sauvegrain_sum(st));
      const AgeEstimate ap = score_to_age(sum_pred.back(), age_map);
      const AgeEstimate at = score_to_age(sum_true.back(), age_map);
      rep.age_clamped += (ap.clamped ? 1 : 0) + (at.clamped ? 1 : 0);
      age_pred.push_back(ap.years);
      age_true.push_back(at.years);
      rep.sum_abs_errors.push_back(std::abs(sum_pred.back() - sum_true.back()));
      rep.baa_abs_errors.push_back(std::abs(age_pred.back() - age_true.back()));
    }
    rep.sum_mae = round_sig6(mae(sum_pred, sum_true));
    rep.baa_mae = round_sig6(mae(age_pred, age_true));
  }
  for (double theta : thetas) {
    CsEntry e;
    e.theta = round_sig6(theta);
    for (std::size_t r = 0; r < R; ++r) e.per_region.push_back(round_sig6(cumulative_score(p[r], t[r], theta)));
    if (R == 5) e.sum = round_sig6(cumulative_score(sum_pred, sum_true, theta));
    rep.cs.push_back(std::move(e));
  }
  if (!records.empty()) {
    const auto values = anisotropy(records, R);
    double mean = 0.0;
    for (double v : values) {
      rep.anisotropy.push_back(round_sig6(v));
      mean += v;
    }
    rep.mean_anisotropy = round_sig6(mean / static_cast<double>(R));
  }
  return rep;
}

namespace {

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void write_report_json(const EvalReport& rep, const std::filesystem::path& path) {
  json j;
  j["version"] = 1;
  j["variant"] = rep.variant;
  j["num_samples"] = rep.num_samples;
  json names = json::array();
  for (std::size_t r = 0; r < rep.per_region_mae.size(); ++r) names.push_back(std::string(region_name(r)));
  j["regions"] = names;
  j["per_region_mae"] = rep.per_region_mae;
  j["sum_mae"] = optional_number(rep.sum_mae);
  j["baa_mae"] = optional_number(rep.baa_mae);
  json cs = json::array();
  for (const auto& e : rep.cs) cs.push_back({{"theta", e.theta}, {"per_region", e.per_region}, {"sum", optional_number(e.sum)}});
  j["cs"] = cs;
  j["anisotropy"] = rep.anisotropy;
  j["mean_anisotropy"] = rep.mean_anisotropy;
  j["age_clamped"] = rep.age_clamped;
  j["per_sample"] = {{"region_abs_errors", rep.region_abs_errors},
                     {"sum_abs_errors", rep.sum_abs_errors},
                     {"baa_abs_errors", rep.baa_abs_errors}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + path.string());
}

void write_report_csv(const EvalReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "row,mae";
  for (const auto& e : rep.cs) os << ",cs_" << format_sig6(e.theta);
  os << ",anisotropy\n";
  for (std::size_t r = 0; r < rep.per_region_mae.size(); ++r) {
    os << region_name(r) << ',' << format_sig6(rep.per_region_mae[r]);
    for (const auto& e : rep.cs) os << ',' << format_sig6(e.per_region[r]);
    os << ',' << (r < rep.anisotropy.size() ? format_sig6(rep.anisotropy[r]) : "") << '\n';
  }
  if (rep.sum_mae) {
    os << "sum," << format_sig6(*rep.sum_mae);
    for (const auto& e : rep.cs) os << ',' << format_sig6(*e.sum);
    os << ",\n";
  }
  if (rep.baa_mae) {
    os << "baa," << format_sig6(*rep.baa_mae);
    for (std::size_t i = 0; i < rep.cs.size(); ++i) os << ',';
    os << ",\n";
  }
  if (!rep.anisotropy.empty()) {
    os << "mean_anisotropy,";
    for (std::size_t i = 0; i < rep.cs.size(); ++i) os << ',';
    os << ',' << format_sig6(rep.mean_anisotropy) << '\n';
  }
  if (!os) throw IoError("cannot write " + path.string());
}

EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open report " + path.string());
  EvalReport rep;
  try {
    const json j = json::parse(is);
    rep.variant = j.at("variant").get<std::string>();
    rep.num_samples = j.at("num_samples").get<std::size_t>();
    rep.per_region_mae = j.at("per_region_mae").get<std::vector<double>>();
    rep.sum_mae = read_optional(j, "sum_mae");
    rep.baa_mae = read_optional(j, "baa_mae");
    for (const auto& e : j.at("cs")) {
      rep.cs.push_back({e.at("theta").get<double>(), e.at("per_region").get<std::vector<double>>(),
                        read_optional(e, "sum")});
    }
    rep.anisotropy = j.at("anisotropy").get<std::vector<double>>();
    rep.mean_anisotropy = j.at("mean_anisotropy").get<double>();
    rep.age_clamped = j.at("age_clamped").get<std::size_t>();
    const json& ps = j.at("per_sample");
    rep.region_abs_errors = ps.at("region_abs_errors").get<std::vector<std::vector<double>>>();
    rep.sum_abs_errors = ps.at("sum_abs_errors").get<std::vector<double>>();
    rep.baa_abs_errors = ps.at("baa_abs_errors").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError("corrupt report " + path.string() + ": " + e.what());
  }
  return rep;
}

}  // namespace sat
