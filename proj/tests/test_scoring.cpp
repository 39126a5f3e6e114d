#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sat/errors.hpp"
#include "sat/scoring.hpp"
#include "sat/synthdata.hpp"

using namespace sat;
namespace fs = std::filesystem;

namespace {

// Average ranks by direct counting, then every sign pattern.
double brute_force_p(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0) d.push_back(x);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++below;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  double observed = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) observed += rank[i];
  }
  const double centre = total / 2.0;
  std::size_t extreme = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) w += rank[i];
    if (std::abs(w - centre) >= std::abs(observed - centre) - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(std::size_t{1} << n);
}

std::vector<AttentionRecord> uniform_records(std::size_t regions, std::size_t count) {
  const std::size_t n = 2 * regions;
  std::vector<AttentionRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    AttentionRecord rec;
    rec.layer = i;
    rec.pre_softmax = Tensor<double>::zeros({n, n});
    rec.post_softmax = Tensor<double>::full({n, n}, 1.0 / static_cast<double>(n));
    out.push_back(rec);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("sauvegrain sum") {
  const std::vector<double> max_case{9, 5, 6, 7, 6};
  CHECK(sauvegrain_sum(max_case) == 27.0);
  CHECK(sauvegrain_sum(std::vector<double>{1, 1, 1, 1, 1}) == 4.0);
  CHECK(sauvegrain_sum(std::vector<double>{2, 3, 4, 5, 6}) == 15.0);
  CHECK_THROWS_AS(sauvegrain_sum(std::vector<double>{1, 2, 3, 4}), ConfigError);
  CHECK_THROWS_AS(sauvegrain_sum(std::vector<double>{1, 2, 3, 4, 5, 6}), ConfigError);
}

TEST_CASE("sauvegrain sum is linear and role-sensitive") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(0.0, 9.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(5), b(5), mix(5);
    for (int i = 0; i < 5; ++i) {
      a[i] = dist(rng);
      b[i] = dist(rng);
      mix[i] = 2.0 * a[i] - 0.5 * b[i];
    }
    CHECK(sauvegrain_sum(mix) == doctest::Approx(2.0 * sauvegrain_sum(a) - 0.5 * sauvegrain_sum(b)));
  }
  // Swapping the two proximal views is neutral; swapping condyle and proximal-AP is not.
  CHECK(sauvegrain_sum(std::vector<double>{1, 2, 3, 4, 5}) == sauvegrain_sum(std::vector<double>{1, 2, 5, 4, 3}));
  CHECK(sauvegrain_sum(std::vector<double>{1, 2, 3, 4, 5}) != sauvegrain_sum(std::vector<double>{3, 2, 1, 4, 5}));
}

TEST_CASE("noise-free sum grows with the latent") {
  SynthConfig cfg;
  cfg.num_samples = 300;
  cfg.image_size = 8;
  cfg.label_noise_sigma = 0.0;
  auto samples = generate(cfg);
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.latent_t < b.latent_t; });
  double prev = -1.0;
  for (const auto& s : samples) {
    std::vector<double> scores(s.labels.begin(), s.labels.end());
    const double total = sauvegrain_sum(scores);
    CHECK(total >= prev);
    prev = total;
  }
}

TEST_CASE("score to age") {
  auto map = AgeMap::linear_default();
  CHECK(score_to_age(13.5, map).years == 12.0);
  CHECK(score_to_age(0.0, map).years == 8.0);
  CHECK(score_to_age(27.0, map).years == 16.0);
  CHECK_FALSE(score_to_age(27.0, map).clamped);
  auto low = score_to_age(-1.0, map);
  CHECK(low.years == 8.0);
  CHECK(low.clamped);
  auto high = score_to_age(30.0, map);
  CHECK(high.years == 16.0);
  CHECK(high.clamped);

  AgeMap identity{{{0.0, 0.0}, {27.0, 27.0}}};
  CHECK(score_to_age(13.5, identity).years == 13.5);

  AgeMap kinked{{{0.0, 8.0}, {10.0, 9.0}, {20.0, 14.0}, {27.0, 16.0}}};
  CHECK(score_to_age(10.0, kinked).years == 9.0);
  CHECK(score_to_age(20.0, kinked).years == 14.0);
  CHECK(score_to_age(15.0, kinked).years == doctest::Approx(11.5));
  double prev = -1.0;
  for (double s = -2.0; s <= 29.0; s += 0.25) {
    const double y = score_to_age(s, kinked).years;
    CHECK(y >= prev);
    prev = y;
  }
  AgeMap bad{{{0.0, 8.0}, {10.0, 7.0}}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  AgeMap single;
  single.knots = {{0.0, 8.0}};
  CHECK_THROWS_AS(single.validate(), ConfigError);
}

TEST_CASE("age map from file") {
  auto path = fs::temp_directory_path() / "sat_agemap.json";
  std::ofstream(path) << R"({"knots": [[0, 7], [13.5, 11], [27, 15]]})";
  auto map = AgeMap::from_json_file(path);
  CHECK(map.knots.size() == 3);
  CHECK(score_to_age(13.5, map).years == 11.0);
  std::ofstream(path) << R"({"knots": [[0, 7], [0, 11]]})";
  CHECK_THROWS_AS(AgeMap::from_json_file(path), ConfigError);
  fs::remove(path);
}

TEST_CASE("mae and cumulative score") {
  CHECK(mae(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(mae(std::vector<double>{3, 5}, std::vector<double>{4, 5}) == 0.5);
  CHECK(mae(std::vector<double>{5, 3}, std::vector<double>{5, 4}) == 0.5);
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), DataError);
  CHECK_THROWS_AS(mae(std::vector<double>{1}, std::vector<double>{1, 2}), DataError);

  const std::vector<double> pred{3, 5, 2}, truth{3, 7, 3};
  CHECK(cumulative_score(pred, truth, 1.0) == doctest::Approx(66.67).epsilon(1e-4));
  CHECK(cumulative_score(pred, truth, 1e9) == 100.0);
  CHECK(cumulative_score(pred, truth, 0.0) == doctest::Approx(100.0 / 3.0));
  double prev = 0.0;
  for (double theta = 0.0; theta <= 3.0; theta += 0.5) {
    const double cs = cumulative_score(pred, truth, theta);
    CHECK(cs >= prev);
    prev = cs;
  }
  CHECK_THROWS_AS(cumulative_score(std::vector<double>{}, std::vector<double>{}, 1.0), DataError);
}

TEST_CASE("wilcoxon exact examples") {
  const std::vector<double> zero(6, 0.0), up{1, 2, 3, 4, 5, 6};
  auto r = wilcoxon_signed_rank(up, zero);
  CHECK(r.statistic == 0.0);
  CHECK(r.w_plus == 21.0);
  CHECK(r.p_value == 0.03125);
  CHECK(r.exact);

  const std::vector<double> eight(8, 1.0), zero8(8, 0.0);
  CHECK(wilcoxon_signed_rank(zero8, eight).p_value == 2.0 / 256.0);

  auto same = wilcoxon_signed_rank(up, up);
  CHECK(same.p_value == 1.0);
  CHECK(same.n == 0);

  const std::vector<double> mixed{1, 2, 3, -4, 5, 6, -7, 8, 9, 10}, zero10(10, 0.0);
  auto m = wilcoxon_signed_rank(mixed, zero10);
  CHECK(m.statistic == 11.0);
  CHECK(m.p_value == doctest::Approx(0.10546875).epsilon(1e-15));
  auto swapped = wilcoxon_signed_rank(zero10, mixed);
  CHECK(swapped.w_plus == m.w_minus);
  CHECK(swapped.w_minus == m.w_plus);
  CHECK(swapped.p_value == m.p_value);

  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), DataError);
  CHECK_THROWS_AS(wilcoxon_signed_rank(up, std::vector<double>(7, 0.0)), DataError);
}

TEST_CASE("wilcoxon exact p matches brute-force enumeration") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> small(-4, 4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 6 + static_cast<std::size_t>(trial % 5);
    std::vector<double> a(n), b(n, 0.0), diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = a[i] = small(rng) * 0.5;
    auto res = wilcoxon_signed_rank(a, b);
    CHECK(res.p_value == doctest::Approx(brute_force_p(diffs)).epsilon(1e-12));
    CHECK(res.p_value > 0.0);
    CHECK(res.p_value <= 1.0);
  }
}

TEST_CASE("wilcoxon normal approximation with ties") {
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(((i * 7) % 11) - 4);
    b.push_back(0.0);
  }
  auto res = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(res.exact);
  CHECK(res.n == 37);
  CHECK(res.statistic == 223.0);
  CHECK(res.p_value == doctest::Approx(0.05255497671780507).epsilon(1e-12));
}

TEST_CASE("anisotropy") {
  auto uni = anisotropy(uniform_records(5, 1), 5);
  for (double v : uni) CHECK(v == doctest::Approx(0.1));

  const std::size_t R = 3, n = 6;
  AttentionRecord focused;
  focused.post_softmax = Tensor<double>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) focused.post_softmax[i * n + (i < R ? R + i : i)] = 1.0;
  for (double v : anisotropy({focused}, R)) CHECK(v == 1.0);

  // Two layers with hand-set CLS rows: own-region mass 0.5 then 0.2.
  auto two = uniform_records(R, 2);
  AttentionRecord l0 = two[0], l1 = two[1];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      l0.post_softmax[r * n + j] = j == R + r ? 0.5 : 0.1;
      l1.post_softmax[r * n + j] = j == R + r ? 0.2 : 0.16;
    }
  }
  for (double v : anisotropy({l0, l1}, R)) CHECK(v == doctest::Approx(0.35));

  CHECK_THROWS_AS(anisotropy({}, 3), DataError);
  CHECK_THROWS_AS(anisotropy(uniform_records(2, 1), 3), DimensionError);
}

TEST_CASE("report construction and serialisation") {
  LabelMatrix truth(4, 5), pred(4, 5);
  const int t[4][5] = {{1, 1, 1, 1, 1}, {9, 5, 6, 7, 6}, {4, 2, 3, 3, 3}, {5, 3, 4, 4, 4}};
  const int p[4][5] = {{1, 1, 1, 1, 1}, {8, 5, 6, 7, 5}, {4, 3, 3, 3, 3}, {6, 3, 2, 5, 4}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t r = 0; r < 5; ++r) {
      truth.at(i, r) = t[i][r];
      pred.at(i, r) = p[i][r];
    }
  auto rep = build_report(pred, truth, {0.5, 1.0}, AgeMap::linear_default(), uniform_records(5, 2), "sat");
  CHECK(rep.per_region_mae == std::vector<double>{0.5, 0.25, 0.5, 0.25, 0.25});
  // sums: truth 4, 27, 12, 16 ; pred 4, 25.5, 13, 17
  REQUIRE(rep.sum_mae);
  CHECK(*rep.sum_mae == 0.875);
  CHECK(*rep.baa_mae == round_sig6(0.875 * 8.0 / 27.0));
  CHECK(rep.sum_abs_errors == std::vector<double>{0.0, 1.5, 1.0, 1.0});
  REQUIRE(rep.cs.size() == 2);
  CHECK(rep.cs[1].per_region[0] == 100.0);
  CHECK(rep.cs[1].per_region[2] == 75.0);
  CHECK(*rep.cs[1].sum == 75.0);
  CHECK(*rep.cs[0].sum == 25.0);
  CHECK(rep.mean_anisotropy == 0.1);

  auto dir = fs::temp_directory_path() / "sat_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_report_json(rep, dir / "report.json");
  write_report_csv(rep, dir / "report.csv");
  auto back = read_report_json(dir / "report.json");
  CHECK(back.per_region_mae == rep.per_region_mae);
  CHECK(back.sum_mae == rep.sum_mae);
  CHECK(back.baa_abs_errors == rep.baa_abs_errors);
  CHECK(back.region_abs_errors == rep.region_abs_errors);

  // The CSV carries the same numbers as the JSON.
  std::istringstream csv(slurp(dir / "report.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "row,mae,cs_0.5,cs_1,anisotropy");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  REQUIRE(rows.size() == 8);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(rows[r][0] == std::string(region_name(r)));
    CHECK(std::stod(rows[r][1]) == rep.per_region_mae[r]);
    CHECK(std::stod(rows[r][2]) == rep.cs[0].per_region[r]);
    CHECK(std::stod(rows[r][3]) == rep.cs[1].per_region[r]);
    CHECK(std::stod(rows[r][4]) == rep.anisotropy[r]);
  }
  CHECK(rows[5][0] == "sum");
  CHECK(std::stod(rows[5][1]) == *rep.sum_mae);
  CHECK(std::stod(rows[5][3]) == *rep.cs[1].sum);
  CHECK(rows[6][0] == "baa");
  CHECK(std::stod(rows[6][1]) == *rep.baa_mae);
  fs::remove_all(dir);
}

TEST_CASE("single theta gives one CS column per region plus the sum") {
  LabelMatrix m(2, 5);
  for (auto& v : m.values) v = 2;
  auto rep = build_report(m, m, {1.0}, AgeMap::linear_default(), {}, "sat");
  REQUIRE(rep.cs.size() == 1);
  CHECK(rep.cs[0].per_region.size() == 5);
  CHECK(rep.cs[0].sum.has_value());
  CHECK(rep.anisotropy.empty());
}

TEST_CASE("six significant digits") {
  CHECK(format_sig6(2.0 / 3.0) == "0.666667");
  CHECK(format_sig6(100.0) == "100");
  CHECK(format_sig6(1234567.0) == "1.23457e+06");
  CHECK(round_sig6(2.0 / 3.0) == 0.666667);
}
