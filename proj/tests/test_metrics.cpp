#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "mhml/metrics.hpp"
#include "mhml/rng.hpp"

using namespace mhml;
using namespace mhml::metrics;

namespace {

// Independent ECE: per-sample scan over bin edges using division instead
// of the ceil-multiply in the implementation.
double brute_force_ece(const std::vector<double>& conf, const std::vector<std::uint8_t>& correct,
                       std::size_t n_bins) {
  double total = 0.0;
  for (std::size_t s = 1; s <= n_bins; ++s) {
    const double lo = static_cast<double>(s - 1) / static_cast<double>(n_bins);
    const double hi = static_cast<double>(s) / static_cast<double>(n_bins);
    double conf_sum = 0.0;
    std::size_t count = 0, right = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const bool in_bin = (conf[i] > lo && conf[i] <= hi) || (s == 1 && conf[i] == 0.0);
      if (!in_bin) continue;
      ++count;
      conf_sum += conf[i];
      right += correct[i] ? 1 : 0;
    }
    if (count == 0) continue;
    const double acc = static_cast<double>(right) / static_cast<double>(count);
    const double mean_conf = conf_sum / static_cast<double>(count);
    total += static_cast<double>(count) / static_cast<double>(conf.size()) * std::abs(acc - mean_conf);
  }
  return total;
}

Matrix rows_from(std::initializer_list<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::copy(r.begin(), r.end(), m.row(i).begin());
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("ece basic cases") {
  const std::vector<double> perfect_conf(10, 1.0);
  const std::vector<std::uint8_t> all_right(10, 1);
  CHECK(ece(perfect_conf, all_right, 15) == 0.0);

  // Random binary predictor: confidence 0.5 everywhere, half correct.
  std::vector<double> half_conf(100, 0.5);
  std::vector<std::uint8_t> half_right(100, 0);
  for (std::size_t i = 0; i < 50; ++i) half_right[i] = 1;
  CHECK(ece(half_conf, half_right, 15) == 0.0);

  // Single occupied bin: |1.0 - 0.75| = 0.25.
  const std::vector<double> conf{0.6, 0.7, 0.8, 0.9};
  const std::vector<std::uint8_t> correct{1, 1, 1, 1};
  CHECK(ece(conf, correct, 2) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("ece input validation") {
  const std::vector<double> ok{0.5};
  const std::vector<std::uint8_t> one{1};
  CHECK_THROWS_AS(ece(std::vector<double>{}, std::vector<std::uint8_t>{}, 10), std::invalid_argument);
  CHECK_THROWS_AS(ece(std::vector<double>{1.5}, one, 10), std::invalid_argument);
  CHECK_THROWS_AS(ece(std::vector<double>{-0.1}, one, 10), std::invalid_argument);
  CHECK_THROWS_AS(ece(ok, one, 0), std::invalid_argument);
}

TEST_CASE("ece agrees with the brute-force oracle on random inputs") {
  Rng rng(51);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t bins = 1 + rng.below(20);
    std::vector<double> conf(n);
    std::vector<std::uint8_t> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = rng.uniform();
      correct[i] = rng.below(2) ? 1 : 0;
    }
    CHECK(std::abs(ece(conf, correct, bins) - brute_force_ece(conf, correct, bins)) <= 1e-12);
  }
}

TEST_CASE("ece properties: permutation invariance, bounds, one-bin identity") {
  Rng rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> conf(n);
    std::vector<std::uint8_t> correct(n);
    double conf_mean = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = rng.uniform();
      correct[i] = rng.below(2) ? 1 : 0;
      conf_mean += conf[i];
      acc += correct[i];
    }
    conf_mean /= static_cast<double>(n);
    acc /= static_cast<double>(n);

    const double e = ece(conf, correct, 12);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    CHECK(std::abs(ece(conf, correct, 1) - std::abs(acc - conf_mean)) <= 1e-12);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> conf_p(n);
    std::vector<std::uint8_t> correct_p(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf_p[i] = conf[perm[i]];
      correct_p[i] = correct[perm[i]];
    }
    // Bin sums accumulate in a different order, so allow last-ulp drift.
    CHECK(ece(conf_p, correct_p, 12) == Catch::Approx(e).margin(1e-14));
  }
}

TEST_CASE("reliability_table covers empty bins and recomposes the ece") {
  const std::vector<double> conf{0.95};
  const std::vector<std::uint8_t> correct{1};
  const auto bins = reliability_table(conf, correct, 10);
  REQUIRE(bins.size() == 10);
  for (std::size_t s = 0; s < 10; ++s) {
    if (s == 9) {
      CHECK(bins[s].count == 1);
      CHECK(bins[s].acc == 1.0);
      CHECK(bins[s].conf == Catch::Approx(0.95).margin(1e-15));
    } else {
      CHECK(bins[s].count == 0);
      CHECK(bins[s].acc == 0.0);
      CHECK(bins[s].conf == 0.0);
    }
    CHECK(bins[s].lo == Catch::Approx(s / 10.0).margin(1e-15));
    CHECK(bins[s].hi == Catch::Approx((s + 1) / 10.0).margin(1e-15));
  }

  Rng rng(53);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> c(n);
    std::vector<std::uint8_t> ok(n);
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = rng.uniform();
      ok[i] = rng.below(2) ? 1 : 0;
    }
    const auto table = reliability_table(c, ok, 15);
    std::size_t total = 0;
    for (const BinStats& b : table) total += b.count;
    CHECK(total == n);
    CHECK(std::abs(ece_from_table(table, n) - ece(c, ok, 15)) <= 1e-15);

    // Brute-force per-sample bin assignment.
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t expected = 0;
      for (std::size_t s = 1; s <= 15; ++s) {
        const double lo = static_cast<double>(s - 1) / 15.0;
        const double hi = static_cast<double>(s) / 15.0;
        if ((c[i] > lo && c[i] <= hi) || (s == 1 && c[i] == 0.0)) expected = s - 1;
      }
      CHECK(bin_index(c[i], 15) == expected);
    }
  }
}

TEST_CASE("nll examples") {
  CHECK(nll(rows_from({{0.5, 0.5}}), std::vector<int>{0}) ==
        Catch::Approx(0.6931471805599453).margin(1e-12));
  CHECK(nll(rows_from({{1.0, 0.0}, {0.0, 1.0}}), std::vector<int>{0, 1}) == 0.0);
  // Independent arithmetic: (-ln 0.8 - ln 0.6) / 2 = 0.3669845875401002.
  CHECK(nll(rows_from({{0.8, 0.2}, {0.4, 0.6}}), std::vector<int>{0, 1}) ==
        Catch::Approx(0.3669845875401002).margin(1e-12));
  CHECK_THROWS_AS(nll(rows_from({{0.5, 0.5}}), std::vector<int>{2}), std::invalid_argument);
}

TEST_CASE("brier examples") {
  CHECK(brier(rows_from({{1.0, 0.0}}), std::vector<int>{0}) == 0.0);
  CHECK(brier(rows_from({{0.5, 0.5}}), std::vector<int>{0}) == Catch::Approx(0.5).margin(1e-15));
  CHECK(brier(rows_from({{0.7, 0.2, 0.1}}), std::vector<int>{0}) ==
        Catch::Approx(0.14).margin(1e-12));
}

TEST_CASE("accuracy and its tie-break") {
  CHECK(accuracy(rows_from({{1.0, 0.0}, {0.0, 1.0}}), std::vector<int>{0, 1}) == 1.0);
  CHECK(accuracy(rows_from({{0.0, 1.0}, {1.0, 0.0}}), std::vector<int>{0, 1}) == 0.0);
  const Matrix uniform = rows_from({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}});
  CHECK(accuracy(uniform, std::vector<int>{0, 0}) == 1.0);
}

TEST_CASE("proper scoring rules are permutation invariant and bounded") {
  Rng rng(54);
  const std::size_t n = 30, k = 4;
  Matrix probs(n, k);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-3.0, 3.0);
    const auto p = softmax(z);
    std::copy(p.begin(), p.end(), probs.row(i).begin());
    labels[i] = static_cast<int>(rng.below(k));
  }
  const double base_nll = nll(probs, labels);
  const double base_brier = brier(probs, labels);
  const double base_acc = accuracy(probs, labels);
  CHECK(base_nll >= 0.0);
  CHECK(base_brier >= 0.0);
  CHECK(base_brier <= 2.0);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Matrix probs_p(n, k);
  std::vector<int> labels_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(probs.row(perm[i]).begin(), probs.row(perm[i]).end(), probs_p.row(i).begin());
    labels_p[i] = labels[perm[i]];
  }
  CHECK(nll(probs_p, labels_p) == Catch::Approx(base_nll).margin(1e-13));
  CHECK(brier(probs_p, labels_p) == Catch::Approx(base_brier).margin(1e-13));
  CHECK(accuracy(probs_p, labels_p) == base_acc);
}

namespace {

CalibrationReport stub_report(const std::string& method, double acc, double ece_v, double nll_v) {
  CalibrationReport r;
  r.method = method;
  r.split = "test";
  r.accuracy = acc;
  r.ece = ece_v;
  r.nll = nll_v;
  return r;
}

}  // namespace

TEST_CASE("rank_aggregate reproduces the reference nine-method column") {
  const std::vector<CalibrationReport> reports{
      stub_report("SL1H", 80.71, 5.79, 53.46),  stub_report("LS", 74.81, 2.55, 64.27),
      stub_report("MbLS", 75.02, 3.26, 63.86),  stub_report("MixUp", 76.00, 3.67, 62.72),
      stub_report("DCA", 76.17, 5.75, 62.13),   stub_report("D-Ens", 82.19, 2.42, 46.64),
      stub_report("2HSL", 80.97, 4.36, 51.42),  stub_report("2HML", 80.28, 4.49, 51.86),
      stub_report("4HML", 81.13, 3.09, 49.44)};
  const RankTable table = rank_aggregate(reports);
  const auto avg = [&](const std::string& m) {
    for (const RankRow& row : table.rows) {
      if (row.method == m) return row.avg_rank;
    }
    FAIL("missing method " + m);
    return -1.0;
  };
  CHECK(std::round(avg("D-Ens") * 10) / 10 == 1.0);
  CHECK(std::round(avg("4HML") * 10) / 10 == 2.3);
  CHECK(avg("4HML") == Catch::Approx(7.0 / 3.0).margin(1e-12));
  CHECK(std::round(avg("SL1H") * 10) / 10 == 6.0);
  CHECK(std::round(avg("LS") * 10) / 10 == 6.7);
  CHECK(std::round(avg("MbLS") * 10) / 10 == 6.7);
  CHECK(std::round(avg("DCA") * 10) / 10 == 6.7);
  CHECK(std::round(avg("MixUp") * 10) / 10 == 6.3);
  CHECK(std::round(avg("2HSL") * 10) / 10 == 4.0);
  CHECK(std::round(avg("2HML") * 10) / 10 == 5.3);
}

TEST_CASE("rank_aggregate ties and the sort oracle") {
  const std::vector<CalibrationReport> tied{stub_report("a", 0.8, 0.1, 0.5),
                                            stub_report("b", 0.8, 0.1, 0.5)};
  const RankTable t = rank_aggregate(tied);
  CHECK(t.rows[0].avg_rank == 1.5);
  CHECK(t.rows[1].avg_rank == 1.5);

  Rng rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<CalibrationReport> reports;
    for (int i = 0; i < 3; ++i) {
      reports.push_back(stub_report("m" + std::to_string(i), rng.uniform(), rng.uniform(),
                                    rng.uniform()));
    }
    const RankTable table = rank_aggregate(reports);

    // Sort-based recomputation, one metric at a time.
    const auto oracle_rank = [&](auto getter, bool desc, std::size_t idx) {
      std::vector<double> vals;
      for (const auto& r : reports) vals.push_back(getter(r));
      double rank = 1.0;
      for (std::size_t j = 0; j < vals.size(); ++j) {
        if (j == idx) continue;
        if (desc ? vals[j] > vals[idx] : vals[j] < vals[idx]) rank += 1.0;
        if (vals[j] == vals[idx] && j < idx) rank += 0.0;  // handled by tie averaging below
      }
      // With distinct random doubles ties are absent, so plain counting works.
      return rank;
    };
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const double exp_acc = oracle_rank([](const auto& r) { return r.accuracy; }, true, i);
      const double exp_ece = oracle_rank([](const auto& r) { return r.ece; }, false, i);
      const double exp_nll = oracle_rank([](const auto& r) { return r.nll; }, false, i);
      CHECK(table.rows[i].acc_rank == exp_acc);
      CHECK(table.rows[i].ece_rank == exp_ece);
      CHECK(table.rows[i].nll_rank == exp_nll);
      rank_sum += table.rows[i].acc_rank;
    }
    CHECK(rank_sum == Catch::Approx(6.0).margin(1e-12));  // n(n+1)/2 for n=3
  }
}

TEST_CASE("rank_aggregate rejects mismatched splits and single methods") {
  std::vector<CalibrationReport> reports{stub_report("a", 1, 0, 0), stub_report("b", 1, 0, 0)};
  reports[1].split = "val";
  CHECK_THROWS_AS(rank_aggregate(reports), std::invalid_argument);
  CHECK_THROWS_AS(rank_aggregate({stub_report("a", 1, 0, 0)}), std::invalid_argument);
}

TEST_CASE("report JSON round-trip is byte-stable") {
  Rng rng(56);
  CalibrationReport r;
  r.method = "4HML";
  r.split = "test";
  r.n_samples = 100;
  r.accuracy = 0.87345678901;
  r.ece = 0.0234567890123;
  r.nll = 1.2345678901234;
  r.brier = 0.4567890123456;
  std::vector<double> conf(100);
  std::vector<std::uint8_t> ok(100);
  for (std::size_t i = 0; i < 100; ++i) {
    conf[i] = rng.uniform();
    ok[i] = rng.below(2) ? 1 : 0;
  }
  r.bins = reliability_table(conf, ok, 15);

  const nlohmann::json j1 = r;
  const auto parsed = j1.get<CalibrationReport>();
  const nlohmann::json j2 = parsed;
  CHECK(j1.dump() == j2.dump());
  CHECK(parsed.n_samples == r.n_samples);
  CHECK(parsed.method == r.method);
}
