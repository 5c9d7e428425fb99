#include "dnslab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dnslab/rng.hpp"
#include "doctest.h"

using namespace dnslab;
using stats::Band;
using stats::CdfSummary;
using stats::FailureRecord;
using stats::KeyedSamples;

namespace {

// independent reference: nearest rank straight from the definition
double brute_quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  double n = double(xs.size());
  size_t rank = 1;
  while (double(rank) < std::ceil(q * n)) ++rank;
  if (rank > xs.size()) rank = xs.size();
  return xs[rank - 1];
}

}  // namespace

TEST_CASE("cdf basics") {
  CdfSummary c = CdfSummary::from_samples({3, 1, 2});
  CHECK(c.median() == 2);
  CHECK(c.mean() == doctest::Approx(2));
  CHECK(c.count() == 3);
  CHECK(c.quantile(0) == 1);
  CHECK(c.quantile(1) == 3);
  CHECK(c.stddev() == doctest::Approx(1.0));
  CHECK_THROWS_AS(CdfSummary::from_samples({}), stats::EmptyInput);
}

TEST_CASE("cdf quantiles match a brute-force reference on random inputs") {
  rng::Rng r(90210);
  for (int iter = 0; iter < 200; ++iter) {
    size_t n = 1 + r.bounded(1000);
    std::vector<double> xs(n);
    for (double& x : xs) x = r.uniform(0, 5000);
    CdfSummary c = CdfSummary::from_samples(xs);
    for (double q : {0.0, 0.01, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 1.0})
      CHECK(c.quantile(q) == brute_quantile(xs, q));
    // two-pass mean/stddev against the streaming accumulator
    stats::Running run;
    for (double x : xs) run.push(x);
    CHECK(run.count() == n);
    CHECK(run.mean() == doctest::Approx(c.mean()).epsilon(1e-9));
    CHECK(run.stddev() == doctest::Approx(c.stddev()).epsilon(1e-9));
  }
}

TEST_CASE("uniform sample median sits near one half") {
  rng::Rng r(7);
  std::vector<double> xs(1000);
  for (double& x : xs) x = r.next_unit();
  CdfSummary c = CdfSummary::from_samples(xs);
  CHECK(c.quantile(0.5) == doctest::Approx(0.5).epsilon(0.1));
  CHECK(std::fabs(c.quantile(0.5) - 0.5) < 0.05);
  CHECK(c.mean() == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("paired diff basics") {
  KeyedSamples a = {{"x.com", 100}, {"y.com", 200}, {"z.com", 300}};
  SUBCASE("identity") {
    stats::PairwiseDiff d = stats::paired_diff("a", a, "a-again", a);
    CHECK(d.diffs.size() == 3);
    for (const auto& [k, v] : d.diffs) CHECK(v == 0);
    CHECK(d.median_diff == 0);
  }
  SUBCASE("constant shift") {
    KeyedSamples b;
    for (const auto& [k, v] : a) b[k] = v - 100;
    stats::PairwiseDiff d = stats::paired_diff("a", a, "b", b);
    CHECK(d.median_diff == doctest::Approx(100));
  }
  SUBCASE("intersection only") {
    KeyedSamples b = {{"y.com", 150}, {"w.com", 999}};
    stats::PairwiseDiff d = stats::paired_diff("a", a, "b", b);
    REQUIRE(d.diffs.size() == 1);
    CHECK(d.diffs[0].first == "y.com");
    CHECK(d.diffs[0].second == 50);
  }
  SUBCASE("no overlap") {
    KeyedSamples b = {{"q.com", 1}};
    CHECK_THROWS_AS(stats::paired_diff("a", a, "b", b), stats::NoCommonKeys);
  }
}

TEST_CASE("paired diff count equals intersection size on random keyed sets") {
  rng::Rng r(55);
  for (int iter = 0; iter < 100; ++iter) {
    KeyedSamples a, b;
    size_t common = 0;
    for (int k = 0; k < 60; ++k) {
      std::string key = "site" + std::to_string(k);
      bool in_a = r.chance(0.6), in_b = r.chance(0.6);
      if (in_a) a[key] = r.uniform(0, 1000);
      if (in_b) b[key] = r.uniform(0, 1000);
      if (in_a && in_b) ++common;
    }
    if (common == 0) {
      if (!a.empty() && !b.empty()) CHECK_THROWS(stats::paired_diff("a", a, "b", b));
      continue;
    }
    stats::PairwiseDiff d = stats::paired_diff("a", a, "b", b);
    CHECK(d.diffs.size() == common);
    // brute force median of diffs
    std::vector<double> vals;
    for (const auto& [k, v] : d.diffs) vals.push_back(v);
    CHECK(d.median_diff == brute_quantile(vals, 0.5));
  }
}

TEST_CASE("similarity band reproduces the reference classifications") {
  stats::PairwiseDiff d;
  d.median_diff = -12;
  CHECK(stats::similarity_band(d) == Band::Similar);
  d.median_diff = -101;
  CHECK(stats::similarity_band(d) == Band::AFaster);
  d.median_diff = 1350;
  CHECK(stats::similarity_band(d) == Band::BFaster);
  d.median_diff = 30;
  CHECK(stats::similarity_band(d) == Band::Similar);
  d.median_diff = -30;
  CHECK(stats::similarity_band(d) == Band::Similar);
  d.median_diff = 31;
  CHECK(stats::similarity_band(d) == Band::BFaster);
  d.median_diff = 100;
  CHECK(stats::similarity_band(d, 150) == Band::Similar);
  CHECK(stats::band_to_string(Band::AFaster) == "AFaster");
}

TEST_CASE("failure table percentages") {
  SUBCASE("simple arithmetic") {
    std::vector<FailureRecord> recs;
    for (int i = 0; i < 8; ++i) recs.push_back({"3g", "do53", OutcomeClass::Successful});
    for (int i = 0; i < 2; ++i) recs.push_back({"3g", "do53", OutcomeClass::DnsError});
    auto rows = stats::failure_table(recs);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].total == 10);
    CHECK(rows[0].pct[size_t(OutcomeClass::Successful)] == doctest::Approx(80.0));
    CHECK(rows[0].pct[size_t(OutcomeClass::DnsError)] == doctest::Approx(20.0));
    CHECK(rows[0].pct[size_t(OutcomeClass::PageLoadTimeout)] == 0.0);
  }
  SUBCASE("reference row proportions come out exact") {
    // 78.70 / 7.48 / 9.51 / 1.69 / 2.62 out of 10000 trials
    std::vector<FailureRecord> recs;
    auto add = [&](OutcomeClass c, int n) {
      for (int i = 0; i < n; ++i) recs.push_back({"default", "do53", c});
    };
    add(OutcomeClass::Successful, 7870);
    add(OutcomeClass::PageLoadTimeout, 748);
    add(OutcomeClass::DnsError, 951);
    add(OutcomeClass::HarnessError, 169);
    add(OutcomeClass::OtherError, 262);
    auto rows = stats::failure_table(recs);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].pct[0] == doctest::Approx(78.70));
    CHECK(rows[0].pct[1] == doctest::Approx(7.48));
    CHECK(rows[0].pct[2] == doctest::Approx(9.51));
    CHECK(rows[0].pct[3] == doctest::Approx(1.69));
    CHECK(rows[0].pct[4] == doctest::Approx(2.62));
  }
  SUBCASE("rows always sum to exactly 100.00") {
    rng::Rng r(31);
    for (int iter = 0; iter < 300; ++iter) {
      std::vector<FailureRecord> recs;
      size_t n = 1 + r.bounded(97);
      for (size_t i = 0; i < n; ++i)
        recs.push_back({"p", "t", kAllOutcomes[r.bounded(5)]});
      auto rows = stats::failure_table(recs);
      REQUIRE(rows.size() == 1);
      long long hundredths = 0;
      for (double p : rows[0].pct) hundredths += llround(p * 100);
      CHECK(hundredths == 10000);
    }
  }
  SUBCASE("grouping by profile and protocol") {
    std::vector<FailureRecord> recs = {
        {"3g", "doh", OutcomeClass::DnsError},
        {"3g", "do53", OutcomeClass::Successful},
        {"4g", "doh", OutcomeClass::Successful},
        {"3g", "doh", OutcomeClass::Successful},
    };
    auto rows = stats::failure_table(recs);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].profile == "3g");
    CHECK(rows[0].protocol == "do53");
    CHECK(rows[1].protocol == "doh");
    CHECK(rows[1].total == 2);
    CHECK(rows[1].pct[size_t(OutcomeClass::DnsError)] == doctest::Approx(50.0));
    CHECK(rows[2].profile == "4g");
  }
  CHECK(stats::failure_table({}).empty());
}

TEST_CASE("outcome labels round-trip") {
  for (OutcomeClass c : kAllOutcomes) CHECK(outcome_from_string(outcome_to_string(c)) == c);
  CHECK_THROWS(outcome_from_string("Exploded"));
}

TEST_CASE("cdf csv round-trips bit-exactly") {
  rng::Rng r(12);
  std::vector<double> xs(257);
  for (double& x : xs) x = r.uniform(0.01, 30000);
  CdfSummary c = CdfSummary::from_samples(xs);
  std::string path = "/tmp/dnslab_cdf_test.csv";
  stats::write_cdf_csv(c, path);
  CdfSummary back = stats::read_cdf_csv(path);
  REQUIRE(back.count() == c.count());
  for (size_t i = 0; i < c.count(); ++i) CHECK(back.samples()[i] == c.samples()[i]);
  CHECK(back.mean() == doctest::Approx(c.mean()).epsilon(1e-12));
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "x_ms,cum_frac");
  std::filesystem::remove(path);
  CHECK_THROWS_AS(stats::read_cdf_csv("/nonexistent/x.csv"), stats::IoError);
}

TEST_CASE("svg cdf rendering stays monotone and parseable") {
  rng::Rng r(9);
  std::vector<double> xs(400);
  for (double& x : xs) x = r.uniform(0, 2000);
  CdfSummary c = CdfSummary::from_samples(xs);
  std::vector<double> ys(50);
  for (double& y : ys) y = r.uniform(500, 900);
  CdfSummary c2 = CdfSummary::from_samples(ys);
  std::string svg = stats::render_cdf_svg({{"fast", &c}, {"slow", &c2}});

  size_t polylines = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    size_t pts = svg.find("points=\"", pos);
    REQUIRE(pts != std::string::npos);
    pts += 8;
    size_t end = svg.find('"', pts);
    std::istringstream in(svg.substr(pts, end - pts));
    std::string pair;
    double prev_x = -1e18, prev_y = 1e18;  // svg y axis points down
    size_t count = 0;
    while (in >> pair) {
      size_t comma = pair.find(',');
      REQUIRE(comma != std::string::npos);
      double x = std::stod(pair.substr(0, comma));
      double y = std::stod(pair.substr(comma + 1));
      CHECK(x >= prev_x - 1e-9);
      CHECK(y <= prev_y + 1e-9);  // cumulative fraction never decreases
      prev_x = x;
      prev_y = y;
      ++count;
    }
    CHECK(count > 10);
    pos = end;
    ++polylines;
  }
  CHECK(polylines == 2);
}

TEST_CASE("render_report writes the full artifact set") {
  rng::Rng r(77);
  stats::ConfigSamples a{"Do53 default", {}};
  stats::ConfigSamples b{"DoH default", {}};
  for (int i = 0; i < 40; ++i) {
    std::string key = "site" + std::to_string(i);
    a.samples[key] = r.uniform(50, 400);
    if (i % 2 == 0) b.samples[key] = r.uniform(50, 400);
  }
  std::vector<FailureRecord> fails = {{"default", "do53", OutcomeClass::Successful},
                                      {"default", "doh", OutcomeClass::DnsError}};
  std::string dir = "/tmp/dnslab_report_test";
  std::filesystem::remove_all(dir);
  auto written = stats::render_report({a, b}, fails, dir);

  size_t csvs = 0, svgs = 0;
  for (const std::string& p : written) {
    CHECK(std::filesystem::exists(p));
    if (p.find("cdf_") != std::string::npos && p.size() > 4 &&
        p.substr(p.size() - 4) == ".csv")
      ++csvs;
    if (p.substr(p.size() - 4) == ".svg") ++svgs;
  }
  CHECK(csvs == 2);
  CHECK(svgs == 2);
  CHECK(std::filesystem::exists(dir + "/diff_matrix.csv"));
  CHECK(std::filesystem::exists(dir + "/failure_table.csv"));

  // diff matrix: 2x2 with a zero diagonal
  std::ifstream m(dir + "/diff_matrix.csv");
  std::string line;
  std::getline(m, line);
  CHECK(line == "config,Do53 default,DoH default");
  std::getline(m, line);
  CHECK(line.rfind("Do53 default,0,", 0) == 0);
  std::getline(m, line);
  CHECK(line.rfind("DoH default,", 0) == 0);

  // cdf csv re-ingests to the identical summary
  CdfSummary back = stats::read_cdf_csv(dir + "/cdf_do53-default.csv");
  CHECK(back.count() == 40);
  std::filesystem::remove_all(dir);
}
