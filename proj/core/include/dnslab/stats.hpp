#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dnslab/outcome.hpp"

namespace dnslab::stats {

class EmptyInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NoCommonKeys : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Streaming mean/stddev (Welford). stddev is the sample deviation (n-1).
class Running {
 public:
  void push(double x);
  size_t count() const { return n_; }
  double mean() const { return n_ ? mean_ : 0; }
  double stddev() const;

 private:
  size_t n_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

// Empirical distribution with nearest-rank quantiles.
class CdfSummary {
 public:
  static CdfSummary from_samples(std::vector<double> samples);  // throws EmptyInput

  double quantile(double q) const;  // q clamped to [0,1]; nearest rank
  double median() const { return quantile(0.5); }
  double mean() const { return mean_; }
  double stddev() const { return stddev_; }
  size_t count() const { return samples_.size(); }
  const std::vector<double>& samples() const { return samples_; }  // sorted

 private:
  std::vector<double> samples_;
  double mean_ = 0;
  double stddev_ = 0;
};

using KeyedSamples = std::map<std::string, double>;

struct PairwiseDiff {
  std::string config_a;
  std::string config_b;
  std::vector<std::pair<std::string, double>> diffs;  // key, a - b
  double median_diff = 0;
};

// Per-key a-b over the key intersection; negative median means a was faster.
PairwiseDiff paired_diff(const std::string& label_a, const KeyedSamples& a,
                         const std::string& label_b, const KeyedSamples& b);

enum class Band { AFaster, BFaster, Similar };
Band similarity_band(const PairwiseDiff& d, double band_ms = 30);
std::string band_to_string(Band b);

struct FailureRecord {
  std::string profile;
  std::string protocol;
  OutcomeClass outcome = OutcomeClass::Successful;
};

struct FailureRow {
  std::string profile;
  std::string protocol;
  std::array<size_t, 5> counts{};  // indexed like kAllOutcomes
  size_t total = 0;
  std::array<double, 5> pct{};  // two decimals, row sums to exactly 100.00
};

// Groups by (profile, protocol), rows sorted; percentages use largest-remainder
// rounding in hundredths so each row sums to exactly 100.00.
std::vector<FailureRow> failure_table(const std::vector<FailureRecord>& records);

void write_cdf_csv(const CdfSummary& cdf, const std::string& path);  // x_ms,cum_frac
CdfSummary read_cdf_csv(const std::string& path);

// One <polyline> per curve, y from 0 to 1. Returned as markup; render_report
// writes it to files.
std::string render_cdf_svg(const std::vector<std::pair<std::string, const CdfSummary*>>& curves);

struct ConfigSamples {
  std::string label;
  KeyedSamples samples;  // key = website/domain, value = ms
};

// Writes cdf_<label>.csv / cdf_<label>.svg per config, diff_matrix.csv
// (median of row-minus-column paired diffs), failure_table.csv. Returns the
// paths written.
std::vector<std::string> render_report(const std::vector<ConfigSamples>& configs,
                                       const std::vector<FailureRecord>& failures,
                                       const std::string& out_dir);

}  // namespace dnslab::stats
