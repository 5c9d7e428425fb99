#include "dnslab/stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dnslab {

std::string outcome_to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::Successful: return "Successful";
    case OutcomeClass::PageLoadTimeout: return "PageLoadTimeout";
    case OutcomeClass::DnsError: return "DnsError";
    case OutcomeClass::HarnessError: return "HarnessError";
    case OutcomeClass::OtherError: return "OtherError";
  }
  return "?";
}

OutcomeClass outcome_from_string(const std::string& s) {
  for (OutcomeClass c : kAllOutcomes)
    if (outcome_to_string(c) == s) return c;
  throw std::invalid_argument("unknown outcome class: " + s);
}

}  // namespace dnslab

namespace dnslab::stats {

void Running::push(double x) {
  ++n_;
  double d = x - mean_;
  mean_ += d / double(n_);
  m2_ += d * (x - mean_);
}

double Running::stddev() const {
  if (n_ < 2) return 0;
  return std::sqrt(m2_ / double(n_ - 1));
}

CdfSummary CdfSummary::from_samples(std::vector<double> samples) {
  if (samples.empty()) throw EmptyInput("cdf over zero samples");
  CdfSummary c;
  c.samples_ = std::move(samples);
  std::sort(c.samples_.begin(), c.samples_.end());
  double sum = 0;
  for (double x : c.samples_) sum += x;
  c.mean_ = sum / double(c.samples_.size());
  double ss = 0;
  for (double x : c.samples_) ss += (x - c.mean_) * (x - c.mean_);
  c.stddev_ = c.samples_.size() < 2 ? 0 : std::sqrt(ss / double(c.samples_.size() - 1));
  return c;
}

double CdfSummary::quantile(double q) const {
  q = std::clamp(q, 0.0, 1.0);
  size_t n = samples_.size();
  size_t rank = size_t(std::ceil(q * double(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return samples_[rank - 1];
}

PairwiseDiff paired_diff(const std::string& label_a, const KeyedSamples& a,
                         const std::string& label_b, const KeyedSamples& b) {
  PairwiseDiff d;
  d.config_a = label_a;
  d.config_b = label_b;
  for (const auto& [key, va] : a) {
    auto it = b.find(key);
    if (it != b.end()) d.diffs.emplace_back(key, va - it->second);
  }
  if (d.diffs.empty()) throw NoCommonKeys(label_a + " vs " + label_b + ": no common keys");
  std::vector<double> vals;
  vals.reserve(d.diffs.size());
  for (const auto& [k, v] : d.diffs) vals.push_back(v);
  d.median_diff = CdfSummary::from_samples(std::move(vals)).median();
  return d;
}

Band similarity_band(const PairwiseDiff& d, double band_ms) {
  if (std::fabs(d.median_diff) <= band_ms) return Band::Similar;
  return d.median_diff < 0 ? Band::AFaster : Band::BFaster;
}

std::string band_to_string(Band b) {
  switch (b) {
    case Band::AFaster: return "AFaster";
    case Band::BFaster: return "BFaster";
    case Band::Similar: return "Similar";
  }
  return "?";
}

namespace {

// counts -> percentages in hundredths summing to exactly 10000 units
std::array<double, 5> largest_remainder(const std::array<size_t, 5>& counts, size_t total) {
  std::array<double, 5> pct{};
  if (total == 0) return pct;
  std::array<long long, 5> units{};
  std::array<double, 5> rem{};
  long long left = 10000;
  for (size_t i = 0; i < 5; ++i) {
    double exact = double(counts[i]) * 10000.0 / double(total);
    units[i] = (long long)(std::floor(exact));
    rem[i] = exact - double(units[i]);
    left -= units[i];
  }
  std::array<size_t, 5> order = {0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return rem[x] > rem[y]; });
  for (long long k = 0; k < left && k < 5; ++k) units[order[size_t(k)]] += 1;
  for (size_t i = 0; i < 5; ++i) pct[i] = double(units[i]) / 100.0;
  return pct;
}

}  // namespace

std::vector<FailureRow> failure_table(const std::vector<FailureRecord>& records) {
  std::map<std::pair<std::string, std::string>, FailureRow> rows;
  for (const FailureRecord& r : records) {
    FailureRow& row = rows[{r.profile, r.protocol}];
    row.profile = r.profile;
    row.protocol = r.protocol;
    row.counts[size_t(r.outcome)] += 1;
    row.total += 1;
  }
  std::vector<FailureRow> out;
  out.reserve(rows.size());
  for (auto& [key, row] : rows) {
    row.pct = largest_remainder(row.counts, row.total);
    out.push_back(row);
  }
  return out;
}

void write_cdf_csv(const CdfSummary& cdf, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "x_ms,cum_frac\n";
  char buf[64];
  size_t n = cdf.count();
  for (size_t i = 0; i < n; ++i) {
    snprintf(buf, sizeof(buf), "%.17g,%.17g\n", cdf.samples()[i], double(i + 1) / double(n));
    f << buf;
  }
  if (!f.good()) throw IoError("write failed: " + path);
}

CdfSummary read_cdf_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("x_ms,", 0) != 0)
    throw IoError(path + ": missing x_ms header");
  std::vector<double> xs;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t comma = line.find(',');
    xs.push_back(std::stod(line.substr(0, comma)));
  }
  return CdfSummary::from_samples(std::move(xs));
}

namespace {

const char* kStrokes[] = {"#1b6ca8", "#c0392b", "#27832d", "#8e44ad", "#b07d12", "#16808a"};

std::string svg_num(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_cdf_svg(const std::vector<std::pair<std::string, const CdfSummary*>>& curves) {
  const double w = 640, h = 400, ml = 60, mr = 20, mt = 20, mb = 40;
  double lo = 0, hi = 1;
  bool first = true;
  for (const auto& [label, cdf] : curves) {
    if (!cdf || cdf->count() == 0) continue;
    double cmin = cdf->samples().front(), cmax = cdf->samples().back();
    if (first) {
      lo = cmin;
      hi = cmax;
      first = false;
    } else {
      lo = std::min(lo, cmin);
      hi = std::max(hi, cmax);
    }
  }
  if (hi <= lo) hi = lo + 1;
  auto sx = [&](double x) { return ml + (x - lo) / (hi - lo) * (w - ml - mr); };
  auto sy = [&](double frac) { return h - mb - frac * (h - mt - mb); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (w / 2) << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" "
      << "font-size=\"13\">milliseconds</text>\n";
  out << "<text x=\"14\" y=\"" << (h / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 14 " << (h / 2) << ")\">cumulative fraction</text>\n";
  size_t ci = 0;
  for (const auto& [label, cdf] : curves) {
    if (!cdf || cdf->count() == 0) continue;
    const char* stroke = kStrokes[ci % 6];
    out << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    size_t n = cdf->count();
    // step-ish rendering: one vertex per sample keeps the parse simple
    for (size_t i = 0; i < n; ++i) {
      if (i) out << ' ';
      out << svg_num(sx(cdf->samples()[i])) << ',' << svg_num(sy(double(i + 1) / double(n)));
    }
    out << "\"/>\n";
    out << "<text x=\"" << w - mr - 4 << "\" y=\"" << mt + 16 + 16 * double(ci)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << stroke << "\">" << label
        << "</text>\n";
    ++ci;
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label)
    s += (std::isalnum((unsigned char)c) ? char(std::tolower((unsigned char)c)) : '-');
  return s;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  if (!f.good()) throw IoError("write failed: " + path);
}

}  // namespace

std::vector<std::string> render_report(const std::vector<ConfigSamples>& configs,
                                       const std::vector<FailureRecord>& failures,
                                       const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::vector<std::string> written;

  std::vector<CdfSummary> cdfs;
  cdfs.reserve(configs.size());
  for (const ConfigSamples& c : configs) {
    std::vector<double> vals;
    vals.reserve(c.samples.size());
    for (const auto& [k, v] : c.samples) vals.push_back(v);
    cdfs.push_back(CdfSummary::from_samples(std::move(vals)));
  }
  for (size_t i = 0; i < configs.size(); ++i) {
    std::string base = out_dir + "/cdf_" + slug(configs[i].label);
    write_cdf_csv(cdfs[i], base + ".csv");
    written.push_back(base + ".csv");
    write_file(base + ".svg", render_cdf_svg({{configs[i].label, &cdfs[i]}}));
    written.push_back(base + ".svg");
  }

  {
    std::ostringstream m;
    m << "config";
    for (const ConfigSamples& c : configs) m << ',' << c.label;
    m << '\n';
    for (size_t i = 0; i < configs.size(); ++i) {
      m << configs[i].label;
      for (size_t j = 0; j < configs.size(); ++j) {
        if (i == j) {
          m << ",0";
          continue;
        }
        try {
          PairwiseDiff d = paired_diff(configs[i].label, configs[i].samples, configs[j].label,
                                       configs[j].samples);
          char buf[32];
          snprintf(buf, sizeof(buf), ",%.3f", d.median_diff);
          m << buf;
        } catch (const NoCommonKeys&) {
          m << ",nan";
        }
      }
      m << '\n';
    }
    write_file(out_dir + "/diff_matrix.csv", m.str());
    written.push_back(out_dir + "/diff_matrix.csv");
  }

  {
    std::ostringstream t;
    t << "profile,protocol,total";
    for (OutcomeClass c : kAllOutcomes) t << ',' << outcome_to_string(c);
    t << '\n';
    for (const FailureRow& row : failure_table(failures)) {
      t << row.profile << ',' << row.protocol << ',' << row.total;
      char buf[32];
      for (size_t i = 0; i < 5; ++i) {
        snprintf(buf, sizeof(buf), ",%.2f", row.pct[i]);
        t << buf;
      }
      t << '\n';
    }
    write_file(out_dir + "/failure_table.csv", t.str());
    written.push_back(out_dir + "/failure_table.csv");
  }
  return written;
}

}  // namespace dnslab::stats
