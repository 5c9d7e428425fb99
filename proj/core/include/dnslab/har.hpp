#pragma once

// HTTP Archive ingestion: page-load timings, unique domains, and the
// zero-DNS-timing artifact report. DNS timings found in HARs are advisory
// only — they feed suspect reports, never response-time statistics.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnslab::har {

struct MalformedHar : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedVersion : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct HarEntry {
  int index = 0;          // position in the log's entries array
  std::string domain;     // lowercased request host, port stripped
  double dns_ms = -1;     // -1 when the timing is absent
};

struct Suspect {
  int entry_index = 0;
  std::string domain;
  double reported_dns_ms = -1;
  std::string reason;
};

struct HarSummary {
  std::string page_url;
  double on_load_ms = -1;
  std::optional<double> dom_content_loaded_ms;
  std::vector<std::string> unique_domains;  // first-appearance order
  size_t entry_count = 0;
  std::vector<std::pair<int, double>> suspect_dns_timings;  // (entry index, dns_ms)
};

// Host portion of a URL: authority with userinfo and port stripped,
// lowercased; IPv6 literals keep their brackets off.
std::string host_of_url(const std::string& url);

// First page of the document plus every entry attached to it.
HarSummary parse_har(const std::string& json_text, std::vector<HarEntry>* entries = nullptr);

// One summary per page; entries follow their pageref (entries without a
// pageref belong to the first page).
std::vector<HarSummary> parse_har_pages(const std::string& json_text);

// Entries whose DNS timing is zero or absent on the first request for
// their domain. Repeat requests are cache-plausible and exempt.
std::vector<Suspect> flag_suspect_dns(const HarSummary& summary,
                                      const std::vector<HarEntry>& entries);

// Stable union of unique_domains across summaries.
std::vector<std::string> domains_for_measurement(const std::vector<HarSummary>& summaries);

void write_suspect_csv(const std::string& path, const std::vector<Suspect>& suspects);

}  // namespace dnslab::har
