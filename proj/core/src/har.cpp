#include "dnslab/har.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_set>

#include "json.hpp"

namespace dnslab::har {

using nlohmann::json;

std::string host_of_url(const std::string& url) {
  size_t scheme = url.find("://");
  if (scheme == std::string::npos) return "";
  size_t start = scheme + 3;
  size_t end = url.find_first_of("/?#", start);
  std::string auth = url.substr(start, end == std::string::npos ? std::string::npos : end - start);
  size_t at = auth.rfind('@');
  if (at != std::string::npos) auth = auth.substr(at + 1);
  if (!auth.empty() && auth[0] == '[') {
    size_t close = auth.find(']');
    auth = close == std::string::npos ? auth.substr(1) : auth.substr(1, close - 1);
  } else {
    size_t colon = auth.rfind(':');
    if (colon != std::string::npos) auth = auth.substr(0, colon);
  }
  std::transform(auth.begin(), auth.end(), auth.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return auth;
}

namespace {

json parse_log(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("log") || !doc["log"].is_object())
    throw MalformedHar("document is not a HAR log");
  json& log = doc["log"];
  std::string version = log.value("version", "");
  if (version != "1.1" && version != "1.2")
    throw UnsupportedVersion("unsupported HAR version: " +
                             (version.empty() ? "(none)" : version));
  if (!log.contains("pages") || !log["pages"].is_array() || log["pages"].empty())
    throw MalformedHar("HAR has no pages");
  if (!log.contains("entries") || !log["entries"].is_array())
    throw MalformedHar("HAR has no entries");
  return log;
}

double timing_or_absent(const json& e) {
  if (!e.contains("timings") || !e["timings"].is_object()) return -1;
  const json& t = e["timings"];
  if (!t.contains("dns") || !t["dns"].is_number()) return -1;
  double v = t["dns"].get<double>();
  return v < 0 ? -1 : v;
}

HarSummary summarize_page(const json& page, const json& all_entries, const std::string& page_id,
                          bool take_unrefd, std::vector<HarEntry>* out_entries) {
  HarSummary s;
  s.page_url = page.value("title", "");
  if (page.contains("pageTimings") && page["pageTimings"].is_object()) {
    const json& pt = page["pageTimings"];
    if (pt.contains("onLoad") && pt["onLoad"].is_number()) s.on_load_ms = pt["onLoad"].get<double>();
    if (pt.contains("onContentLoad") && pt["onContentLoad"].is_number()) {
      double v = pt["onContentLoad"].get<double>();
      if (v >= 0) s.dom_content_loaded_ms = v;
    }
  }

  std::vector<HarEntry> entries;
  std::unordered_set<std::string> seen;
  int index = 0;
  for (const json& e : all_entries) {
    int my_index = index++;
    std::string ref = e.value("pageref", "");
    if (ref.empty() ? !take_unrefd : ref != page_id) continue;
    if (!e.contains("request") || !e["request"].is_object() || !e["request"].contains("url"))
      throw MalformedHar("entry without request url");
    HarEntry he;
    he.index = my_index;
    he.domain = host_of_url(e["request"]["url"].get<std::string>());
    he.dns_ms = timing_or_absent(e);
    if (!he.domain.empty() && seen.insert(he.domain).second)
      s.unique_domains.push_back(he.domain);
    entries.push_back(std::move(he));
  }
  s.entry_count = entries.size();
  for (const Suspect& sus : flag_suspect_dns(s, entries))
    s.suspect_dns_timings.emplace_back(sus.entry_index, sus.reported_dns_ms);
  if (out_entries) *out_entries = std::move(entries);
  return s;
}

}  // namespace

HarSummary parse_har(const std::string& json_text, std::vector<HarEntry>* entries) {
  json log = parse_log(json_text);
  const json& page = log["pages"][0];
  return summarize_page(page, log["entries"], page.value("id", ""), true, entries);
}

std::vector<HarSummary> parse_har_pages(const std::string& json_text) {
  json log = parse_log(json_text);
  std::vector<HarSummary> out;
  for (size_t i = 0; i < log["pages"].size(); ++i) {
    const json& page = log["pages"][i];
    out.push_back(summarize_page(page, log["entries"], page.value("id", ""), i == 0, nullptr));
  }
  return out;
}

std::vector<Suspect> flag_suspect_dns(const HarSummary&, const std::vector<HarEntry>& entries) {
  std::vector<Suspect> out;
  std::unordered_set<std::string> seen;
  for (const HarEntry& e : entries) {
    bool first = seen.insert(e.domain).second;
    if (!first) continue;
    if (e.dns_ms == 0)
      out.push_back({e.index, e.domain, 0, "zero dns timing on first request"});
    else if (e.dns_ms < 0)
      out.push_back({e.index, e.domain, -1, "missing dns timing on first request"});
  }
  return out;
}

std::vector<std::string> domains_for_measurement(const std::vector<HarSummary>& summaries) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const HarSummary& s : summaries)
    for (const std::string& d : s.unique_domains)
      if (seen.insert(d).second) out.push_back(d);
  return out;
}

void write_suspect_csv(const std::string& path, const std::vector<Suspect>& suspects) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path);
  std::fprintf(f, "entry_index,domain,reported_dns_ms,reason\n");
  for (const Suspect& s : suspects)
    std::fprintf(f, "%d,%s,%g,%s\n", s.entry_index, s.domain.c_str(), s.reported_dns_ms,
                 s.reason.c_str());
  std::fclose(f);
}

}  // namespace dnslab::har
