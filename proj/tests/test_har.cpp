#include "dnslab/har.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dnslab/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace dnslab;
using nlohmann::json;

namespace {

// dns: value, -1 for the HAR "absent" marker, nullopt to omit the key
json make_entry(const std::string& url, std::optional<double> dns = std::nullopt,
                const std::string& pageref = "") {
  json e = {{"request", {{"url", url}, {"method", "GET"}}},
            {"timings", {{"send", 1}, {"wait", 10}, {"receive", 2}}}};
  if (dns) e["timings"]["dns"] = *dns;
  if (!pageref.empty()) e["pageref"] = pageref;
  return e;
}

json make_har(double on_load, const std::vector<json>& entries,
              const std::string& version = "1.2") {
  return {{"log",
           {{"version", version},
            {"pages",
             json::array({{{"id", "page_1"},
                           {"title", "https://site.test/"},
                           {"pageTimings", {{"onLoad", on_load}, {"onContentLoad", 800}}}}})},
            {"entries", entries}}}};
}

}  // namespace

TEST_CASE("minimal har extracts onLoad and the single domain") {
  json h = make_har(1234, {make_entry("https://example.com/")});
  har::HarSummary s = har::parse_har(h.dump());
  CHECK(s.on_load_ms == 1234);
  REQUIRE(s.unique_domains.size() == 1);
  CHECK(s.unique_domains[0] == "example.com");
  CHECK(s.entry_count == 1);
  CHECK(s.page_url == "https://site.test/");
  REQUIRE(s.dom_content_loaded_ms.has_value());
  CHECK(*s.dom_content_loaded_ms == 800);
}

TEST_CASE("three entries across two hosts dedupe in first-appearance order") {
  json h = make_har(2000, {make_entry("https://a.test/x"), make_entry("https://b.test/y"),
                           make_entry("https://a.test/z")});
  har::HarSummary s = har::parse_har(h.dump());
  CHECK(s.entry_count == 3);
  REQUIRE(s.unique_domains.size() == 2);
  CHECK(s.unique_domains[0] == "a.test");
  CHECK(s.unique_domains[1] == "b.test");
}

TEST_CASE("malformed and unsupported documents are rejected loudly") {
  CHECK_THROWS_AS(har::parse_har("{}"), har::MalformedHar);
  CHECK_THROWS_AS(har::parse_har("not json"), har::MalformedHar);
  json no_pages = make_har(1, {make_entry("https://x.test/")});
  no_pages["log"].erase("pages");
  CHECK_THROWS_AS(har::parse_har(no_pages.dump()), har::MalformedHar);
  json empty_pages = make_har(1, {make_entry("https://x.test/")});
  empty_pages["log"]["pages"] = json::array();
  CHECK_THROWS_AS(har::parse_har(empty_pages.dump()), har::MalformedHar);
  json no_entries = make_har(1, {});
  no_entries["log"].erase("entries");
  CHECK_THROWS_AS(har::parse_har(no_entries.dump()), har::MalformedHar);

  CHECK_THROWS_AS(har::parse_har(make_har(1, {make_entry("https://x.test/")}, "0.9").dump()),
                  har::UnsupportedVersion);
  CHECK_THROWS_AS(har::parse_har(make_har(1, {make_entry("https://x.test/")}, "2.0").dump()),
                  har::UnsupportedVersion);
  CHECK_NOTHROW(har::parse_har(make_har(1, {make_entry("https://x.test/")}, "1.1").dump()));
}

TEST_CASE("host extraction strips scheme port userinfo and case") {
  CHECK(har::host_of_url("https://Example.COM/path?q=1") == "example.com");
  CHECK(har::host_of_url("http://example.com:8080/") == "example.com");
  CHECK(har::host_of_url("https://user:pw@secret.test:443/a") == "secret.test");
  CHECK(har::host_of_url("https://cdn.example.com") == "cdn.example.com");
  CHECK(har::host_of_url("http://[2001:db8::1]:8080/x") == "2001:db8::1");
  CHECK(har::host_of_url("ftp://files.test/x") == "files.test");
  CHECK(har::host_of_url("no-scheme-here") == "");
}

TEST_CASE("suspect flagging follows the first-occurrence zero-timing rule") {
  json h = make_har(1500, {
                              make_entry("https://first.test/", 0),            // first + 0ms
                              make_entry("https://second.test/", 42),          // plausible
                              make_entry("https://second.test/a", -1),         // repeat, absent
                              make_entry("https://third.test/", std::nullopt), // first, key missing
                              make_entry("https://first.test/b", 0),           // repeat + 0ms
                          });
  std::vector<har::HarEntry> entries;
  har::HarSummary s = har::parse_har(h.dump(), &entries);
  REQUIRE(entries.size() == 5);
  auto suspects = har::flag_suspect_dns(s, entries);
  REQUIRE(suspects.size() == 2);
  CHECK(suspects[0].entry_index == 0);
  CHECK(suspects[0].domain == "first.test");
  CHECK(suspects[0].reported_dns_ms == 0);
  CHECK(!suspects[0].reason.empty());
  CHECK(suspects[1].entry_index == 3);
  CHECK(suspects[1].domain == "third.test");
  CHECK(suspects[1].reported_dns_ms == -1);

  // the parse itself records the same pairs
  REQUIRE(s.suspect_dns_timings.size() == 2);
  CHECK(s.suspect_dns_timings[0].first == 0);
  CHECK(s.suspect_dns_timings[1].first == 3);
}

TEST_CASE("domains_for_measurement unions across summaries stably") {
  json h1 = make_har(1, {make_entry("https://a.test/"), make_entry("https://cdn.test/")});
  json h2 = make_har(1, {make_entry("https://b.test/"), make_entry("https://cdn.test/")});
  auto s1 = har::parse_har(h1.dump());
  auto s2 = har::parse_har(h2.dump());
  auto all = har::domains_for_measurement({s1, s2});
  REQUIRE(all.size() == 3);
  CHECK(all[0] == "a.test");
  CHECK(all[1] == "cdn.test");
  CHECK(all[2] == "b.test");

  CHECK(har::domains_for_measurement({}).empty());

  // idempotent: feeding the union back as one summary changes nothing
  har::HarSummary merged;
  merged.unique_domains = all;
  CHECK(har::domains_for_measurement({merged, s1, s2}) == all);
}

TEST_CASE("ten hars match a brute force set union oracle") {
  rng::Rng r(20260819);
  std::vector<har::HarSummary> summaries;
  std::set<std::string> oracle;
  for (int i = 0; i < 10; ++i) {
    std::vector<json> entries;
    int n = 1 + int(r.bounded(12));
    for (int j = 0; j < n; ++j) {
      std::string host = "host" + std::to_string(r.bounded(30)) + ".test";
      oracle.insert(host);
      entries.push_back(make_entry("https://" + host + "/p" + std::to_string(j)));
    }
    summaries.push_back(har::parse_har(make_har(100 + i, entries).dump()));
  }
  auto all = har::domains_for_measurement(summaries);
  CHECK(all.size() == oracle.size());
  CHECK(std::set<std::string>(all.begin(), all.end()) == oracle);
  CHECK(har::domains_for_measurement(summaries) == all);  // stable
}

TEST_CASE("multi page documents split by pageref") {
  json h = make_har(1000, {make_entry("https://one.test/", -1, "page_1"),
                           make_entry("https://two.test/", -1, "page_2"),
                           make_entry("https://one-b.test/", -1, "page_1")});
  h["log"]["pages"].push_back(
      {{"id", "page_2"},
       {"title", "https://second.test/"},
       {"pageTimings", {{"onLoad", 2500}}}});

  har::HarSummary first = har::parse_har(h.dump());
  CHECK(first.on_load_ms == 1000);
  CHECK(first.entry_count == 2);
  REQUIRE(first.unique_domains.size() == 2);
  CHECK(first.unique_domains[0] == "one.test");
  CHECK(first.unique_domains[1] == "one-b.test");

  auto pages = har::parse_har_pages(h.dump());
  REQUIRE(pages.size() == 2);
  CHECK(pages[0].on_load_ms == 1000);
  CHECK(pages[1].on_load_ms == 2500);
  CHECK(pages[1].entry_count == 1);
  REQUIRE(pages[1].unique_domains.size() == 1);
  CHECK(pages[1].unique_domains[0] == "two.test");
  CHECK(!pages[1].dom_content_loaded_ms.has_value());
}

TEST_CASE("suspect report csv has the documented columns") {
  std::vector<har::Suspect> sus = {{0, "first.test", 0, "zero dns timing on first request"},
                                   {3, "third.test", -1, "missing dns timing on first request"}};
  char tmpl[] = "/tmp/dnslab_susXXXXXX";
  int fd = mkstemp(tmpl);
  REQUIRE(fd >= 0);
  close(fd);
  har::write_suspect_csv(tmpl, sus);
  std::ifstream in(tmpl);
  std::string header, l1, l2;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(header == "entry_index,domain,reported_dns_ms,reason");
  CHECK(l1.find("0,first.test,0") == 0);
  CHECK(l2.find("3,third.test,-1") == 0);
  std::remove(tmpl);
}
