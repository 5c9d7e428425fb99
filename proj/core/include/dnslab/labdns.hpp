#pragma once

// Fixture-backed DNS responder over Do53, DoT, and DoH for exercising the
// resolvers and the caching proxy. Supports the observed multi-question
// behaviors of public resolvers (answer all, answer first only, drop), an
// opt-in streamed partial-response mode, per-name answer delays, and fault
// injection (swallowed queries, mid-flight connection closes, HTTP errors).

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dnslab/partial.hpp"
#include "dnslab/wire.hpp"

namespace dnslab::labdns {

enum class MultiBehavior { Full, FirstOnly, DropMulti };
MultiBehavior behavior_from_string(const std::string& s);  // full|first-only|drop-multi

struct Fixture {
  std::string name;  // lowercase, no trailing dot
  uint16_t qtype = 1;
  uint32_t ttl = 300;
  std::vector<uint8_t> rdata;
};

// Lines `name type ttl rdata`; blank lines and '#' comments skipped.
// Types: A, AAAA, CNAME, NS, PTR (rdata = target name), TXT (rest of line),
// SOA (rdata = "mname rname serial refresh retry expire minimum").
std::vector<Fixture> parse_fixtures(const std::string& text);

// Lines `name milliseconds`.
std::map<std::string, double> parse_delays(const std::string& text);

struct LabConfig {
  std::vector<Fixture> fixtures;
  MultiBehavior behavior = MultiBehavior::Full;
  bool partial_support = false;
  uint16_t partial_option_code = partial::kDefaultOptionCode;
  std::map<std::string, double> delays_ms;  // sleep before answering this name
  uint32_t soa_minimum_s = 60;              // negative answers carry this SOA minimum
  bool mute = false;                        // swallow every query
  std::set<std::string> drop_names;         // swallow queries for these names
  std::map<std::string, int> reset_counts;  // DoT: close instead of answering, N times
  int doh_status = 200;                     // != 200: reject DoH queries with this status
  uint16_t udp_bind = 0;                    // 0 = ephemeral
  uint16_t dot_bind = 0;
  uint16_t doh_bind = 0;
};

// Single-question answer against the fixture set: exact (name, type) matches;
// missing name -> NXDOMAIN with SOA authority, missing type -> NODATA.
// Header is left for the caller except rcode.
wire::DnsMessage answer_for(const std::vector<Fixture>& fixtures, const wire::Question& q,
                            uint32_t soa_minimum_s);

class LabRecursor {
 public:
  explicit LabRecursor(const LabConfig& cfg);
  ~LabRecursor();
  LabRecursor(const LabRecursor&) = delete;
  LabRecursor& operator=(const LabRecursor&) = delete;

  uint16_t udp_port() const;
  uint16_t dot_port() const;
  uint16_t doh_port() const;
  std::string doh_url() const;

  int hits() const;  // query messages decoded, all transports
  int hits_for(const std::string& name) const;
  int dot_accepts() const;
  int doh_connections() const;
  std::vector<uint16_t> doh_query_ids() const;

  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace dnslab::labdns
