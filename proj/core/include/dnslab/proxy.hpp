#pragma once

// Local Do53 proxy prototyping two resolution-time optimizations: a
// wire-format response cache (transaction-ID rewrite + TTL decrement on
// serve, so answers never go through a decode/re-encode round trip) and
// opportunistic partial responses for multi-question batches, with probed
// upstream capability and transparent fan-out fallback. ECS stripping is a
// flag.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnslab/partial.hpp"
#include "dnslab/transports.hpp"
#include "dnslab/wire.hpp"

namespace dnslab::proxy {

struct CacheKey {
  std::string name;  // lowercase canonical form
  uint16_t qtype = 1;
  uint16_t qclass = wire::kClassIn;

  auto operator<=>(const CacheKey&) const = default;
  static CacheKey from(const wire::Question& q);
};

// Stores whole response messages as received, ID zeroed. Serving patches the
// requester's ID and decremented TTLs into a copy of the original bytes
// (overwriting a zero base is the same as XOR-ing the new ID in), so
// compression pointers and unknown record types survive untouched.
class WireCache {
 public:
  explicit WireCache(uint32_t safety_margin_s = 0, uint32_t negative_ttl_s = 30);

  // Decodes to find min answer TTL; negatives (no answers) use the SOA
  // minimum when present, else negative_ttl_s. min_ttl 0 is not stored.
  // Undecodable bytes are ignored.
  void insert(const wire::Question& q, std::vector<uint8_t> response_wire, double now_ms);

  // Hit only while (age_s + margin) < min_ttl; expired entries are evicted
  // here, lazily. TTLs come back decremented by floor(age_s) + margin.
  std::optional<std::vector<uint8_t>> lookup(const wire::Question& q, uint16_t client_id,
                                             double now_ms);

  size_t size() const;

 private:
  struct Entry;
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

enum class PartialSupport : uint8_t { Unknown, Yes, No };
enum class MultiBehavior : uint8_t { Ignores, AnswersFirstOnly, Full };

struct ServerCapabilities {
  PartialSupport supports_partial = PartialSupport::Unknown;
  MultiBehavior multi_question = MultiBehavior::Ignores;

  bool operator==(const ServerCapabilities&) const = default;
};

// Keyed by upstream endpoint string; entries expire (default 1 h) because
// upstream deployments change under you.
class CapabilityCache {
 public:
  explicit CapabilityCache(double ttl_ms = 3600 * 1000.0);

  std::optional<ServerCapabilities> get(const std::string& endpoint, double now_ms) const;
  void put(const std::string& endpoint, ServerCapabilities caps, double now_ms);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Two probes: (a) q1 alone carrying ClientOffer — ServerAck back means Yes;
// (b) [q1, q2] as one query — timeout means Ignores, a one-question echo
// means AnswersFirstOnly, both questions echoed means Full.
ServerCapabilities probe_capabilities(transports::Resolver& upstream, const wire::Question& q1,
                                      const wire::Question& q2,
                                      uint16_t option_code = partial::kDefaultOptionCode);

struct BatchItem {
  wire::Question question;
  std::vector<uint8_t> wire;  // complete response message; empty when !ok
  bool ok = false;
  std::string error;
};

// Resolves up to 64 questions (throws std::invalid_argument outside [1,64]).
// supports_partial == Yes sends one multi-question query and forwards each
// partial as it lands (out of order); anything else fans out single-question
// queries concurrently. Either way on_item is called serially, every question
// gets exactly one item (failures included), and the call returns once all
// are delivered. A single question resolves plainly regardless of caps.
void resolve_batch(transports::Resolver& upstream, const std::vector<wire::Question>& questions,
                   const ServerCapabilities& caps,
                   const std::function<void(const BatchItem&)>& on_item,
                   uint16_t option_code = partial::kDefaultOptionCode);

struct ProxyConfig {
  std::string listen = "127.0.0.1:0";
  transports::TransportConfig upstream;
  bool cache = false;
  uint32_t cache_margin_s = 0;
  uint32_t negative_ttl_s = 30;
  bool partial = false;    // probe upstream, batch multi-question queries
  bool strip_ecs = false;  // drop client ECS from upstream queries
  uint16_t partial_option_code = partial::kDefaultOptionCode;
};

// UDP front end. Single-question queries go through the cache (single-flight
// on concurrent misses); multi-question queries resolve via resolve_batch and
// come back as one combined response. Upstream failure means SERVFAIL, never
// silence. Responses always carry the client's own transaction ID; upstream
// queries never reuse it.
class OptimProxy {
 public:
  explicit OptimProxy(ProxyConfig cfg);
  ~OptimProxy();

  OptimProxy(const OptimProxy&) = delete;
  OptimProxy& operator=(const OptimProxy&) = delete;

  uint16_t port() const;
  void stop();

  int cache_hits() const;
  int cache_misses() const;
  int upstream_queries() const;  // counts batch fan-out individually

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace dnslab::proxy
