#pragma once

// Stub resolvers for Do53 (UDP), DoT (TLS over TCP, pooled connections), and
// DoH (HTTP/2 POST, one multiplexed connection). Timing is split into
// connection_setup (zero when a pooled connection served the query) and
// response_time (request sent -> full response decoded). Nothing here caches
// DNS responses, and EDNS Client Subnet is never attached.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnslab/wire.hpp"

namespace dnslab::transports {

enum class Protocol { Do53, DoT, DoH };
std::string protocol_to_string(Protocol p);

enum class ResultKind { Answered, Timeout, DnsError, TransportError };
enum class FailureKind { Socket, Tls, Reset, HttpStatus, Protocol };
std::string result_to_string(ResultKind r);
std::string failure_to_string(FailureKind f);

struct TransportConfig {
  Protocol protocol = Protocol::Do53;
  // "ip:port" for Do53/DoT (ports default to 53/853), URI for DoH.
  std::string server;
  std::string provider;  // label stamped into outcomes
  double udp_timeout_ms = 5000;  // per UDP attempt; whole-query budget for DoT/DoH
  int udp_attempts = 2;
  double idle_timeout_ms = 10000;  // pooled connections older than this are retired
  std::optional<uint16_t> fixed_transaction_id;  // DoH defaults to 0
  bool tls_verify = true;
};

struct QueryOutcome {
  std::string domain;
  Protocol protocol = Protocol::Do53;
  std::string provider;
  double t_start = 0;           // monotonic ms
  double response_time = -1;    // >0 only when a response was decoded
  double connection_setup = 0;  // 0 means a pooled connection was reused
  ResultKind result = ResultKind::TransportError;
  int rcode = 0;                              // when DnsError
  FailureKind failure = FailureKind::Socket;  // when TransportError
  std::string detail;
  size_t wire_size_up = 0;  // DNS message bytes sent (all attempts)
  size_t wire_size_down = 0;
};

class Resolver {
 public:
  explicit Resolver(TransportConfig cfg);
  ~Resolver();
  Resolver(const Resolver&) = delete;
  Resolver& operator=(const Resolver&) = delete;

  const TransportConfig& config() const;

  QueryOutcome resolve(const std::string& domain,
                       uint16_t qtype = static_cast<uint16_t>(wire::RecordType::A));

  // Sends a caller-built query and returns the raw response bytes exactly as
  // received (empty on failure; `outcome` says why). The transaction ID on
  // the wire follows transport rules: fresh random for Do53/DoT unless
  // fixed_transaction_id pins it, fixed_transaction_id (default 0) for DoH.
  std::vector<uint8_t> exchange(const wire::DnsMessage& query, QueryOutcome& outcome);

  // Streamed exchange for negotiated partial responses: forwards every
  // response message matching the query until `on_message` returns true
  // (done) or the budget runs out. DoT reads consecutive length-prefixed
  // messages; Do53 accepts consecutive datagrams; DoH expects the response
  // body to be a stream of 2-byte length-prefixed messages. Returns true if
  // on_message signalled done.
  bool exchange_stream(const wire::DnsMessage& query,
                       const std::function<bool(const std::vector<uint8_t>&)>& on_message,
                       QueryOutcome& outcome);

  int connections_opened() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

// Measures each (domain, config) pair exactly once — domains deduplicated in
// first-seen order, at most `parallelism` queries in flight — and never lets
// one failure abort the batch. Outcomes are config-major, then domain order.
std::vector<QueryOutcome> measure_domains(const std::vector<std::string>& domains,
                                          const std::vector<TransportConfig>& configs,
                                          int parallelism = 8);

}  // namespace dnslab::transports
