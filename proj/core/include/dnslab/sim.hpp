#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dnslab/netem.hpp"

namespace dnslab::sim {

enum class Kind { UdpQuery, TcpTlsQuery, Http2Query };

struct FixedTimeout {
  double timeout_ms = 5000;
  int attempts = 2;
};

// Initial RTO = max(floor, 2 x clean RTT), doubling per retry.
struct RtoBackoff {
  double floor_ms = 200;
  double multiplier = 2.0;
  int max_retransmits = 6;
};

struct TransportModel {
  std::string name = "udp";
  Kind kind = Kind::UdpQuery;
  int handshake_rtts = 0;  // 0 pooled, 2 fresh TCP+TLS1.3, +1 for TLS1.2
  double per_query_overhead_bytes = 0;
  // Segments a request rides on: HTTP/2 sends HEADERS + DATA, so each DoH
  // transmission exposes two packets to loss; Do53/DoT send one.
  int packets_per_message = 1;
  double request_budget_ms = 0;  // per-query giveup; 0 = none
  FixedTimeout fixed;            // UdpQuery
  RtoBackoff rto;                // TcpTlsQuery / Http2Query

  static TransportModel udp_model();
  static TransportModel tcp_model(bool pooled);
  static TransportModel do53();
  // fresh=true pays the handshake at session start
  static TransportModel dot(bool fresh = true);
  // DoH gives up on a query after 1.5 s, the way a browser's resolver does,
  // instead of riding TCP retransmission to the end.
  static TransportModel doh(bool fresh = true);
  static TransportModel from_name(const std::string& name, bool fresh = true);
};

// Nominal on-wire sizes fed to the rate limiter (bytes).
inline constexpr double kQueryBytes = 64;
inline constexpr double kResponseBytes = 192;
inline constexpr double kHandshakeBytes = 96;

struct SessionSpec {
  int domain_count = 20;
  int worker_pool = 0;  // 0 = unbounded (asynchronous resolution)
  TransportModel transport;
  netem::NetworkProfile profile;
  double base_rtt_ms = 50;
};

struct QuerySim {
  double issue_ms = 0;
  double completion_ms = 0;
  bool failed = false;
  double response_time_ms() const { return completion_ms - issue_ms; }
};

struct SessionResult {
  double makespan_ms = 0;  // failed names contribute their full budget
  int failures = 0;
  double connection_setup_ms = 0;  // 0 when pooled
  double wire_up_bytes = 0;        // offered, retransmissions included
  double wire_down_bytes = 0;
  std::vector<QuerySim> queries;
};

// Deterministic per (spec, seed).
SessionResult sim_session(const SessionSpec& spec, uint64_t seed);

// Single-name convenience; returns virtual ms until response or giveup.
double sim_query(const TransportModel& transport, const netem::NetworkProfile& profile,
                 double base_rtt_ms, uint64_t seed, bool* failed = nullptr);

struct SpecSummary {
  std::string label;
  double median_ms = 0;
  double mean_ms = 0;
  double p95_ms = 0;
  double failure_rate = 0;  // failed queries / total queries
  std::vector<double> makespans_ms;
};

std::vector<SpecSummary> compare_transports(const std::vector<SessionSpec>& specs, int trials,
                                            uint64_t seed);

}  // namespace dnslab::sim
