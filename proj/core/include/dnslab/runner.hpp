#pragma once

// Randomized measurement campaigns: plan (website x protocol x provider)
// trials, execute them against the simulator or a live backend, classify
// outcomes, and persist JSONL results that survive crashes mid-campaign.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dnslab/outcome.hpp"

namespace dnslab::runner {

struct MalformedList : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySelection : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedRecords : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Protocol { Do53, DoT, DoH };
std::string protocol_to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);  // throws std::invalid_argument

struct Website {
  long rank = 0;
  std::string domain;
};

struct Provider {
  std::string label;
  std::string do53_addr;  // host:port, empty = unsupported
  std::string dot_addr;
  std::string doh_uri;
  bool supports(Protocol p) const;
  bool do53_only() const { return !do53_addr.empty() && dot_addr.empty() && doh_uri.empty(); }
};

struct ExperimentConfig {
  std::vector<Website> websites;
  std::vector<Provider> providers;
  std::vector<Protocol> protocols = {Protocol::Do53, Protocol::DoT, Protocol::DoH};
  std::string profile = "default";
  uint64_t seed = 0;
  int repetitions = 1;
  // simulated-session shape
  int domain_count = 20;
  int worker_pool = 8;  // Do53/DoT lookups; DoH sessions always run async
  double base_rtt_ms = 50;
  double page_budget_ms = 30000;
};

struct Trial {
  Website website;
  Protocol protocol = Protocol::Do53;
  std::string provider;
};

struct ExperimentPlan {
  std::vector<Trial> trials;
  uint64_t seed = 0;
};

struct TrialRecord {
  int schema_version = 1;
  std::string website;
  long rank = 0;
  Protocol protocol = Protocol::Do53;
  std::string provider;
  std::string profile;
  OutcomeClass outcome_class = OutcomeClass::OtherError;
  double response_time_ms = -1;
  double connection_setup_ms = -1;
  double makespan_ms = -1;
  double wire_up = 0;
  double wire_down = 0;
  std::string error_detail;
  int64_t ts = 0;  // wall clock, unix milliseconds
};

// rank,domain CSV (Tranco shape); inclusive rank range filter.
std::vector<Website> load_website_list(const std::string& path,
                                       std::optional<std::pair<long, long>> rank_range = {});

// Key-value experiment file; unknown keys are rejected.
ExperimentConfig load_experiment_config(const std::string& path);

ExperimentPlan plan_experiment(const ExperimentConfig& cfg);

struct RawResult {
  bool harness_error = false;
  bool transport_error = false;
  std::string detail;
  int dns_failures = 0;
  double makespan_ms = 0;
};

OutcomeClass classify_outcome(const RawResult& raw, double page_budget_ms);

struct LiveResult {
  RawResult raw;
  double response_time_ms = -1;
  double connection_setup_ms = -1;
  double makespan_ms = -1;
  double wire_up = 0;
  double wire_down = 0;
};

enum class Mode { LiveQueries, SimulatedSessions };

struct ExecuteOptions {
  std::string out_path;  // empty: in-memory only
  bool resume = false;
  std::function<LiveResult(const Trial&)> live_backend;  // required in live mode
};

// Every trial yields exactly one record; per-trial failures are recorded,
// never thrown. Returns the full record list for the plan (existing records
// included when resuming).
std::vector<TrialRecord> execute_plan(const ExperimentPlan& plan, const ExperimentConfig& cfg,
                                      Mode mode, const ExecuteOptions& opts = {});

// JSONL persistence: schema header line, then one record per line.
void write_records(const std::string& path, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_records(const std::string& path);

}  // namespace dnslab::runner
