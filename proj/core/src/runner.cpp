#include "dnslab/runner.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "dnslab/kvconfig.hpp"
#include "dnslab/netem.hpp"
#include "dnslab/rng.hpp"
#include "dnslab/sim.hpp"
#include "dnslab/stats.hpp"
#include "json.hpp"

namespace dnslab::runner {

using ojson = nlohmann::ordered_json;

std::string protocol_to_string(Protocol p) {
  switch (p) {
    case Protocol::Do53: return "do53";
    case Protocol::DoT: return "dot";
    case Protocol::DoH: return "doh";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "do53") return Protocol::Do53;
  if (s == "dot") return Protocol::DoT;
  if (s == "doh") return Protocol::DoH;
  throw std::invalid_argument("unknown protocol: " + s);
}

bool Provider::supports(Protocol p) const {
  switch (p) {
    case Protocol::Do53: return !do53_addr.empty();
    case Protocol::DoT: return !dot_addr.empty();
    case Protocol::DoH: return !doh_uri.empty();
  }
  return false;
}

std::vector<Website> load_website_list(const std::string& path,
                                       std::optional<std::pair<long, long>> rank_range) {
  std::ifstream in(path);
  if (!in) throw MalformedList("cannot open website list: " + path);
  std::vector<Website> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = kv::trim(line);
    if (t.empty()) continue;
    size_t comma = t.find(',');
    std::string rank_s = comma == std::string::npos ? t : t.substr(0, comma);
    std::string domain = comma == std::string::npos ? "" : kv::trim(t.substr(comma + 1));
    char* end = nullptr;
    long rank = std::strtol(rank_s.c_str(), &end, 10);
    if (comma == std::string::npos || domain.empty() || end == rank_s.c_str() || *end != '\0')
      throw MalformedList(path + ":" + std::to_string(lineno) + ": expected `rank,domain`, got `" +
                          t + "`");
    if (rank_range && (rank < rank_range->first || rank > rank_range->second)) continue;
    out.push_back({rank, domain});
  }
  if (out.empty()) throw EmptySelection("no websites selected from " + path);
  return out;
}

ExperimentPlan plan_experiment(const ExperimentConfig& cfg) {
  if (cfg.websites.empty()) throw std::invalid_argument("no websites configured");
  if (cfg.providers.empty()) throw std::invalid_argument("no providers configured");
  if (cfg.protocols.empty()) throw std::invalid_argument("no protocols selected");
  if (cfg.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  for (const Provider& p : cfg.providers) {
    bool full = true;
    for (Protocol proto : cfg.protocols) full = full && p.supports(proto);
    if (!full && !p.do53_only())
      throw std::invalid_argument("provider " + p.label +
                                  " lacks endpoints for selected protocols and is not a "
                                  "Do53-only baseline");
  }

  std::vector<std::pair<Protocol, std::string>> combo_template;
  for (Protocol proto : cfg.protocols)
    for (const Provider& p : cfg.providers)
      if (p.supports(proto)) combo_template.emplace_back(proto, p.label);
  if (combo_template.empty())
    throw std::invalid_argument("no provider supports any selected protocol");

  ExperimentPlan plan;
  plan.seed = cfg.seed;
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    std::vector<size_t> order(cfg.websites.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Rng site_rng(rng::derive_seed(cfg.seed, 1, uint64_t(rep)));
    site_rng.shuffle(order);
    for (size_t idx : order) {
      auto combos = combo_template;
      rng::Rng combo_rng(rng::derive_seed(cfg.seed, 2, uint64_t(rep), uint64_t(idx)));
      combo_rng.shuffle(combos);
      for (const auto& [proto, prov] : combos)
        plan.trials.push_back({cfg.websites[idx], proto, prov});
    }
  }
  return plan;
}

OutcomeClass classify_outcome(const RawResult& raw, double page_budget_ms) {
  if (raw.harness_error) return OutcomeClass::HarnessError;
  if (raw.transport_error) return OutcomeClass::OtherError;
  if (raw.dns_failures > 0) return OutcomeClass::DnsError;
  if (raw.makespan_ms > page_budget_ms) return OutcomeClass::PageLoadTimeout;
  return OutcomeClass::Successful;
}

namespace {

int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ojson to_json(const TrialRecord& r) {
  return ojson{{"schema_version", r.schema_version},
               {"website", r.website},
               {"rank", r.rank},
               {"protocol", protocol_to_string(r.protocol)},
               {"provider", r.provider},
               {"profile", r.profile},
               {"outcome_class", outcome_to_string(r.outcome_class)},
               {"response_time_ms", r.response_time_ms},
               {"connection_setup_ms", r.connection_setup_ms},
               {"makespan_ms", r.makespan_ms},
               {"wire_up", r.wire_up},
               {"wire_down", r.wire_down},
               {"error_detail", r.error_detail},
               {"ts", r.ts}};
}

TrialRecord from_json(const ojson& j) {
  TrialRecord r;
  r.schema_version = j.value("schema_version", 1);
  r.website = j.value("website", "");
  r.rank = j.value("rank", 0L);
  r.protocol = protocol_from_string(j.value("protocol", "do53"));
  r.provider = j.value("provider", "");
  r.profile = j.value("profile", "");
  r.outcome_class = outcome_from_string(j.value("outcome_class", "OtherError"));
  r.response_time_ms = j.value("response_time_ms", -1.0);
  r.connection_setup_ms = j.value("connection_setup_ms", -1.0);
  r.makespan_ms = j.value("makespan_ms", -1.0);
  r.wire_up = j.value("wire_up", 0.0);
  r.wire_down = j.value("wire_down", 0.0);
  r.error_detail = j.value("error_detail", "");
  r.ts = j.value("ts", int64_t(0));
  return r;
}

const char* kHeader = "{\"schema\":\"dnslab-trials\",\"version\":1}";

TrialRecord run_simulated(const Trial& trial, const ExperimentConfig& cfg, uint64_t seed) {
  TrialRecord rec;
  sim::SessionSpec spec;
  spec.domain_count = cfg.domain_count;
  spec.base_rtt_ms = cfg.base_rtt_ms;
  spec.profile = netem::resolve_profile(cfg.profile);
  switch (trial.protocol) {
    case Protocol::Do53:
      spec.transport = sim::TransportModel::do53();
      spec.worker_pool = cfg.worker_pool;
      break;
    case Protocol::DoT:
      spec.transport = sim::TransportModel::dot(true);
      spec.worker_pool = cfg.worker_pool;
      break;
    case Protocol::DoH:
      spec.transport = sim::TransportModel::doh(true);
      spec.worker_pool = 0;  // browser resolver issues lookups asynchronously
      break;
  }
  sim::SessionResult sr = sim::sim_session(spec, seed);

  RawResult raw;
  raw.dns_failures = sr.failures;
  raw.makespan_ms = sr.makespan_ms;
  rec.outcome_class = classify_outcome(raw, cfg.page_budget_ms);
  rec.makespan_ms = sr.makespan_ms;
  rec.connection_setup_ms = sr.connection_setup_ms;
  rec.wire_up = sr.wire_up_bytes;
  rec.wire_down = sr.wire_down_bytes;
  std::vector<double> ok;
  for (const sim::QuerySim& q : sr.queries)
    if (!q.failed) ok.push_back(q.response_time_ms());
  if (!ok.empty()) rec.response_time_ms = stats::CdfSummary::from_samples(std::move(ok)).median();
  if (sr.failures > 0)
    rec.error_detail = std::to_string(sr.failures) + " of " +
                       std::to_string(sr.queries.size()) + " lookups failed";
  return rec;
}

}  // namespace

void write_records(const std::string& path, const std::vector<TrialRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MalformedRecords("cannot write " + path);
  out << kHeader << "\n";
  for (const TrialRecord& r : records) out << to_json(r).dump() << "\n";
}

std::vector<TrialRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedRecords("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw MalformedRecords(path + ": empty results file");
  ojson header = ojson::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("schema", "") != "dnslab-trials")
    throw MalformedRecords(path + ": missing dnslab-trials header");
  std::vector<TrialRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (kv::trim(line).empty()) continue;
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded())
      throw MalformedRecords(path + ":" + std::to_string(lineno) + ": bad record");
    out.push_back(from_json(j));
  }
  return out;
}

std::vector<TrialRecord> execute_plan(const ExperimentPlan& plan, const ExperimentConfig& cfg,
                                      Mode mode, const ExecuteOptions& opts) {
  if (mode == Mode::LiveQueries && !opts.live_backend)
    throw std::invalid_argument("live mode requires a backend");

  std::vector<TrialRecord> records;
  if (opts.resume && !opts.out_path.empty()) {
    std::ifstream probe(opts.out_path);
    if (probe.good()) records = read_records(opts.out_path);
  }
  size_t skip = records.size();

  std::ofstream out;
  if (!opts.out_path.empty()) {
    out.open(opts.out_path, skip > 0 ? std::ios::app : std::ios::trunc);
    if (!out) throw MalformedRecords("cannot write " + opts.out_path);
    if (skip == 0) out << kHeader << "\n" << std::flush;
  }

  for (size_t i = skip; i < plan.trials.size(); ++i) {
    const Trial& trial = plan.trials[i];
    TrialRecord rec;
    uint64_t seed = rng::derive_seed(plan.seed, 3, uint64_t(i));
    if (mode == Mode::SimulatedSessions) {
      try {
        rec = run_simulated(trial, cfg, seed);
      } catch (const std::exception& e) {
        rec.outcome_class = OutcomeClass::HarnessError;
        rec.error_detail = e.what();
      }
    } else {
      try {
        LiveResult lr = opts.live_backend(trial);
        rec.outcome_class = classify_outcome(lr.raw, cfg.page_budget_ms);
        rec.response_time_ms = lr.response_time_ms;
        rec.connection_setup_ms = lr.connection_setup_ms;
        rec.makespan_ms = lr.makespan_ms;
        rec.wire_up = lr.wire_up;
        rec.wire_down = lr.wire_down;
        rec.error_detail = lr.raw.detail;
      } catch (const std::exception& e) {
        rec.outcome_class = OutcomeClass::HarnessError;
        rec.error_detail = e.what();
      }
    }
    rec.website = trial.website.domain;
    rec.rank = trial.website.rank;
    rec.protocol = trial.protocol;
    rec.provider = trial.provider;
    rec.profile = cfg.profile;
    rec.ts = wall_ms();
    if (out.is_open()) out << to_json(rec).dump() << "\n" << std::flush;
    records.push_back(std::move(rec));
  }
  return records;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  kv::KvFile f = kv::KvFile::parse_file(path);
  ExperimentConfig cfg;

  std::vector<std::string> provider_labels = kv::split(f.get_or("providers", ""), ',');
  static const std::set<std::string> known = {
      "websites",    "rank_min",     "rank_max",    "protocols",      "providers", "profile",
      "seed",        "repetitions",  "domain_count", "worker_pool",   "base_rtt_ms",
      "page_budget_ms"};
  for (const std::string& key : f.keys()) {
    if (known.count(key)) continue;
    bool provider_key = false;
    for (const std::string& label : provider_labels)
      for (const char* suffix : {".do53", ".dot", ".doh"})
        if (key == "provider." + label + suffix) provider_key = true;
    if (!provider_key) throw kv::ConfigError(path + ": unknown key `" + key + "`");
  }

  std::optional<std::pair<long, long>> range;
  if (f.has("rank_min") || f.has("rank_max"))
    range = {{long(f.get_int_or("rank_min", 1)),
              long(f.get_int_or("rank_max", std::numeric_limits<long>::max()))}};
  cfg.websites = load_website_list(f.get("websites"), range);

  cfg.protocols.clear();
  for (const std::string& p : kv::split(f.get_or("protocols", "do53,dot,doh"), ','))
    cfg.protocols.push_back(protocol_from_string(p));

  if (provider_labels.empty()) throw kv::ConfigError(path + ": providers list is empty");
  for (const std::string& label : provider_labels) {
    Provider p;
    p.label = label;
    p.do53_addr = f.get_or("provider." + label + ".do53", "");
    p.dot_addr = f.get_or("provider." + label + ".dot", "");
    p.doh_uri = f.get_or("provider." + label + ".doh", "");
    cfg.providers.push_back(std::move(p));
  }

  cfg.profile = f.get_or("profile", "default");
  cfg.seed = uint64_t(f.get_int_or("seed", 0));
  cfg.repetitions = int(f.get_int_or("repetitions", 1));
  cfg.domain_count = int(f.get_int_or("domain_count", 20));
  cfg.worker_pool = int(f.get_int_or("worker_pool", 8));
  cfg.base_rtt_ms = f.get_double_or("base_rtt_ms", 50);
  cfg.page_budget_ms = f.get_double_or("page_budget_ms", 30000);
  return cfg;
}

}  // namespace dnslab::runner
