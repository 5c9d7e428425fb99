// dnslab: one binary, six subcommands. simulate/measure/report cover the
// experiment pipeline; proxy/labdns run live endpoints; har mines browser
// archives for domains and bogus DNS timings.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dnslab/har.hpp"
#include "dnslab/labdns.hpp"
#include "dnslab/net/socket.hpp"
#include "dnslab/netem.hpp"
#include "dnslab/proxy.hpp"
#include "dnslab/rng.hpp"
#include "dnslab/runner.hpp"
#include "dnslab/sim.hpp"
#include "dnslab/stats.hpp"
#include "dnslab/transports.hpp"

namespace {

using namespace dnslab;

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

runner::Protocol record_protocol(const std::string& transport_name) {
  if (transport_name == "doh") return runner::Protocol::DoH;
  if (transport_name == "dot" || transport_name == "tcp") return runner::Protocol::DoT;
  return runner::Protocol::Do53;
}

// ------------------------------------------------------------------ simulate

int cmd_simulate(const std::string& profile_name, const std::string& transport_name,
                 int domains, const std::string& pool, int trials, uint64_t seed,
                 double rtt_ms, const std::string& out_path) {
  sim::SessionSpec spec;
  spec.domain_count = domains;
  spec.base_rtt_ms = rtt_ms;
  spec.profile = netem::resolve_profile(profile_name);
  spec.transport = sim::TransportModel::from_name(transport_name);
  if (pool == "async") {
    spec.worker_pool = 0;
  } else {
    spec.worker_pool = std::stoi(pool);
    if (spec.worker_pool < 0) throw CLI::ValidationError("--pool", "must be >= 0 or 'async'");
  }

  const double budget_ms = 30000;
  std::vector<runner::TrialRecord> records;
  records.reserve(trials);
  for (int i = 0; i < trials; ++i) {
    auto sr = sim::sim_session(spec, rng::derive_seed(seed, 5, static_cast<uint64_t>(i)));
    runner::TrialRecord rec;
    rec.website = "session-" + std::to_string(i);
    rec.rank = i + 1;
    rec.protocol = record_protocol(transport_name);
    rec.provider = "sim";
    rec.profile = spec.profile.name;
    runner::RawResult raw;
    raw.dns_failures = sr.failures;
    raw.makespan_ms = sr.makespan_ms;
    rec.outcome_class = runner::classify_outcome(raw, budget_ms);
    rec.makespan_ms = sr.makespan_ms;
    rec.connection_setup_ms = sr.connection_setup_ms;
    rec.wire_up = sr.wire_up_bytes;
    rec.wire_down = sr.wire_down_bytes;
    std::vector<double> ok;
    for (const auto& q : sr.queries)
      if (!q.failed) ok.push_back(q.response_time_ms());
    if (!ok.empty())
      rec.response_time_ms = stats::CdfSummary::from_samples(std::move(ok)).median();
    if (sr.failures > 0)
      rec.error_detail = std::to_string(sr.failures) + " of " +
                         std::to_string(sr.queries.size()) + " lookups failed";
    rec.ts = std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::system_clock::now().time_since_epoch())
                 .count();
    records.push_back(std::move(rec));
  }

  runner::write_records(out_path.empty() ? "/dev/stdout" : out_path, records);

  std::vector<double> makespans;
  int failed_sessions = 0;
  for (const auto& r : records) {
    makespans.push_back(r.makespan_ms);
    if (r.outcome_class != OutcomeClass::Successful) ++failed_sessions;
  }
  auto cdf = stats::CdfSummary::from_samples(std::move(makespans));
  std::ostream& tbl = out_path.empty() ? std::cerr : std::cout;
  tbl << "transport=" << transport_name << " profile=" << spec.profile.name
      << " domains=" << domains << " pool=" << pool << " trials=" << trials
      << " seed=" << seed << "\n";
  char line[160];
  std::snprintf(line, sizeof line,
                "makespan_ms median=%.1f mean=%.1f p95=%.1f  sessions_not_successful=%d/%d",
                cdf.median(), cdf.mean(), cdf.quantile(0.95), failed_sessions, trials);
  tbl << line << "\n";
  return 0;
}

// ------------------------------------------------------------------- measure

transports::TransportConfig live_config(const runner::Trial& t,
                                        const runner::Provider& prov) {
  transports::TransportConfig cfg;
  cfg.provider = prov.label;
  switch (t.protocol) {
    case runner::Protocol::Do53:
      cfg.protocol = transports::Protocol::Do53;
      cfg.server = prov.do53_addr;
      break;
    case runner::Protocol::DoT:
      cfg.protocol = transports::Protocol::DoT;
      cfg.server = prov.dot_addr;
      break;
    case runner::Protocol::DoH:
      cfg.protocol = transports::Protocol::DoH;
      cfg.server = prov.doh_uri;
      break;
  }
  return cfg;
}

int cmd_measure(const std::string& config_path, const std::string& mode,
                const std::string& out_path, bool resume, bool insecure) {
  auto cfg = runner::load_experiment_config(config_path);
  auto plan = runner::plan_experiment(cfg);

  runner::ExecuteOptions opts;
  opts.out_path = out_path;
  opts.resume = resume;

  runner::Mode m = mode == "live" ? runner::Mode::LiveQueries : runner::Mode::SimulatedSessions;
  std::map<std::string, runner::Provider> providers;
  for (const auto& p : cfg.providers) providers[p.label] = p;
  // One resolver per (provider, protocol): keeps live trials on warm pools.
  std::map<std::string, std::unique_ptr<transports::Resolver>> resolvers;
  std::mutex mu;

  if (m == runner::Mode::LiveQueries) {
    opts.live_backend = [&](const runner::Trial& t) -> runner::LiveResult {
      std::string key = t.provider + "/" + runner::protocol_to_string(t.protocol);
      transports::Resolver* r;
      {
        std::lock_guard<std::mutex> lk(mu);
        auto it = resolvers.find(key);
        if (it == resolvers.end()) {
          auto cfg_t = live_config(t, providers.at(t.provider));
          cfg_t.tls_verify = !insecure;
          it = resolvers.emplace(key, std::make_unique<transports::Resolver>(cfg_t)).first;
        }
        r = it->second.get();
      }
      double t0 = net::now_ms();
      auto oc = r->resolve(t.website.domain);
      double elapsed = net::now_ms() - t0;

      runner::LiveResult lr;
      lr.response_time_ms = oc.response_time;
      lr.connection_setup_ms = oc.connection_setup;
      lr.makespan_ms = oc.response_time >= 0 ? oc.response_time : elapsed;
      lr.wire_up = static_cast<double>(oc.wire_size_up);
      lr.wire_down = static_cast<double>(oc.wire_size_down);
      lr.raw.makespan_ms = lr.makespan_ms;
      switch (oc.result) {
        case transports::ResultKind::Answered:
          break;
        case transports::ResultKind::Timeout:
        case transports::ResultKind::DnsError:
          lr.raw.dns_failures = 1;
          lr.raw.detail = oc.result == transports::ResultKind::Timeout
                              ? "query timeout"
                              : "rcode " + std::to_string(oc.rcode);
          break;
        case transports::ResultKind::TransportError:
          lr.raw.transport_error = true;
          lr.raw.detail = transports::failure_to_string(oc.failure) +
                          (oc.detail.empty() ? "" : ": " + oc.detail);
          break;
      }
      return lr;
    };
  }

  auto records = runner::execute_plan(plan, cfg, m, opts);
  std::map<OutcomeClass, int> by_class;
  for (const auto& r : records) by_class[r.outcome_class]++;
  std::cout << records.size() << " trials -> " << out_path << "\n";
  for (const auto& [oc, n] : by_class)
    std::cout << "  " << outcome_to_string(oc) << ": " << n << "\n";
  return 0;
}

// -------------------------------------------------------------------- report

int cmd_report(const std::string& in_path, const std::string& out_dir, double band_ms) {
  auto records = runner::read_records(in_path);
  if (records.empty()) {
    std::cerr << "report: no records in " << in_path << "\n";
    return 1;
  }

  std::map<std::string, stats::ConfigSamples> configs;
  std::vector<stats::FailureRecord> failures;
  for (const auto& r : records) {
    std::string label = runner::protocol_to_string(r.protocol) + "-" + r.provider;
    failures.push_back({r.profile, runner::protocol_to_string(r.protocol), r.outcome_class});
    if (r.outcome_class != OutcomeClass::Successful) continue;
    double v = r.makespan_ms >= 0 ? r.makespan_ms : r.response_time_ms;
    if (v < 0) continue;
    auto& cs = configs[label];
    cs.label = label;
    cs.samples[r.website] = v;
  }

  std::vector<stats::ConfigSamples> ordered;
  for (auto& [label, cs] : configs) ordered.push_back(std::move(cs));

  auto paths = stats::render_report(ordered, failures, out_dir);
  for (const auto& p : paths) std::cout << p << "\n";

  for (size_t i = 0; i < ordered.size(); ++i) {
    for (size_t j = i + 1; j < ordered.size(); ++j) {
      try {
        auto d = stats::paired_diff(ordered[i].label, ordered[i].samples, ordered[j].label,
                                    ordered[j].samples);
        std::cout << ordered[i].label << " vs " << ordered[j].label << ": median diff "
                  << d.median_diff << " ms -> "
                  << stats::band_to_string(stats::similarity_band(d, band_ms)) << "\n";
      } catch (const stats::NoCommonKeys&) {
        std::cout << ordered[i].label << " vs " << ordered[j].label << ": no common keys\n";
      }
    }
  }
  return 0;
}

// --------------------------------------------------------------------- proxy

transports::TransportConfig parse_upstream(const std::string& uri) {
  transports::TransportConfig cfg;
  cfg.provider = "upstream";
  auto scheme_end = uri.find("://");
  if (scheme_end == std::string::npos)
    throw CLI::ValidationError("--upstream", "want (do53|dot|doh)://ENDPOINT");
  std::string scheme = uri.substr(0, scheme_end);
  std::string rest = uri.substr(scheme_end + 3);
  if (scheme == "do53") {
    cfg.protocol = transports::Protocol::Do53;
    cfg.server = rest;
  } else if (scheme == "dot") {
    cfg.protocol = transports::Protocol::DoT;
    cfg.server = rest;
  } else if (scheme == "doh") {
    cfg.protocol = transports::Protocol::DoH;
    cfg.server = "https://" + rest;
  } else {
    throw CLI::ValidationError("--upstream", "unknown scheme " + scheme);
  }
  return cfg;
}

int cmd_proxy(const std::string& listen, const std::string& upstream, bool cache,
              uint32_t margin_s, bool partial, bool strip_ecs, bool insecure) {
  proxy::ProxyConfig pc;
  pc.listen = listen;
  pc.upstream = parse_upstream(upstream);
  pc.upstream.tls_verify = !insecure;
  pc.cache = cache;
  pc.cache_margin_s = margin_s;
  pc.partial = partial;
  pc.strip_ecs = strip_ecs;

  proxy::OptimProxy px(pc);
  std::cout << "proxy listening on udp " << listen.substr(0, listen.rfind(':')) << ":"
            << px.port() << " -> " << upstream << (cache ? " [cache]" : "")
            << (partial ? " [partial]" : "") << (strip_ecs ? " [strip-ecs]" : "") << std::endl;
  wait_for_signal();
  px.stop();
  std::cout << "proxy: " << px.cache_hits() << " cache hits, " << px.cache_misses()
            << " misses, " << px.upstream_queries() << " upstream queries\n";
  return 0;
}

// -------------------------------------------------------------------- labdns

int cmd_labdns(const std::string& fixtures_path, const std::string& behavior, bool partial,
               const std::string& delays_path, uint16_t udp_port, uint16_t dot_port,
               uint16_t doh_port) {
  std::ifstream in(fixtures_path);
  if (!in) {
    std::cerr << "labdns: cannot read " << fixtures_path << "\n";
    return 1;
  }
  std::stringstream buf;
  buf << in.rdbuf();

  labdns::LabConfig cfg;
  cfg.fixtures = labdns::parse_fixtures(buf.str());
  cfg.behavior = labdns::behavior_from_string(behavior);
  cfg.partial_support = partial;
  cfg.udp_bind = udp_port;
  cfg.dot_bind = dot_port;
  cfg.doh_bind = doh_port;
  if (!delays_path.empty()) {
    std::ifstream din(delays_path);
    if (!din) {
      std::cerr << "labdns: cannot read " << delays_path << "\n";
      return 1;
    }
    std::stringstream dbuf;
    dbuf << din.rdbuf();
    cfg.delays_ms = labdns::parse_delays(dbuf.str());
  }

  labdns::LabRecursor lab(cfg);
  std::cout << "labdns up: do53 127.0.0.1:" << lab.udp_port() << "  dot 127.0.0.1:"
            << lab.dot_port() << "  doh " << lab.doh_url() << "\n"
            << cfg.fixtures.size() << " fixtures, behavior " << behavior
            << (partial ? ", partial responses on" : "") << std::endl;
  wait_for_signal();
  lab.stop();
  std::cout << "labdns: served " << lab.hits() << " queries\n";
  return 0;
}

// ----------------------------------------------------------------------- har

int cmd_har(const std::string& in_path, const std::string& suspects_csv,
            const std::string& domains_out) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::is_directory(in_path)) {
    for (const auto& e : fs::directory_iterator(in_path))
      if (e.is_regular_file() && e.path().extension() == ".har")
        files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in_path);
  }
  if (files.empty()) {
    std::cerr << "har: no .har files under " << in_path << "\n";
    return 1;
  }

  std::vector<har::HarSummary> summaries;
  std::vector<har::Suspect> suspects;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) {
      std::cerr << "har: cannot read " << f << "\n";
      return 1;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    std::vector<har::HarEntry> entries;
    auto summary = har::parse_har(buf.str(), &entries);
    auto flagged = har::flag_suspect_dns(summary, entries);
    std::cout << f << ": " << summary.page_url << " onLoad=" << summary.on_load_ms
              << "ms entries=" << summary.entry_count
              << " domains=" << summary.unique_domains.size()
              << " suspect_dns=" << flagged.size() << "\n";
    summaries.push_back(std::move(summary));
    suspects.insert(suspects.end(), flagged.begin(), flagged.end());
  }

  if (!suspects_csv.empty()) {
    har::write_suspect_csv(suspects_csv, suspects);
    std::cout << suspects.size() << " suspects -> " << suspects_csv << "\n";
  }
  auto domains = har::domains_for_measurement(summaries);
  if (!domains_out.empty()) {
    std::ofstream out(domains_out, std::ios::trunc);
    for (const auto& d : domains) out << d << "\n";
    std::cout << domains.size() << " domains -> " << domains_out << "\n";
  } else {
    std::cout << domains.size() << " unique domains across " << summaries.size()
              << " pages\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DNS transport performance laboratory"};
  app.require_subcommand(1);

  // simulate
  std::string sim_profile = "default", sim_transport = "do53", sim_pool = "8", sim_out;
  int sim_domains = 20, sim_trials = 100;
  uint64_t sim_seed = 1;
  double sim_rtt = 50;
  auto* sim_cmd = app.add_subcommand("simulate", "Run simulated page-load sessions");
  sim_cmd->add_option("--profile", sim_profile, "Network profile name or file");
  sim_cmd->add_option("--transport", sim_transport, "udp|tcp|do53|dot|doh");
  sim_cmd->add_option("--domains", sim_domains, "Unique names per session")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--pool", sim_pool, "Worker pool size, or 'async'");
  sim_cmd->add_option("--trials", sim_trials, "Sessions to simulate")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim_seed, "Root seed");
  sim_cmd->add_option("--rtt", sim_rtt, "Base round-trip time in ms");
  sim_cmd->add_option("--out", sim_out, "JSONL destination (default stdout)");

  // measure
  std::string meas_config, meas_mode = "sim", meas_out = "results.jsonl";
  bool meas_resume = false;
  auto* meas_cmd = app.add_subcommand("measure", "Execute a measurement campaign");
  meas_cmd->add_option("--config", meas_config, "Experiment config file")->required();
  meas_cmd->add_option("--mode", meas_mode, "live|sim")
      ->check(CLI::IsMember({"live", "sim"}));
  meas_cmd->add_option("--out", meas_out, "JSONL results path");
  meas_cmd->add_flag("--resume", meas_resume, "Skip trials already in --out");
  bool meas_insecure = false;
  meas_cmd->add_flag("--insecure", meas_insecure, "Skip TLS verification in live mode");

  // report
  std::string rep_in, rep_out;
  double rep_band = 30;
  auto* rep_cmd = app.add_subcommand("report", "Render CSV/SVG reports from results");
  rep_cmd->add_option("--in", rep_in, "results.jsonl path")->required();
  rep_cmd->add_option("--out", rep_out, "Output directory")->required();
  rep_cmd->add_option("--band-ms", rep_band, "Similarity band for paired diffs");

  // proxy
  std::string px_listen = "127.0.0.1:5353", px_upstream;
  bool px_cache = false, px_partial = false, px_strip = false, px_insecure = false;
  uint32_t px_margin = 0;
  auto* px_cmd = app.add_subcommand("proxy", "Run the caching/partial-response proxy");
  px_cmd->add_option("--listen", px_listen, "UDP listen address host:port");
  px_cmd->add_option("--upstream", px_upstream, "(do53|dot|doh)://ENDPOINT")->required();
  px_cmd->add_flag("--cache", px_cache, "Serve repeat queries from the wire cache");
  px_cmd->add_option("--cache-margin-s", px_margin, "Freshness safety margin, seconds");
  px_cmd->add_flag("--partial", px_partial, "Probe upstream and batch multi-question queries");
  px_cmd->add_flag("--strip-ecs", px_strip, "Drop client ECS from upstream queries");
  px_cmd->add_flag("--insecure", px_insecure, "Skip upstream TLS verification");

  // labdns
  std::string lab_fixtures, lab_behavior = "full", lab_delays;
  bool lab_partial = false;
  auto* lab_cmd = app.add_subcommand("labdns", "Run the fixture-backed lab recursor");
  lab_cmd->add_option("--fixtures", lab_fixtures, "Fixture file: name type ttl rdata")
      ->required();
  lab_cmd->add_option("--behavior", lab_behavior, "full|first-only|drop-multi")
      ->check(CLI::IsMember({"full", "first-only", "drop-multi"}));
  lab_cmd->add_flag("--partial", lab_partial, "Advertise and stream partial responses");
  lab_cmd->add_option("--delays", lab_delays, "Per-name answer delays: name ms");
  uint16_t lab_udp = 0, lab_dot = 0, lab_doh = 0;
  lab_cmd->add_option("--port", lab_udp, "Fixed Do53 UDP port (default ephemeral)");
  lab_cmd->add_option("--dot-port", lab_dot, "Fixed DoT port");
  lab_cmd->add_option("--doh-port", lab_doh, "Fixed DoH port");

  // har
  std::string har_in, har_suspects, har_domains;
  auto* har_cmd = app.add_subcommand("har", "Summarize HAR files and flag bogus DNS timings");
  har_cmd->add_option("--in", har_in, "HAR file or directory")->required();
  har_cmd->add_option("--suspects", har_suspects, "Write suspect CSV here");
  har_cmd->add_option("--domains-out", har_domains, "Write unique domain list here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed())
      return cmd_simulate(sim_profile, sim_transport, sim_domains, sim_pool, sim_trials,
                          sim_seed, sim_rtt, sim_out);
    if (meas_cmd->parsed())
      return cmd_measure(meas_config, meas_mode, meas_out, meas_resume, meas_insecure);
    if (rep_cmd->parsed()) return cmd_report(rep_in, rep_out, rep_band);
    if (px_cmd->parsed())
      return cmd_proxy(px_listen, px_upstream, px_cache, px_margin, px_partial, px_strip,
                       px_insecure);
    if (lab_cmd->parsed())
      return cmd_labdns(lab_fixtures, lab_behavior, lab_partial, lab_delays, lab_udp, lab_dot,
                        lab_doh);
    if (har_cmd->parsed()) return cmd_har(har_in, har_suspects, har_domains);
  } catch (const std::exception& e) {
    std::cerr << "dnslab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
