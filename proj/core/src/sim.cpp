#include "dnslab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>

#include "dnslab/rng.hpp"
#include "dnslab/stats.hpp"

namespace dnslab::sim {

TransportModel TransportModel::udp_model() {
  TransportModel t;
  t.name = "udp";
  t.kind = Kind::UdpQuery;
  return t;
}

TransportModel TransportModel::tcp_model(bool pooled) {
  TransportModel t;
  t.name = "tcp";
  t.kind = Kind::TcpTlsQuery;
  t.handshake_rtts = pooled ? 0 : 2;
  return t;
}

TransportModel TransportModel::do53() {
  TransportModel t = udp_model();
  t.name = "do53";
  return t;
}

TransportModel TransportModel::dot(bool fresh) {
  TransportModel t = tcp_model(!fresh);
  t.name = "dot";
  t.per_query_overhead_bytes = 31;
  return t;
}

TransportModel TransportModel::doh(bool fresh) {
  TransportModel t;
  t.name = "doh";
  t.kind = Kind::Http2Query;
  t.handshake_rtts = fresh ? 2 : 0;
  t.per_query_overhead_bytes = 120;
  t.packets_per_message = 2;
  t.request_budget_ms = 1500;
  return t;
}

TransportModel TransportModel::from_name(const std::string& name, bool fresh) {
  if (name == "do53") return do53();
  if (name == "dot") return dot(fresh);
  if (name == "doh") return doh(fresh);
  if (name == "udp") return udp_model();
  if (name == "tcp") return tcp_model(!fresh);
  throw std::invalid_argument("unknown transport model: " + name);
}

namespace {

enum class Ev { CopySend, ReqArrive, RespArrive, GiveUp };

struct Event {
  double t;
  uint64_t seq;
  Ev type;
  int msg;
  int copy;
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    return a.t != b.t ? a.t > b.t : a.seq > b.seq;
  }
};

struct Msg {
  int name = -1;  // query index; -1 for handshake exchanges
  int worker = -1;
  int conn = -1;
  int conn_seq = -1;  // stream slot, claimed when the first copy goes out
  double issue = 0;
  double first_send = 0;
  double req_bytes = 0;
  double resp_bytes = 0;
  int packets = 1;
  bool req_delivered = false;
  bool done = false;
  bool failed = false;
  double completion = 0;
};

struct Conn {
  bool ready = false;
  bool dead = false;
  double ready_at = 0;
  int hs_remaining = 0;
  int next_seq = 0;
  int next_expected = 0;           // in-order request cursor
  std::map<int, double> blocked;   // conn_seq -> first arrival, ahead of cursor
  double last_resp_deliver = 0;
  std::vector<int> parked;         // queries waiting for the handshake
};

class Engine {
 public:
  Engine(const SessionSpec& spec, uint64_t seed)
      : spec_(spec), shaper_(spec.profile, seed) {
    const netem::NetworkProfile& p = spec.profile;
    rtt_clean_ = spec.base_rtt_ms;
    if (p.shapes(netem::Direction::Egress)) rtt_clean_ += p.latency_ms;
    if (p.shapes(netem::Direction::Ingress)) rtt_clean_ += p.latency_ms;
    rto_ = std::max(spec.transport.rto.floor_ms, 2 * rtt_clean_);
  }

  SessionResult run() {
    const TransportModel& t = spec_.transport;
    int n = spec_.domain_count;
    int pool = spec_.worker_pool <= 0 ? n : std::min(spec_.worker_pool, n);
    result_.queries.resize(size_t(n));

    worker_names_.resize(size_t(pool));
    worker_next_.assign(size_t(pool), 0);
    worker_conn_.assign(size_t(pool), -1);
    for (int i = 0; i < n; ++i) worker_names_[size_t(i % pool)].push_back(i);

    if (t.kind == Kind::TcpTlsQuery) {
      conns_.resize(size_t(pool));
      for (int w = 0; w < pool; ++w) worker_conn_[size_t(w)] = w;
    } else if (t.kind == Kind::Http2Query) {
      conns_.resize(1);
      for (int w = 0; w < pool; ++w) worker_conn_[size_t(w)] = 0;
    }
    for (size_t c = 0; c < conns_.size(); ++c) {
      if (t.handshake_rtts == 0) {
        conns_[c].ready = true;
      } else {
        conns_[c].hs_remaining = t.handshake_rtts;
        issue_handshake(int(c), 0);
      }
    }
    for (int w = 0; w < pool; ++w) issue_next(w, 0);

    while (!q_.empty()) {
      Event e = q_.top();
      q_.pop();
      dispatch(e);
    }

    for (const QuerySim& qs : result_.queries) {
      result_.makespan_ms = std::max(result_.makespan_ms, qs.completion_ms);
      if (qs.failed) ++result_.failures;
    }
    if (!conns_.empty() && t.handshake_rtts > 0)
      result_.connection_setup_ms = conns_[0].ready_at;
    result_.wire_up_bytes = wire_up_;
    result_.wire_down_bytes = wire_down_;
    return std::move(result_);
  }

 private:
  void schedule(double t, Ev type, int msg, int copy = 0) {
    q_.push(Event{t, seq_++, type, msg, copy});
  }

  // cumulative backoff before the n-th transmission (n=0 -> 0)
  double backoff_cum(int n) const {
    double m = spec_.transport.rto.multiplier;
    if (m == 1) return rto_ * n;
    return rto_ * (std::pow(m, n) - 1) / (m - 1);
  }

  void issue_handshake(int c, double t) {
    Msg m;
    m.conn = c;
    m.issue = t;
    m.req_bytes = kHandshakeBytes;
    m.resp_bytes = kHandshakeBytes;
    msgs_.push_back(m);
    int idx = int(msgs_.size()) - 1;
    schedule(t, Ev::CopySend, idx, 0);
    schedule(t + backoff_cum(spec_.transport.rto.max_retransmits + 1), Ev::GiveUp, idx);
  }

  void issue_next(int w, double t) {
    size_t& cursor = worker_next_[size_t(w)];
    if (cursor >= worker_names_[size_t(w)].size()) return;
    int name = worker_names_[size_t(w)][cursor];
    ++cursor;
    issue_query(w, name, t);
  }

  void issue_query(int w, int name, double t) {
    const TransportModel& tm = spec_.transport;
    Msg m;
    m.name = name;
    m.worker = w;
    m.conn = worker_conn_[size_t(w)];
    m.issue = t;
    m.req_bytes = kQueryBytes + tm.per_query_overhead_bytes;
    m.resp_bytes = kResponseBytes + tm.per_query_overhead_bytes;
    m.packets = tm.packets_per_message;
    result_.queries[size_t(name)].issue_ms = t;
    msgs_.push_back(m);
    int idx = int(msgs_.size()) - 1;

    if (tm.request_budget_ms > 0) schedule(t + tm.request_budget_ms, Ev::GiveUp, idx);
    if (tm.kind == Kind::UdpQuery) {
      schedule(t, Ev::CopySend, idx, 0);
      schedule(t + tm.fixed.timeout_ms * tm.fixed.attempts, Ev::GiveUp, idx);
      return;
    }
    Conn& c = conns_[size_t(m.conn)];
    if (c.dead) {
      schedule(t, Ev::GiveUp, idx);
    } else if (c.ready) {
      schedule(t, Ev::CopySend, idx, 0);
    } else {
      c.parked.push_back(idx);
    }
  }

  void dispatch(const Event& e) {
    switch (e.type) {
      case Ev::CopySend: on_copy_send(e.msg, e.copy, e.t); break;
      case Ev::ReqArrive: on_req_arrive(e.msg, e.t); break;
      case Ev::RespArrive: on_resp_arrive(e.msg, e.t); break;
      case Ev::GiveUp: on_give_up(e.msg, e.t); break;
    }
  }

  void on_copy_send(int mi, int k, double t) {
    Msg& m = msgs_[size_t(mi)];
    // Delivered requests stop retrying once the query is settled; a message
    // on a TCP-like stream keeps retransmitting past its own giveup so the
    // in-order stream behind it eventually advances.
    if (m.req_delivered ? m.done : (m.done && m.conn < 0)) return;
    const TransportModel& tm = spec_.transport;
    if (k == 0) {
      m.first_send = t;
      if (m.conn >= 0 && m.conn_seq < 0) m.conn_seq = conns_[size_t(m.conn)].next_seq++;
      if (tm.kind != Kind::UdpQuery && m.name >= 0)
        schedule(t + backoff_cum(tm.rto.max_retransmits + 1), Ev::GiveUp, mi);
    }
    wire_up_ += m.req_bytes;
    bool lost = false;
    double arr = 0;
    for (int j = 0; j < m.packets; ++j) {
      netem::Verdict v =
          shaper_.shape_packet(netem::Direction::Egress, m.req_bytes / m.packets, t);
      if (v.dropped) lost = true;
      arr = std::max(arr, v.deliver_at_ms);
    }
    if (!lost) schedule(arr + spec_.base_rtt_ms / 2, Ev::ReqArrive, mi);

    if (tm.kind == Kind::UdpQuery) {
      if (k + 1 < tm.fixed.attempts)
        schedule(m.issue + tm.fixed.timeout_ms * (k + 1), Ev::CopySend, mi, k + 1);
    } else if (k + 1 <= tm.rto.max_retransmits) {
      schedule(m.first_send + backoff_cum(k + 1), Ev::CopySend, mi, k + 1);
    }
  }

  void on_req_arrive(int mi, double t) {
    Msg& m = msgs_[size_t(mi)];
    if (m.req_delivered) {
      // duplicate: the server answers again, which recovers lost responses
      if (!m.done) send_response(mi, t);
      return;
    }
    if (m.conn < 0) {
      deliver_req(mi, t);
      return;
    }
    Conn& c = conns_[size_t(m.conn)];
    if (m.conn_seq == c.next_expected) {
      deliver_req(mi, t);
      ++c.next_expected;
      auto it = c.blocked.begin();
      while (it != c.blocked.end() && it->first == c.next_expected) {
        int bi = find_by_seq(m.conn, it->first);
        if (bi >= 0) deliver_req(bi, t);
        ++c.next_expected;
        it = c.blocked.erase(it);
      }
    } else if (m.conn_seq > c.next_expected) {
      c.blocked.emplace(m.conn_seq, t);
    }
  }

  int find_by_seq(int conn, int conn_seq) {
    // messages are few per session; linear scan keeps the state simple
    for (size_t i = 0; i < msgs_.size(); ++i)
      if (msgs_[i].conn == conn && msgs_[i].conn_seq == conn_seq) return int(i);
    return -1;
  }

  void deliver_req(int mi, double t) {
    msgs_[size_t(mi)].req_delivered = true;
    send_response(mi, t);
  }

  void send_response(int mi, double t) {
    Msg& m = msgs_[size_t(mi)];
    wire_down_ += m.resp_bytes;
    netem::Verdict v = shaper_.shape_packet(netem::Direction::Ingress, m.resp_bytes, t);
    if (v.dropped) return;
    double arr = v.deliver_at_ms + spec_.base_rtt_ms / 2;
    if (m.conn >= 0) {
      Conn& c = conns_[size_t(m.conn)];
      arr = std::max(arr, c.last_resp_deliver);
      c.last_resp_deliver = arr;
    }
    schedule(arr, Ev::RespArrive, mi);
  }

  void on_resp_arrive(int mi, double t) {
    Msg& m = msgs_[size_t(mi)];
    if (m.done) return;
    m.done = true;
    m.completion = t;
    finish(mi, t);
  }

  void on_give_up(int mi, double t) {
    Msg& m = msgs_[size_t(mi)];
    if (m.done) return;
    m.done = true;
    m.failed = true;
    m.completion = t;
    finish(mi, t);
  }

  void finish(int mi, double t) {
    Msg& m = msgs_[size_t(mi)];
    if (m.name < 0) {
      Conn& c = conns_[size_t(m.conn)];
      --c.hs_remaining;
      if (m.failed) {
        c.dead = true;
        for (int pi : c.parked) schedule(t, Ev::GiveUp, pi);
        c.parked.clear();
        return;
      }
      if (c.hs_remaining > 0) {
        issue_handshake(m.conn, t);
        return;
      }
      c.ready = true;
      c.ready_at = t;
      for (int pi : c.parked) schedule(t, Ev::CopySend, pi, 0);
      c.parked.clear();
      return;
    }
    QuerySim& qs = result_.queries[size_t(m.name)];
    qs.completion_ms = m.completion;
    qs.failed = m.failed;
    issue_next(m.worker, t);
  }

  const SessionSpec& spec_;
  netem::Shaper shaper_;
  double rtt_clean_ = 0;
  double rto_ = 0;
  std::vector<Msg> msgs_;
  std::vector<Conn> conns_;
  std::vector<std::vector<int>> worker_names_;
  std::vector<size_t> worker_next_;
  std::vector<int> worker_conn_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> q_;
  uint64_t seq_ = 0;
  double wire_up_ = 0;
  double wire_down_ = 0;
  SessionResult result_;
};

}  // namespace

SessionResult sim_session(const SessionSpec& spec, uint64_t seed) {
  if (spec.domain_count <= 0) throw std::invalid_argument("domain_count must be positive");
  spec.profile.validate();
  return Engine(spec, seed).run();
}

double sim_query(const TransportModel& transport, const netem::NetworkProfile& profile,
                 double base_rtt_ms, uint64_t seed, bool* failed) {
  SessionSpec spec;
  spec.domain_count = 1;
  spec.worker_pool = 1;
  spec.transport = transport;
  spec.profile = profile;
  spec.base_rtt_ms = base_rtt_ms;
  SessionResult r = sim_session(spec, seed);
  if (failed) *failed = r.queries[0].failed;
  return r.queries[0].completion_ms;
}

std::vector<SpecSummary> compare_transports(const std::vector<SessionSpec>& specs, int trials,
                                            uint64_t seed) {
  std::vector<SpecSummary> out;
  for (size_t s = 0; s < specs.size(); ++s) {
    SpecSummary sum;
    sum.label = specs[s].transport.name + "/" + specs[s].profile.name +
                (specs[s].worker_pool <= 0 ? "/async"
                                           : "/pool" + std::to_string(specs[s].worker_pool));
    size_t failures = 0, total = 0;
    for (int i = 0; i < trials; ++i) {
      SessionResult r = sim_session(specs[s], rng::derive_seed(seed, uint64_t(s), uint64_t(i), 0));
      sum.makespans_ms.push_back(r.makespan_ms);
      failures += size_t(r.failures);
      total += r.queries.size();
    }
    stats::CdfSummary cdf = stats::CdfSummary::from_samples(sum.makespans_ms);
    sum.median_ms = cdf.median();
    sum.mean_ms = cdf.mean();
    sum.p95_ms = cdf.quantile(0.95);
    sum.failure_rate = total ? double(failures) / double(total) : 0;
    out.push_back(std::move(sum));
  }
  return out;
}

}  // namespace dnslab::sim
