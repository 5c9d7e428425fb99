#include "dnslab/labdns.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dnslab/net/http2.hpp"
#include "dnslab/net/socket.hpp"
#include "dnslab/net/tls.hpp"

namespace dnslab::labdns {

namespace {

std::string lower_name(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  while (!out.empty() && out.back() == '.') out.pop_back();
  return out;
}

[[noreturn]] void bad_line(const char* what, int lineno, const std::string& text) {
  throw std::runtime_error(std::string(what) + " at line " + std::to_string(lineno) + ": " +
                           text);
}

constexpr uint16_t kSoa = static_cast<uint16_t>(wire::RecordType::SOA);

}  // namespace

MultiBehavior behavior_from_string(const std::string& s) {
  if (s == "full") return MultiBehavior::Full;
  if (s == "first-only") return MultiBehavior::FirstOnly;
  if (s == "drop-multi") return MultiBehavior::DropMulti;
  throw std::invalid_argument("unknown multi-question behavior: " + s);
}

std::vector<Fixture> parse_fixtures(const std::string& text) {
  std::vector<Fixture> out;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    lineno++;
    std::string line = raw.substr(0, raw.find('#'));
    std::istringstream ls(line);
    std::string name, type;
    long long ttl = 0;
    if (!(ls >> name)) continue;
    if (!(ls >> type >> ttl)) bad_line("malformed fixture", lineno, raw);
    if (ttl < 0 || ttl > 0x7fffffff) bad_line("ttl out of range", lineno, raw);

    Fixture f;
    f.name = lower_name(name);
    f.qtype = wire::qtype_from_string(type);  // throws on junk
    f.ttl = static_cast<uint32_t>(ttl);

    switch (static_cast<wire::RecordType>(f.qtype)) {
      case wire::RecordType::A: {
        std::string addr;
        if (!(ls >> addr)) bad_line("missing address", lineno, raw);
        f.rdata = wire::rdata_a(addr);
        break;
      }
      case wire::RecordType::AAAA: {
        std::string addr;
        if (!(ls >> addr)) bad_line("missing address", lineno, raw);
        f.rdata = wire::rdata_aaaa(addr);
        break;
      }
      case wire::RecordType::CNAME:
      case wire::RecordType::NS:
      case wire::RecordType::PTR: {
        std::string target;
        if (!(ls >> target)) bad_line("missing target name", lineno, raw);
        f.rdata = wire::rdata_name(wire::DnsName::from_string(lower_name(target)));
        break;
      }
      case wire::RecordType::TXT: {
        std::string rest;
        std::getline(ls, rest);
        size_t start = rest.find_first_not_of(" \t");
        if (start == std::string::npos) bad_line("missing text", lineno, raw);
        f.rdata = wire::rdata_txt(rest.substr(start));
        break;
      }
      case wire::RecordType::SOA: {
        std::string mname, rname;
        long long serial, refresh, retry, expire, minimum;
        if (!(ls >> mname >> rname >> serial >> refresh >> retry >> expire >> minimum))
          bad_line("soa needs 7 fields", lineno, raw);
        f.rdata = wire::rdata_soa(wire::DnsName::from_string(lower_name(mname)),
                                  wire::DnsName::from_string(lower_name(rname)),
                                  static_cast<uint32_t>(serial), static_cast<uint32_t>(refresh),
                                  static_cast<uint32_t>(retry), static_cast<uint32_t>(expire),
                                  static_cast<uint32_t>(minimum));
        break;
      }
      default:
        bad_line("unsupported fixture type", lineno, raw);
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::map<std::string, double> parse_delays(const std::string& text) {
  std::map<std::string, double> out;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    lineno++;
    std::string line = raw.substr(0, raw.find('#'));
    std::istringstream ls(line);
    std::string name;
    double ms = 0;
    if (!(ls >> name)) continue;
    if (!(ls >> ms) || ms < 0) bad_line("malformed delay", lineno, raw);
    out[lower_name(name)] = ms;
  }
  return out;
}

wire::DnsMessage answer_for(const std::vector<Fixture>& fixtures, const wire::Question& q,
                            uint32_t soa_minimum_s) {
  wire::DnsMessage r;
  r.questions.push_back(q);
  const std::string name = q.name.lowered_string();
  bool known = false;
  for (const auto& f : fixtures) {
    if (f.name != name) continue;
    known = true;
    if (q.qclass == wire::kClassIn && f.qtype == q.qtype)
      r.answers.push_back({q.name, f.qtype, wire::kClassIn, f.ttl, f.rdata});
  }
  if (r.answers.empty()) {
    r.header.rcode = known ? 0 : static_cast<uint8_t>(wire::Rcode::NxDomain);
    auto zone = wire::DnsName::from_string("lab");
    r.authorities.push_back(
        {zone, kSoa, wire::kClassIn, soa_minimum_s,
         wire::rdata_soa(wire::DnsName::from_string("ns.lab"),
                         wire::DnsName::from_string("admin.lab"), 1, 3600, 600, 86400,
                         soa_minimum_s)});
  }
  return r;
}

using Emit = std::function<void(const std::vector<uint8_t>&, bool final)>;

struct LabRecursor::Impl {
  LabConfig cfg;
  std::atomic<bool> stopping{false};
  mutable std::mutex mu;
  std::condition_variable stop_cv;
  int hits_total = 0;
  std::map<std::string, int> hits_by_name;
  int dot_accepted = 0;
  std::vector<uint16_t> doh_ids;
  std::map<std::string, int> reset_left;

  net::UdpSocket udp{net::Addr{"127.0.0.1", cfg.udp_bind}};
  net::TcpListener dot{net::Addr{"127.0.0.1", cfg.dot_bind}};
  net::TlsContext dot_ctx = net::TlsContext::server();
  std::unique_ptr<net::Http2Server> doh;
  std::thread udp_thread, dot_thread;
  std::vector<std::thread> workers;

  explicit Impl(const LabConfig& c) : cfg(c), reset_left(c.reset_counts) {}

  // True when the server is shutting down; otherwise sleeps the full span.
  bool wait_stop(double ms) {
    std::unique_lock<std::mutex> lk(mu);
    return stop_cv.wait_for(lk, std::chrono::duration<double, std::milli>(ms),
                            [&] { return stopping.load(); });
  }

  void record(const wire::DnsMessage& q) {
    std::lock_guard<std::mutex> g(mu);
    hits_total++;
    if (!q.questions.empty()) hits_by_name[q.questions[0].name.lowered_string()]++;
  }

  double delay_for(const wire::Question& q) const {
    auto it = cfg.delays_ms.find(q.name.lowered_string());
    return it == cfg.delays_ms.end() ? 0.0 : it->second;
  }

  bool swallowed(const wire::DnsMessage& q) const {
    if (cfg.mute) return true;
    return !q.questions.empty() && cfg.drop_names.count(q.questions[0].name.lowered_string());
  }

  bool offered(const wire::DnsMessage& q) const {
    return partial::find_role(q, cfg.partial_option_code) == partial::Role::ClientOffer;
  }

  bool will_stream(const wire::DnsMessage& q) const {
    return q.questions.size() > 1 && cfg.partial_support &&
           cfg.behavior == MultiBehavior::Full && offered(q);
  }

  void fill_header(wire::DnsMessage& r, const wire::DnsMessage& q) const {
    r.header.id = q.header.id;
    r.header.qr = true;
    r.header.aa = true;
    r.header.rd = q.header.rd;
    r.header.ra = true;
    if (q.edns && !r.edns) r.edns.emplace();
  }

  wire::DnsMessage answer_one(const wire::DnsMessage& q, size_t qi) const {
    auto r = answer_for(cfg.fixtures, q.questions[qi], cfg.soa_minimum_s);
    fill_header(r, q);
    return r;
  }

  // Emits zero or more complete response messages for one query; the last
  // one carries final=true. Silence (DropMulti, shutdown) emits nothing.
  void respond(const wire::DnsMessage& q, const Emit& emit) {
    if (q.questions.empty()) return;
    const size_t n = q.questions.size();

    if (n == 1) {
      double d = delay_for(q.questions[0]);
      if (d > 0 && wait_stop(d)) return;
      auto r = answer_one(q, 0);
      if (cfg.partial_support && cfg.behavior == MultiBehavior::Full && offered(q))
        partial::attach(r, cfg.partial_option_code, partial::Role::ServerAck);
      emit(wire::encode_message(r), true);
      return;
    }

    if (cfg.behavior == MultiBehavior::DropMulti) return;

    if (cfg.behavior == MultiBehavior::FirstOnly) {
      double d = delay_for(q.questions[0]);
      if (d > 0 && wait_stop(d)) return;
      emit(wire::encode_message(answer_one(q, 0)), true);
      return;
    }

    if (will_stream(q)) {
      std::vector<size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return delay_for(q.questions[a]) < delay_for(q.questions[b]);
      });
      double t0 = net::now_ms();
      for (size_t k = 0; k < n; k++) {
        double due = t0 + delay_for(q.questions[order[k]]);
        double span = due - net::now_ms();
        if (span > 0 && wait_stop(span)) return;
        auto r = answer_one(q, order[k]);
        partial::attach(r, cfg.partial_option_code,
                        k + 1 == n ? partial::Role::Final : partial::Role::MoreComing);
        emit(wire::encode_message(r), k + 1 == n);
      }
      return;
    }

    // One combined response, gated on the slowest name.
    double dmax = 0;
    for (const auto& question : q.questions) dmax = std::max(dmax, delay_for(question));
    if (dmax > 0 && wait_stop(dmax)) return;

    wire::DnsMessage r;
    fill_header(r, q);
    r.questions = q.questions;
    bool all_missing = true;
    bool any_empty = false;
    for (size_t i = 0; i < n; i++) {
      auto one = answer_for(cfg.fixtures, q.questions[i], cfg.soa_minimum_s);
      if (one.header.rcode != static_cast<uint8_t>(wire::Rcode::NxDomain)) all_missing = false;
      if (one.answers.empty()) {
        any_empty = true;
      } else {
        r.answers.insert(r.answers.end(), one.answers.begin(), one.answers.end());
      }
    }
    if (all_missing) r.header.rcode = static_cast<uint8_t>(wire::Rcode::NxDomain);
    if (any_empty) {
      r.authorities.push_back(
          {wire::DnsName::from_string("lab"), kSoa, wire::kClassIn, cfg.soa_minimum_s,
           wire::rdata_soa(wire::DnsName::from_string("ns.lab"),
                           wire::DnsName::from_string("admin.lab"), 1, 3600, 600, 86400,
                           cfg.soa_minimum_s)});
    }
    emit(wire::encode_message(r), true);
  }

  template <typename Fn>
  void spawn(Fn&& fn) {
    std::lock_guard<std::mutex> g(mu);
    if (stopping.load()) return;
    workers.emplace_back(std::forward<Fn>(fn));
  }

  void udp_loop() {
    while (!stopping.load()) {
      net::Addr from;
      std::optional<std::vector<uint8_t>> dg;
      try {
        dg = udp.recv_from(&from, net::now_ms() + 100);
      } catch (const net::NetError&) {
        break;
      }
      if (!dg) continue;
      wire::DnsMessage q;
      try {
        q = wire::decode_message(*dg);
      } catch (const wire::DecodeError&) {
        continue;
      }
      if (q.header.qr) continue;
      record(q);
      if (swallowed(q)) continue;
      spawn([this, q = std::move(q), from] {
        respond(q, [&](const std::vector<uint8_t>& bytes, bool) {
          try {
            udp.send_to(from, bytes.data(), bytes.size());
          } catch (const net::NetError&) {
          }
        });
      });
    }
  }

  bool should_reset(const wire::DnsMessage& q) {
    if (q.questions.empty()) return false;
    std::lock_guard<std::mutex> g(mu);
    auto it = reset_left.find(q.questions[0].name.lowered_string());
    if (it == reset_left.end() || it->second <= 0) return false;
    it->second--;
    return true;
  }

  void dot_loop() {
    while (!stopping.load()) {
      std::optional<net::TcpStream> tcp;
      try {
        tcp = dot.accept(net::now_ms() + 100);
      } catch (const net::NetError&) {
        break;
      }
      if (!tcp) continue;
      {
        std::lock_guard<std::mutex> g(mu);
        dot_accepted++;
      }
      spawn([this, t = std::move(*tcp)]() mutable { dot_conn(std::move(t)); });
    }
  }

  void dot_conn(net::TcpStream tcp) {
    net::TlsStream tls;
    try {
      tls = net::TlsStream::accept(dot_ctx, std::move(tcp), net::now_ms() + 5000);
    } catch (const net::NetError&) {
      return;
    }
    std::vector<uint8_t> buf;
    uint8_t tmp[4096];
    while (!stopping.load()) {
      while (buf.size() >= 2) {
        size_t len = (buf[0] << 8) | buf[1];
        if (buf.size() < 2 + len) break;
        std::vector<uint8_t> bytes(buf.begin() + 2, buf.begin() + 2 + static_cast<long>(len));
        buf.erase(buf.begin(), buf.begin() + 2 + static_cast<long>(len));
        wire::DnsMessage q;
        try {
          q = wire::decode_message(bytes);
        } catch (const wire::DecodeError&) {
          continue;
        }
        record(q);
        if (swallowed(q)) continue;
        if (should_reset(q)) {
          tls.close();
          return;
        }
        bool alive = true;
        respond(q, [&](const std::vector<uint8_t>& m, bool) {
          uint8_t pre[2] = {static_cast<uint8_t>(m.size() >> 8),
                            static_cast<uint8_t>(m.size() & 0xff)};
          try {
            tls.write_all(pre, 2, net::now_ms() + 5000);
            tls.write_all(m.data(), m.size(), net::now_ms() + 5000);
          } catch (const net::NetError&) {
            alive = false;
          }
        });
        if (!alive) return;
      }
      try {
        size_t n = tls.read_some(tmp, sizeof tmp, net::now_ms() + 100);
        buf.insert(buf.end(), tmp, tmp + n);
      } catch (const net::TimeoutError&) {
        continue;
      } catch (const net::NetError&) {
        return;
      }
    }
  }

  void doh_handle(const net::Http2Server::Request& req, net::Http2Server::Responder& rsp) {
    if (cfg.doh_status != 200) {
      rsp.send_headers(cfg.doh_status, {}, true);
      return;
    }
    if (req.method != "POST" || req.path != "/dns-query") {
      rsp.send_headers(404, {}, true);
      return;
    }
    wire::DnsMessage q;
    try {
      q = wire::decode_message(req.body);
    } catch (const wire::DecodeError&) {
      rsp.send_headers(400, {}, true);
      return;
    }
    record(q);
    {
      std::lock_guard<std::mutex> g(mu);
      doh_ids.push_back(q.header.id);
    }
    if (swallowed(q) ||
        (q.questions.size() > 1 && cfg.behavior == MultiBehavior::DropMulti)) {
      // DNS-level silence: hold the stream open until shutdown so the
      // client's own deadline has to fire.
      std::unique_lock<std::mutex> lk(mu);
      stop_cv.wait(lk, [&] { return stopping.load(); });
      return;
    }
    bool segmented = will_stream(q);
    bool sent_headers = false;
    try {
      respond(q, [&](const std::vector<uint8_t>& m, bool final) {
        if (!sent_headers) {
          rsp.send_headers(200, {{"content-type", "application/dns-message"}}, false);
          sent_headers = true;
        }
        if (segmented) {
          std::vector<uint8_t> framed{static_cast<uint8_t>(m.size() >> 8),
                                      static_cast<uint8_t>(m.size() & 0xff)};
          framed.insert(framed.end(), m.begin(), m.end());
          rsp.send_data(framed.data(), framed.size(), final);
        } else {
          rsp.send_data(m.data(), m.size(), final);
        }
      });
    } catch (const net::NetError&) {
    }
  }

  void start() {
    doh = std::make_unique<net::Http2Server>(
        net::Addr{"127.0.0.1", cfg.doh_bind},
        [this](const net::Http2Server::Request& rq, net::Http2Server::Responder& rs) {
          doh_handle(rq, rs);
        });
    udp_thread = std::thread([this] { udp_loop(); });
    dot_thread = std::thread([this] { dot_loop(); });
  }

  void stop() {
    bool expected = false;
    if (!stopping.compare_exchange_strong(expected, true)) return;
    stop_cv.notify_all();
    if (udp_thread.joinable()) udp_thread.join();
    if (dot_thread.joinable()) dot_thread.join();
    std::vector<std::thread> mine;
    {
      std::lock_guard<std::mutex> g(mu);
      mine.swap(workers);
    }
    for (auto& t : mine) t.join();
    if (doh) doh->stop();
  }
};

LabRecursor::LabRecursor(const LabConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {
  impl_->start();
}

LabRecursor::~LabRecursor() {
  if (impl_) impl_->stop();
}

uint16_t LabRecursor::udp_port() const { return impl_->udp.local_port(); }
uint16_t LabRecursor::dot_port() const { return impl_->dot.local_port(); }
uint16_t LabRecursor::doh_port() const { return impl_->doh->port(); }

std::string LabRecursor::doh_url() const {
  return "https://127.0.0.1:" + std::to_string(doh_port()) + "/dns-query";
}

int LabRecursor::hits() const {
  std::lock_guard<std::mutex> g(impl_->mu);
  return impl_->hits_total;
}

int LabRecursor::hits_for(const std::string& name) const {
  std::lock_guard<std::mutex> g(impl_->mu);
  auto it = impl_->hits_by_name.find(name);
  return it == impl_->hits_by_name.end() ? 0 : it->second;
}

int LabRecursor::dot_accepts() const {
  std::lock_guard<std::mutex> g(impl_->mu);
  return impl_->dot_accepted;
}

int LabRecursor::doh_connections() const { return impl_->doh->connections(); }

std::vector<uint16_t> LabRecursor::doh_query_ids() const {
  std::lock_guard<std::mutex> g(impl_->mu);
  return impl_->doh_ids;
}

void LabRecursor::stop() { impl_->stop(); }

}  // namespace dnslab::labdns
