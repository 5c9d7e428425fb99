#include "dnslab/transports.hpp"

#include <arpa/inet.h>
#include <netdb.h>

#include <atomic>
#include <cstring>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "dnslab/net/http2.hpp"
#include "dnslab/net/socket.hpp"
#include "dnslab/net/tls.hpp"

namespace dnslab::transports {

namespace {

struct HttpStatusError : net::NetError {
  int status;
  explicit HttpStatusError(int s)
      : net::NetError("HTTP " + std::to_string(s)), status(s) {}
};

bool numeric_host(const std::string& h) {
  in_addr a4{};
  in6_addr a6{};
  return inet_pton(AF_INET, h.c_str(), &a4) == 1 || inet_pton(AF_INET6, h.c_str(), &a6) == 1;
}

// "host", "host:port", "[v6]:port" -> Addr, resolving names via getaddrinfo.
net::Addr resolve_endpoint(const std::string& server, uint16_t def_port) {
  std::string host = server;
  uint16_t port = def_port;
  if (!server.empty() && server[0] == '[') {
    auto close = server.find(']');
    if (close == std::string::npos) throw net::NetError("bad address: " + server);
    host = server.substr(1, close - 1);
    if (close + 1 < server.size()) {
      if (server[close + 1] != ':') throw net::NetError("bad address: " + server);
      port = static_cast<uint16_t>(std::stoul(server.substr(close + 2)));
    }
  } else {
    auto colon = server.rfind(':');
    if (colon != std::string::npos && server.find(':') == colon) {
      host = server.substr(0, colon);
      unsigned long p = std::stoul(server.substr(colon + 1));
      if (p == 0 || p > 65535) throw net::NetError("bad port in " + server);
      port = static_cast<uint16_t>(p);
    }
  }
  if (numeric_host(host)) return net::Addr{host, port};

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0) throw net::NetError("resolve " + host + ": " + gai_strerror(rc));
  std::string ip;
  for (addrinfo* p = res; p; p = p->ai_next) {
    char buf[INET6_ADDRSTRLEN];
    if (p->ai_family == AF_INET) {
      auto* sa = reinterpret_cast<sockaddr_in*>(p->ai_addr);
      if (inet_ntop(AF_INET, &sa->sin_addr, buf, sizeof buf)) {
        ip = buf;
        break;  // prefer v4
      }
    } else if (p->ai_family == AF_INET6 && ip.empty()) {
      auto* sa = reinterpret_cast<sockaddr_in6*>(p->ai_addr);
      if (inet_ntop(AF_INET6, &sa->sin6_addr, buf, sizeof buf)) ip = buf;
    }
  }
  freeaddrinfo(res);
  if (ip.empty()) throw net::NetError("no addresses for " + host);
  return net::Addr{ip, port};
}

struct DohEndpoint {
  std::string host;  // name or IP literal, used for SNI/verification
  uint16_t port = 443;
  std::string path = "/dns-query";
  std::string authority;
};

DohEndpoint parse_doh_uri(const std::string& uri) {
  if (uri.rfind("https://", 0) != 0)
    throw std::invalid_argument("DoH server must be an https:// URI: " + uri);
  std::string rest = uri.substr(8);
  auto slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (hostport.empty()) throw std::invalid_argument("DoH URI has no host: " + uri);

  DohEndpoint ep;
  if (slash != std::string::npos && slash + 1 < rest.size()) ep.path = rest.substr(slash);
  ep.authority = hostport;
  if (hostport[0] == '[') {
    auto close = hostport.find(']');
    if (close == std::string::npos) throw std::invalid_argument("bad DoH host: " + uri);
    ep.host = hostport.substr(1, close - 1);
    if (close + 2 < hostport.size() && hostport[close + 1] == ':')
      ep.port = static_cast<uint16_t>(std::stoul(hostport.substr(close + 2)));
  } else {
    auto colon = hostport.rfind(':');
    if (colon != std::string::npos) {
      ep.host = hostport.substr(0, colon);
      unsigned long p = std::stoul(hostport.substr(colon + 1));
      if (p == 0 || p > 65535) throw std::invalid_argument("bad DoH port: " + uri);
      ep.port = static_cast<uint16_t>(p);
    } else {
      ep.host = hostport;
    }
  }
  return ep;
}

// A response counts only if its ID matches what we sent and every question it
// echoes is one of ours.
bool response_matches(const wire::DnsMessage& query, uint16_t sent_id,
                      const wire::DnsMessage& m) {
  if (m.header.id != sent_id || !m.header.qr) return false;
  if (m.questions.empty()) return false;
  for (const auto& q : m.questions) {
    bool found = false;
    for (const auto& mine : query.questions)
      if (q.qtype == mine.qtype && q.qclass == mine.qclass && q.name.equals_ci(mine.name)) {
        found = true;
        break;
      }
    if (!found) return false;
  }
  return true;
}

}  // namespace

std::string protocol_to_string(Protocol p) {
  switch (p) {
    case Protocol::Do53: return "do53";
    case Protocol::DoT: return "dot";
    case Protocol::DoH: return "doh";
  }
  return "?";
}

std::string result_to_string(ResultKind r) {
  switch (r) {
    case ResultKind::Answered: return "answered";
    case ResultKind::Timeout: return "timeout";
    case ResultKind::DnsError: return "dns_error";
    case ResultKind::TransportError: return "transport_error";
  }
  return "?";
}

std::string failure_to_string(FailureKind f) {
  switch (f) {
    case FailureKind::Socket: return "socket";
    case FailureKind::Tls: return "tls";
    case FailureKind::Reset: return "reset";
    case FailureKind::HttpStatus: return "http_status";
    case FailureKind::Protocol: return "protocol";
  }
  return "?";
}

// Delivered messages are matched already; returning true ends the exchange.
using Deliver = std::function<bool(std::vector<uint8_t>&&)>;

struct Resolver::Impl {
  TransportConfig cfg;
  std::mutex mu;
  std::mutex connect_mu;  // serializes DoH connection establishment
  std::mt19937 rng{std::random_device{}()};
  std::atomic<int> conns_opened{0};

  // Do53/DoT endpoint, resolved once.
  net::Addr addr;

  struct Pooled {
    net::TlsStream tls;
    double last_used = 0;
  };
  std::vector<Pooled> pool;
  std::optional<net::TlsContext> tls_ctx;

  DohEndpoint doh_ep;
  std::shared_ptr<net::Http2Client> doh;

  explicit Impl(TransportConfig c) : cfg(std::move(c)) {
    if (cfg.protocol == Protocol::DoH) {
      doh_ep = parse_doh_uri(cfg.server);
    } else {
      addr = resolve_endpoint(cfg.server, cfg.protocol == Protocol::DoT ? 853 : 53);
    }
    if (cfg.protocol == Protocol::DoT) tls_ctx = net::TlsContext::client(cfg.tls_verify);
  }

  uint16_t wire_id() {
    if (cfg.fixed_transaction_id) return *cfg.fixed_transaction_id;
    if (cfg.protocol == Protocol::DoH) return 0;
    std::lock_guard<std::mutex> g(mu);
    return static_cast<uint16_t>(rng());
  }

  net::TlsStream take_pooled() {
    std::lock_guard<std::mutex> g(mu);
    double now = net::now_ms();
    net::TlsStream out;
    while (!pool.empty()) {
      Pooled p = std::move(pool.back());
      pool.pop_back();
      if (now - p.last_used <= cfg.idle_timeout_ms) {
        out = std::move(p.tls);
        break;
      }
      // idle too long: fell out of the pool, closes here
    }
    return out;
  }

  void return_pooled(net::TlsStream s) {
    std::lock_guard<std::mutex> g(mu);
    pool.push_back({std::move(s), net::now_ms()});
  }

  bool udp_exchange(const wire::DnsMessage& query, uint16_t qid,
                    const std::vector<uint8_t>& qbytes, QueryOutcome& out,
                    const Deliver& deliver) {
    net::UdpSocket sock;
    const int attempts = std::max(1, cfg.udp_attempts);
    double t_first = net::now_ms();
    double overall = t_first + attempts * cfg.udp_timeout_ms;
    int sent = 0;
    double window = 0;
    bool got_any = false;
    while (true) {
      if (sent == 0 || (!got_any && sent < attempts && net::now_ms() >= window)) {
        sock.send_to(addr, qbytes.data(), qbytes.size());
        sent++;
        out.wire_size_up += qbytes.size();
        window = net::now_ms() + cfg.udp_timeout_ms;
      }
      double deadline = got_any ? overall : std::min(window, overall);
      auto dg = sock.recv_from(nullptr, deadline);
      if (!dg) {
        if (got_any) throw net::TimeoutError("response stream stalled");
        if (sent >= attempts)
          throw net::TimeoutError("no response after " + std::to_string(sent) + " attempts");
        continue;
      }
      wire::DnsMessage m;
      try {
        m = wire::decode_message(*dg);
      } catch (const wire::DecodeError&) {
        continue;
      }
      if (!response_matches(query, qid, m)) continue;
      got_any = true;
      out.wire_size_down += dg->size();
      bool done = deliver(std::move(*dg));
      if (done) {
        out.response_time = net::now_ms() - t_first;
        return true;
      }
    }
  }

  bool dot_exchange(const wire::DnsMessage& query, uint16_t qid,
                    const std::vector<uint8_t>& qbytes, QueryOutcome& out,
                    const Deliver& deliver) {
    std::vector<uint8_t> framed{static_cast<uint8_t>(qbytes.size() >> 8),
                                static_cast<uint8_t>(qbytes.size() & 0xff)};
    framed.insert(framed.end(), qbytes.begin(), qbytes.end());

    for (int attempt = 0; attempt < 2; attempt++) {
      net::TlsStream conn = take_pooled();
      if (!conn.valid()) {
        double c0 = net::now_ms();
        auto tcp = net::TcpStream::connect(addr, c0 + cfg.udp_timeout_ms);
        conn = net::TlsStream::connect(*tls_ctx, std::move(tcp), addr.host,
                                       c0 + cfg.udp_timeout_ms);
        out.connection_setup = net::now_ms() - c0;
        conns_opened.fetch_add(1);
      }
      bool consumed = false;
      try {
        double sent_at = net::now_ms();
        double deadline = sent_at + cfg.udp_timeout_ms;
        conn.write_all(framed.data(), framed.size(), deadline);
        out.wire_size_up += qbytes.size();
        while (true) {
          uint8_t pre[2];
          conn.read_exact(pre, 2, deadline);
          std::vector<uint8_t> bytes(static_cast<size_t>(pre[0]) << 8 | pre[1]);
          conn.read_exact(bytes.data(), bytes.size(), deadline);
          wire::DnsMessage m;
          try {
            m = wire::decode_message(bytes);
          } catch (const wire::DecodeError&) {
            continue;  // not ours; keep reading until the deadline
          }
          if (!response_matches(query, qid, m)) continue;
          consumed = true;
          out.wire_size_down += bytes.size();
          if (deliver(std::move(bytes))) {
            out.response_time = net::now_ms() - sent_at;
            return_pooled(std::move(conn));
            return true;
          }
        }
      } catch (const net::ConnClosed&) {
        // one transparent retry on a fresh connection, but only if this one
        // died before yielding anything
        if (consumed || attempt == 1) throw;
      }
    }
    throw net::ConnClosed("connection closed on retry");
  }

  std::shared_ptr<net::Http2Client> ensure_doh(QueryOutcome& out) {
    std::lock_guard<std::mutex> serial(connect_mu);
    {
      std::lock_guard<std::mutex> g(mu);
      if (doh && doh->alive()) return doh;
    }
    double c0 = net::now_ms();
    net::Addr a = resolve_endpoint(doh_ep.host + ":" + std::to_string(doh_ep.port), 443);
    auto client = net::Http2Client::connect(a, doh_ep.host, cfg.tls_verify,
                                            c0 + cfg.udp_timeout_ms);
    auto sp = std::make_shared<net::Http2Client>(std::move(client));
    {
      std::lock_guard<std::mutex> g(mu);
      doh = sp;
    }
    out.connection_setup = net::now_ms() - c0;
    conns_opened.fetch_add(1);
    return sp;
  }

  bool doh_exchange(const std::vector<uint8_t>& qbytes, QueryOutcome& out,
                    const Deliver& deliver, bool segmented) {
    for (int attempt = 0; attempt < 2; attempt++) {
      auto conn = ensure_doh(out);
      std::vector<net::hpack::Header> headers{
          {":method", "POST"},
          {":scheme", "https"},
          {":authority", doh_ep.authority},
          {":path", doh_ep.path},
          {"content-type", "application/dns-message"},
          {"accept", "application/dns-message"},
          {"content-length", std::to_string(qbytes.size())},
      };
      try {
        double sent_at = net::now_ms();
        double deadline = sent_at + cfg.udp_timeout_ms;
        out.wire_size_up += qbytes.size();
        if (!segmented) {
          auto resp = conn->request(headers, qbytes, deadline);
          if (resp.status != 200) throw HttpStatusError(resp.status);
          out.wire_size_down += resp.body.size();
          out.response_time = net::now_ms() - sent_at;
          deliver(std::move(resp.body));
          return true;
        }
        std::vector<uint8_t> acc;
        bool done = false;
        auto resp = conn->request(headers, qbytes, deadline,
                                  [&](const uint8_t* d, size_t n) {
                                    if (done) return;
                                    acc.insert(acc.end(), d, d + n);
                                    while (acc.size() >= 2) {
                                      size_t len = static_cast<size_t>(acc[0]) << 8 | acc[1];
                                      if (acc.size() < 2 + len) break;
                                      std::vector<uint8_t> one(acc.begin() + 2,
                                                               acc.begin() + 2 + len);
                                      acc.erase(acc.begin(), acc.begin() + 2 + len);
                                      out.wire_size_down += one.size();
                                      if (deliver(std::move(one))) done = true;
                                    }
                                  });
        if (resp.status != 200) throw HttpStatusError(resp.status);
        out.response_time = net::now_ms() - sent_at;
        if (!done) throw net::H2Error("response stream ended before the final answer");
        return true;
      } catch (const net::ConnClosed&) {
        {
          std::lock_guard<std::mutex> g(mu);
          if (doh == conn) doh.reset();  // first failure retires the connection
        }
        if (attempt == 1) throw;
      }
    }
    throw net::ConnClosed("connection closed on retry");
  }

  bool run(const wire::DnsMessage& query, uint16_t qid, const std::vector<uint8_t>& qbytes,
           QueryOutcome& out, const Deliver& deliver, bool segmented) {
    switch (cfg.protocol) {
      case Protocol::Do53: return udp_exchange(query, qid, qbytes, out, deliver);
      case Protocol::DoT: return dot_exchange(query, qid, qbytes, out, deliver);
      case Protocol::DoH: return doh_exchange(qbytes, out, deliver, segmented);
    }
    return false;
  }
};

namespace {

template <typename Fn>
void run_classified(QueryOutcome& out, Fn&& fn) {
  try {
    fn();
  } catch (const HttpStatusError& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::HttpStatus;
    out.detail = e.what();
  } catch (const net::TimeoutError& e) {
    out.result = ResultKind::Timeout;
    out.detail = e.what();
  } catch (const net::TlsError& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Tls;
    out.detail = e.what();
  } catch (const net::ConnClosed& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Reset;
    out.detail = e.what();
  } catch (const net::H2Error& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Protocol;
    out.detail = e.what();
  } catch (const net::NetError& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Socket;
    out.detail = e.what();
  } catch (const wire::DecodeError& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Protocol;
    out.detail = e.what();
  } catch (const std::exception& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Socket;
    out.detail = e.what();
  }
}

}  // namespace

Resolver::Resolver(TransportConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
Resolver::~Resolver() = default;

const TransportConfig& Resolver::config() const { return impl_->cfg; }
int Resolver::connections_opened() const { return impl_->conns_opened.load(); }

QueryOutcome Resolver::resolve(const std::string& domain, uint16_t qtype) {
  QueryOutcome out;
  out.domain = domain;
  out.protocol = impl_->cfg.protocol;
  out.provider = impl_->cfg.provider;
  out.t_start = net::now_ms();
  wire::DnsMessage query;
  try {
    query = wire::make_query(wire::DnsName::from_string(domain), qtype, 0);
  } catch (const std::exception& e) {
    out.result = ResultKind::TransportError;
    out.failure = FailureKind::Protocol;
    out.detail = e.what();
    return out;
  }
  exchange(query, out);
  out.domain = domain;
  return out;
}

std::vector<uint8_t> Resolver::exchange(const wire::DnsMessage& query, QueryOutcome& outcome) {
  QueryOutcome out;
  out.domain = query.questions.empty() ? "" : query.questions[0].name.to_string();
  out.protocol = impl_->cfg.protocol;
  out.provider = impl_->cfg.provider;
  out.t_start = net::now_ms();

  std::vector<uint8_t> resp;
  run_classified(out, [&] {
    uint16_t qid = impl_->wire_id();
    wire::DnsMessage msg = query;
    msg.header.id = qid;
    auto qbytes = wire::encode_message(msg);
    impl_->run(msg, qid, qbytes, out,
               [&](std::vector<uint8_t>&& b) {
                 resp = std::move(b);
                 return true;
               },
               /*segmented=*/false);
    auto decoded = wire::decode_message(resp);
    if (decoded.header.rcode != 0) {
      out.result = ResultKind::DnsError;
      out.rcode = decoded.header.rcode;
    } else {
      out.result = ResultKind::Answered;
    }
  });
  if (out.result == ResultKind::Timeout || out.result == ResultKind::TransportError)
    resp.clear();
  outcome = out;
  return resp;
}

bool Resolver::exchange_stream(const wire::DnsMessage& query,
                               const std::function<bool(const std::vector<uint8_t>&)>& on_message,
                               QueryOutcome& outcome) {
  QueryOutcome out;
  out.domain = query.questions.empty() ? "" : query.questions[0].name.to_string();
  out.protocol = impl_->cfg.protocol;
  out.provider = impl_->cfg.provider;
  out.t_start = net::now_ms();

  bool done = false;
  run_classified(out, [&] {
    uint16_t qid = impl_->wire_id();
    wire::DnsMessage msg = query;
    msg.header.id = qid;
    auto qbytes = wire::encode_message(msg);
    impl_->run(msg, qid, qbytes, out,
               [&](std::vector<uint8_t>&& b) {
                 done = on_message(b);
                 return done;
               },
               /*segmented=*/true);
    out.result = ResultKind::Answered;
  });
  outcome = out;
  return done;
}

std::vector<QueryOutcome> measure_domains(const std::vector<std::string>& domains,
                                          const std::vector<TransportConfig>& configs,
                                          int parallelism) {
  std::vector<std::string> uniq;
  std::set<std::string> seen;
  for (const auto& d : domains)
    if (seen.insert(d).second) uniq.push_back(d);

  std::vector<std::unique_ptr<Resolver>> resolvers;
  resolvers.reserve(configs.size());
  for (const auto& cfg : configs) resolvers.push_back(std::make_unique<Resolver>(cfg));

  const size_t total = uniq.size() * configs.size();
  std::vector<QueryOutcome> out(total);
  std::atomic<size_t> next{0};
  auto work = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= total) break;
      size_t ci = i / uniq.size();
      size_t di = i % uniq.size();
      try {
        out[i] = resolvers[ci]->resolve(uniq[di]);
      } catch (const std::exception& e) {
        out[i].domain = uniq[di];
        out[i].protocol = configs[ci].protocol;
        out[i].provider = configs[ci].provider;
        out[i].result = ResultKind::TransportError;
        out[i].detail = e.what();
      }
    }
  };
  int width = std::max(1, std::min<int>(parallelism, static_cast<int>(total)));
  std::vector<std::thread> threads;
  threads.reserve(width);
  for (int w = 0; w < width; w++) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace dnslab::transports
