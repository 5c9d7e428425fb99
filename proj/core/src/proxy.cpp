#include "dnslab/proxy.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "dnslab/net/socket.hpp"

namespace dnslab::proxy {

CacheKey CacheKey::from(const wire::Question& q) {
  return {q.name.lowered_string(), q.qtype, q.qclass};
}

// ---------------------------------------------------------------- WireCache

struct WireCache::Entry {
  std::vector<uint8_t> wire;     // ID zeroed
  std::vector<size_t> ttl_offs;  // parsed once at insertion
  std::vector<uint32_t> ttls;    // values behind ttl_offs
  double inserted_at = 0;
  uint32_t min_ttl = 0;
};

struct WireCache::Impl {
  std::mutex mu;
  std::map<CacheKey, Entry> entries;
  uint32_t margin_s;
  uint32_t negative_ttl_s;
};

WireCache::WireCache(uint32_t safety_margin_s, uint32_t negative_ttl_s)
    : impl_(std::make_shared<Impl>()) {
  impl_->margin_s = safety_margin_s;
  impl_->negative_ttl_s = negative_ttl_s;
}

namespace {

uint32_t read_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

void write_be32(uint8_t* p, uint32_t v) {
  p[0] = uint8_t(v >> 24);
  p[1] = uint8_t(v >> 16);
  p[2] = uint8_t(v >> 8);
  p[3] = uint8_t(v);
}

}  // namespace

void WireCache::insert(const wire::Question& q, std::vector<uint8_t> response_wire,
                       double now_ms) {
  if (response_wire.size() < 12) return;
  wire::DnsMessage m;
  try {
    m = wire::decode_message(response_wire);
  } catch (const std::exception&) {
    return;
  }

  uint32_t min_ttl = 0;
  if (!m.answers.empty()) {
    min_ttl = m.answers[0].ttl;
    for (const auto& rr : m.answers) min_ttl = std::min(min_ttl, rr.ttl);
  } else {
    min_ttl = impl_->negative_ttl_s;
    for (const auto& rr : m.authorities) {
      if (rr.rtype != static_cast<uint16_t>(wire::RecordType::SOA)) continue;
      if (auto soa_min = wire::soa_minimum(rr.rdata)) min_ttl = *soa_min;
      break;
    }
  }
  if (min_ttl == 0) return;

  Entry e;
  e.ttl_offs = wire::ttl_offsets(response_wire);
  for (size_t off : e.ttl_offs) e.ttls.push_back(read_be32(response_wire.data() + off));
  wire::rewrite_transaction_id(response_wire, 0);
  e.wire = std::move(response_wire);
  e.inserted_at = now_ms;
  e.min_ttl = min_ttl;

  std::lock_guard<std::mutex> lk(impl_->mu);
  impl_->entries[CacheKey::from(q)] = std::move(e);
}

std::optional<std::vector<uint8_t>> WireCache::lookup(const wire::Question& q,
                                                      uint16_t client_id, double now_ms) {
  std::lock_guard<std::mutex> lk(impl_->mu);
  auto it = impl_->entries.find(CacheKey::from(q));
  if (it == impl_->entries.end()) return std::nullopt;
  const Entry& e = it->second;

  double age_s = (now_ms - e.inserted_at) / 1000.0;
  if (age_s < 0 || age_s + impl_->margin_s >= e.min_ttl) {
    impl_->entries.erase(it);
    return std::nullopt;
  }

  std::vector<uint8_t> out = e.wire;
  wire::rewrite_transaction_id(out, client_id);
  uint32_t dec = static_cast<uint32_t>(age_s) + impl_->margin_s;
  for (size_t i = 0; i < e.ttl_offs.size(); ++i) {
    uint32_t ttl = e.ttls[i];
    write_be32(out.data() + e.ttl_offs[i], ttl > dec ? ttl - dec : 0);
  }
  return out;
}

size_t WireCache::size() const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  return impl_->entries.size();
}

// ---------------------------------------------------------- CapabilityCache

struct CapabilityCache::Impl {
  mutable std::mutex mu;
  std::map<std::string, std::pair<ServerCapabilities, double>> entries;
  double ttl_ms;
};

CapabilityCache::CapabilityCache(double ttl_ms) : impl_(std::make_shared<Impl>()) {
  impl_->ttl_ms = ttl_ms;
}

std::optional<ServerCapabilities> CapabilityCache::get(const std::string& endpoint,
                                                       double now_ms) const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  auto it = impl_->entries.find(endpoint);
  if (it == impl_->entries.end()) return std::nullopt;
  if (now_ms - it->second.second >= impl_->ttl_ms) return std::nullopt;
  return it->second.first;
}

void CapabilityCache::put(const std::string& endpoint, ServerCapabilities caps,
                          double now_ms) {
  std::lock_guard<std::mutex> lk(impl_->mu);
  impl_->entries[endpoint] = {caps, now_ms};
}

// ------------------------------------------------------------------ probing

ServerCapabilities probe_capabilities(transports::Resolver& upstream,
                                      const wire::Question& q1, const wire::Question& q2,
                                      uint16_t option_code) {
  ServerCapabilities caps{PartialSupport::No, MultiBehavior::Ignores};

  wire::DnsMessage single;
  single.header.rd = true;
  single.questions = {q1};
  partial::attach(single, option_code, partial::Role::ClientOffer);
  transports::QueryOutcome oc;
  auto bytes = upstream.exchange(single, oc);
  if (!bytes.empty()) {
    try {
      auto m = wire::decode_message(bytes);
      if (partial::find_role(m, option_code) == partial::Role::ServerAck)
        caps.supports_partial = PartialSupport::Yes;
    } catch (const std::exception&) {
    }
  }

  wire::DnsMessage multi;
  multi.header.rd = true;
  multi.questions = {q1, q2};
  multi.edns.emplace();
  transports::QueryOutcome oc2;
  auto b2 = upstream.exchange(multi, oc2);
  if (!b2.empty()) {
    try {
      auto m = wire::decode_message(b2);
      caps.multi_question = m.questions.size() >= 2 ? MultiBehavior::Full
                                                    : MultiBehavior::AnswersFirstOnly;
    } catch (const std::exception&) {
    }
  }
  return caps;
}

// ------------------------------------------------------------ resolve_batch

namespace {

std::string describe(const transports::QueryOutcome& oc) {
  std::string s = transports::failure_to_string(oc.failure);
  if (!oc.detail.empty()) s += ": " + oc.detail;
  return s;
}

wire::DnsMessage single_query(const wire::Question& q) {
  wire::DnsMessage m;
  m.header.rd = true;
  m.questions = {q};
  m.edns.emplace();
  return m;
}

bool same_question(const wire::Question& a, const wire::Question& b) {
  return a.qtype == b.qtype && a.qclass == b.qclass && a.name.equals_ci(b.name);
}

}  // namespace

void resolve_batch(transports::Resolver& upstream,
                   const std::vector<wire::Question>& questions,
                   const ServerCapabilities& caps,
                   const std::function<void(const BatchItem&)>& on_item,
                   uint16_t option_code) {
  if (questions.empty() || questions.size() > 64)
    throw std::invalid_argument("resolve_batch: between 1 and 64 questions");

  std::mutex emit_mu;
  auto emit = [&](const BatchItem& it) {
    std::lock_guard<std::mutex> lk(emit_mu);
    on_item(it);
  };

  auto resolve_one = [&](const wire::Question& q) {
    transports::QueryOutcome oc;
    auto bytes = upstream.exchange(single_query(q), oc);
    BatchItem it;
    it.question = q;
    if (!bytes.empty()) {
      it.ok = true;
      it.wire = std::move(bytes);
    } else {
      it.error = describe(oc);
    }
    emit(it);
  };

  if (questions.size() == 1) {
    resolve_one(questions[0]);
    return;
  }

  if (caps.supports_partial == PartialSupport::Yes) {
    wire::DnsMessage q;
    q.header.rd = true;
    q.questions = questions;
    partial::attach(q, option_code, partial::Role::ClientOffer);

    std::vector<char> answered(questions.size(), 0);
    size_t left = questions.size();
    transports::QueryOutcome oc;
    upstream.exchange_stream(
        q,
        [&](const std::vector<uint8_t>& bytes) {
          wire::DnsMessage m;
          try {
            m = wire::decode_message(bytes);
          } catch (const std::exception&) {
            return false;
          }
          for (const auto& mq : m.questions) {
            for (size_t i = 0; i < questions.size(); ++i) {
              if (answered[i] || !same_question(questions[i], mq)) continue;
              answered[i] = 1;
              --left;
              BatchItem it;
              it.question = questions[i];
              it.ok = true;
              it.wire = bytes;
              emit(it);
              break;
            }
          }
          return left == 0 ||
                 partial::find_role(m, option_code) == partial::Role::Final;
        },
        oc);

    for (size_t i = 0; i < questions.size(); ++i) {
      if (answered[i]) continue;
      BatchItem it;
      it.question = questions[i];
      it.error = oc.result == transports::ResultKind::Answered
                     ? "stream ended without an answer"
                     : describe(oc);
      emit(it);
    }
    return;
  }

  std::vector<std::thread> fan;
  fan.reserve(questions.size());
  for (const auto& q : questions) fan.emplace_back([&, q] { resolve_one(q); });
  for (auto& t : fan) t.join();
}

// --------------------------------------------------------------- OptimProxy

namespace {

net::Addr parse_listen(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("listen: want host:port");
  int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::invalid_argument("listen: bad port");
  return {s.substr(0, colon), static_cast<uint16_t>(port)};
}

}  // namespace

struct OptimProxy::Impl {
  ProxyConfig cfg;
  net::UdpSocket sock;
  transports::Resolver up;
  std::optional<WireCache> cache;
  CapabilityCache caps_cache;
  std::mutex probe_mu;

  struct Flight {
    std::mutex m;
    std::condition_variable cv;
    bool done = false;
    std::optional<std::vector<uint8_t>> zeroed;  // upstream response, ID zeroed
  };
  std::mutex fl_mu;
  std::map<CacheKey, std::shared_ptr<Flight>> inflight;

  std::atomic<bool> stopping{false};
  std::atomic<int> hits{0}, misses{0}, upstream_q{0};
  std::thread loop;
  std::mutex w_mu;
  std::vector<std::thread> workers;

  explicit Impl(ProxyConfig c)
      : cfg(std::move(c)), sock(parse_listen(cfg.listen)), up(cfg.upstream) {
    if (cfg.cache) cache.emplace(cfg.cache_margin_s, cfg.negative_ttl_s);
    loop = std::thread([this] { run(); });
  }

  void run() {
    while (!stopping.load()) {
      net::Addr from;
      auto dg = sock.recv_from(&from, net::now_ms() + 100);
      if (!dg || stopping.load()) continue;
      wire::DnsMessage q;
      try {
        q = wire::decode_message(*dg);
      } catch (const std::exception&) {
        continue;
      }
      if (q.header.qr) continue;
      std::lock_guard<std::mutex> lk(w_mu);
      if (stopping.load()) break;
      workers.emplace_back([this, q = std::move(q), from] { handle(q, from); });
    }
  }

  void reply(const net::Addr& to, const std::vector<uint8_t>& bytes) {
    try {
      sock.send_to(to, bytes.data(), bytes.size());
    } catch (const std::exception&) {
    }
  }

  void reply(const net::Addr& to, const wire::DnsMessage& m) {
    reply(to, wire::encode_message(m));
  }

  wire::DnsMessage error_reply(const wire::DnsMessage& q, uint16_t rcode) {
    wire::DnsMessage m;
    m.header.id = q.header.id;
    m.header.qr = true;
    m.header.rd = q.header.rd;
    m.header.ra = true;
    m.header.rcode = rcode;
    m.questions = q.questions;
    if (q.edns) m.edns.emplace();
    return m;
  }

  // The upstream query the proxy builds never carries the client's ID: the
  // resolver stamps its own. ECS is dropped here when configured.
  std::optional<wire::Edns> upstream_edns(const wire::DnsMessage& client) {
    if (!client.edns) return std::nullopt;
    wire::Edns e = *client.edns;
    if (cfg.strip_ecs)
      std::erase_if(e.options,
                    [](const wire::EdnsOption& o) { return o.code == wire::kEdnsOptionEcs; });
    return e;
  }

  std::optional<std::vector<uint8_t>> fetch(const wire::DnsMessage& client) {
    wire::DnsMessage q;
    q.header.rd = client.header.rd;
    q.questions = client.questions;
    q.edns = upstream_edns(client);
    upstream_q.fetch_add(1);
    transports::QueryOutcome oc;
    auto bytes = up.exchange(q, oc);
    if (bytes.empty()) return std::nullopt;
    wire::rewrite_transaction_id(bytes, 0);
    if (cache) cache->insert(client.questions[0], bytes, net::now_ms());
    return bytes;
  }

  void handle(const wire::DnsMessage& q, const net::Addr& from) {
    if (q.questions.empty() || q.questions.size() > 64) {
      reply(from, error_reply(q, q.questions.empty() ? 1 : 2));
      return;
    }
    if (q.questions.size() == 1)
      serve_single(q, from);
    else
      serve_multi(q, from);
  }

  void serve_single(const wire::DnsMessage& q, const net::Addr& from) {
    const auto& cq = q.questions[0];
    if (cache) {
      if (auto hit = cache->lookup(cq, q.header.id, net::now_ms())) {
        hits.fetch_add(1);
        reply(from, *hit);
        return;
      }
      // Single-flight: one upstream query no matter how many clients miss.
      auto key = CacheKey::from(cq);
      std::shared_ptr<Flight> fl;
      bool leader = false;
      {
        std::lock_guard<std::mutex> lk(fl_mu);
        auto& slot = inflight[key];
        if (!slot) {
          slot = std::make_shared<Flight>();
          leader = true;
        }
        fl = slot;
      }
      if (!leader) {
        std::unique_lock<std::mutex> lk(fl->m);
        fl->cv.wait(lk, [&] { return fl->done; });
        auto zeroed = fl->zeroed;
        lk.unlock();
        finish_single(q, from, zeroed);
        return;
      }
      misses.fetch_add(1);
      auto zeroed = fetch(q);
      {
        std::lock_guard<std::mutex> lk(fl->m);
        fl->zeroed = zeroed;
        fl->done = true;
      }
      fl->cv.notify_all();
      {
        std::lock_guard<std::mutex> lk(fl_mu);
        inflight.erase(key);
      }
      finish_single(q, from, zeroed);
      return;
    }
    finish_single(q, from, fetch(q));
  }

  void finish_single(const wire::DnsMessage& q, const net::Addr& from,
                     const std::optional<std::vector<uint8_t>>& zeroed) {
    if (!zeroed) {
      reply(from, error_reply(q, 2));
      return;
    }
    auto out = *zeroed;
    wire::rewrite_transaction_id(out, q.header.id);
    reply(from, out);
  }

  void serve_multi(const wire::DnsMessage& q, const net::Addr& from) {
    std::vector<std::optional<wire::DnsMessage>> resolved(q.questions.size());
    std::vector<wire::Question> need;
    std::vector<size_t> need_idx;
    for (size_t i = 0; i < q.questions.size(); ++i) {
      if (cache) {
        if (auto hit = cache->lookup(q.questions[i], 0, net::now_ms())) {
          hits.fetch_add(1);
          resolved[i] = wire::decode_message(*hit);
          continue;
        }
        misses.fetch_add(1);
      }
      need.push_back(q.questions[i]);
      need_idx.push_back(i);
    }

    if (!need.empty()) {
      ServerCapabilities caps{PartialSupport::No, MultiBehavior::Ignores};
      if (cfg.partial && need.size() > 1) caps = capabilities(need[0], need[1]);
      upstream_q.fetch_add(caps.supports_partial == PartialSupport::Yes
                               ? 1
                               : static_cast<int>(need.size()));
      resolve_batch(
          up, need, caps,
          [&](const BatchItem& it) {
            if (!it.ok) return;
            wire::DnsMessage m;
            try {
              m = wire::decode_message(it.wire);
            } catch (const std::exception&) {
              return;
            }
            for (size_t k = 0; k < need.size(); ++k) {
              size_t i = need_idx[k];
              if (resolved[i] || !same_question(q.questions[i], it.question)) continue;
              if (cache) {
                auto stored = it.wire;
                wire::rewrite_transaction_id(stored, 0);
                cache->insert(q.questions[i], std::move(stored), net::now_ms());
              }
              resolved[i] = std::move(m);
              break;
            }
          },
          cfg.partial_option_code);
    }

    wire::DnsMessage resp;
    resp.header.id = q.header.id;
    resp.header.qr = true;
    resp.header.rd = q.header.rd;
    resp.header.ra = true;
    resp.questions = q.questions;
    if (q.edns) resp.edns.emplace();
    size_t got = 0, nx = 0;
    for (const auto& r : resolved) {
      if (!r) continue;
      ++got;
      if (r->header.rcode == 3) ++nx;
      for (const auto& rr : r->answers) resp.answers.push_back(rr);
    }
    if (got == 0)
      resp.header.rcode = 2;
    else if (nx == resolved.size())
      resp.header.rcode = 3;
    reply(from, resp);
  }

  ServerCapabilities capabilities(const wire::Question& q1, const wire::Question& q2) {
    double now = net::now_ms();
    if (auto c = caps_cache.get(cfg.upstream.server, now)) return *c;
    std::lock_guard<std::mutex> lk(probe_mu);
    if (auto c = caps_cache.get(cfg.upstream.server, net::now_ms())) return *c;
    auto caps = probe_capabilities(up, q1, q2, cfg.partial_option_code);
    upstream_q.fetch_add(2);
    caps_cache.put(cfg.upstream.server, caps, net::now_ms());
    return caps;
  }

  void stop() {
    bool expected = false;
    if (!stopping.compare_exchange_strong(expected, true)) return;
    if (loop.joinable()) loop.join();
    std::vector<std::thread> ws;
    {
      std::lock_guard<std::mutex> lk(w_mu);
      ws.swap(workers);
    }
    for (auto& t : ws) t.join();
  }
};

OptimProxy::OptimProxy(ProxyConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

OptimProxy::~OptimProxy() {
  if (impl_) impl_->stop();
}

uint16_t OptimProxy::port() const { return impl_->sock.local_port(); }

void OptimProxy::stop() { impl_->stop(); }

int OptimProxy::cache_hits() const { return impl_->hits.load(); }
int OptimProxy::cache_misses() const { return impl_->misses.load(); }
int OptimProxy::upstream_queries() const { return impl_->upstream_q.load(); }

}  // namespace dnslab::proxy
