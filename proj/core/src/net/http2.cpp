#include "dnslab/net/http2.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <list>
#include <map>
#include <mutex>
#include <thread>

#include "dnslab/net/tls.hpp"

namespace dnslab::net {

namespace {

constexpr uint8_t kData = 0, kHeaders = 1, kPriority = 2, kRstStream = 3,
                  kSettings = 4, kPushPromise = 5, kPing = 6, kGoaway = 7,
                  kWindowUpdate = 8, kContinuation = 9;
constexpr uint8_t kFlagEndStream = 0x1, kFlagAck = 0x1, kFlagEndHeaders = 0x4,
                  kFlagPadded = 0x8, kFlagPriority = 0x20;
constexpr uint32_t kErrCancel = 0x8;
constexpr size_t kMaxFrame = 1 << 20;  // sanity ceiling on inbound frames

const char kPreface[] = "PRI * HTTP/2.0\r\n\r\nSM\r\n\r\n";
constexpr size_t kPrefaceLen = 24;

// false once the deadline passes
bool cv_wait_deadline(std::condition_variable& cv, std::unique_lock<std::mutex>& lk,
                      double deadline_ms) {
  double remaining = deadline_ms - now_ms();
  if (remaining <= 0) return false;
  cv.wait_for(lk, std::chrono::duration<double, std::milli>(
                      std::min(remaining, 100.0)));
  return now_ms() < deadline_ms;
}

struct StreamState {
  std::vector<uint8_t> hdr_block;
  std::vector<hpack::Header> headers;
  bool headers_done = false;
  bool pending_end = false;  // END_STREAM seen, waiting for END_HEADERS
  std::vector<uint8_t> data;
  bool end = false;
  bool reset = false;
  uint32_t reset_code = 0;
  int64_t send_window = 65535;
  bool dispatched = false;
};

// One h2 connection: every SSL call and every piece of state lives behind mu;
// blocking waits (poll, cv) always happen with mu released.
struct H2Conn {
  enum Role { kClientRole, kServerRole };

  TlsStream tls;
  Role role;
  std::mutex mu;
  std::condition_variable cv;

  std::vector<uint8_t> inbox;
  std::vector<uint8_t> outbox;
  size_t out_off = 0;

  hpack::Encoder enc;
  hpack::Decoder dec;

  int64_t conn_send_window = 65535;
  int64_t peer_initial_window = 65535;
  uint32_t peer_max_frame = 16384;

  std::map<int32_t, StreamState> streams;
  int32_t next_id = 1;           // client-side allocation
  int32_t continuation_sid = 0;  // header block in progress
  int32_t last_peer_sid = 0;

  bool dead = false;
  bool going_away = false;
  bool stop = false;
  std::string death_reason;

  std::vector<int32_t> ready;  // server: fully received requests

  explicit H2Conn(Role r) : role(r) {}

  void die_locked(const std::string& why) {
    if (dead) return;
    dead = true;
    death_reason = why;
    for (auto& [sid, ss] : streams) {
      (void)sid;
      if (!ss.end && !ss.reset) {
        ss.reset = true;
        ss.reset_code = 0xff;  // local marker: connection gone
      }
    }
    cv.notify_all();
  }

  void append_frame(uint8_t type, uint8_t flags, int32_t sid, const uint8_t* p,
                    size_t n) {
    outbox.push_back(uint8_t(n >> 16));
    outbox.push_back(uint8_t(n >> 8));
    outbox.push_back(uint8_t(n));
    outbox.push_back(type);
    outbox.push_back(flags);
    outbox.push_back(uint8_t(uint32_t(sid) >> 24));
    outbox.push_back(uint8_t(uint32_t(sid) >> 16));
    outbox.push_back(uint8_t(uint32_t(sid) >> 8));
    outbox.push_back(uint8_t(sid));
    if (n) outbox.insert(outbox.end(), p, p + n);
  }

  // Drains the outbox; throws TimeoutError with the bytes left queued (the
  // reader keeps flushing opportunistically, so queued frames still go out).
  void flush(std::unique_lock<std::mutex>& lk, double deadline_ms) {
    while (out_off < outbox.size()) {
      if (dead) throw ConnClosed("h2: " + death_reason);
      auto r = tls.try_write(outbox.data() + out_off, outbox.size() - out_off);
      if (r.closed) {
        die_locked("connection closed during write");
        throw ConnClosed("h2: connection closed during write");
      }
      out_off += r.n;
      if (r.n == 0) {
        int fd = tls.fd();
        short need = r.need;
        lk.unlock();
        bool ready_fd = wait_fd(fd, need, std::min(deadline_ms, now_ms() + 50));
        lk.lock();
        if (!ready_fd && now_ms() >= deadline_ms)
          throw TimeoutError("h2: write stalled past deadline");
      }
    }
    outbox.clear();
    out_off = 0;
  }

  void flush_best_effort(std::unique_lock<std::mutex>& lk, double deadline_ms) {
    try {
      flush(lk, deadline_ms);
    } catch (const NetError&) {
    }
  }

  StreamState* find(int32_t sid) {
    auto it = streams.find(sid);
    return it == streams.end() ? nullptr : &it->second;
  }

  // --- inbound frame handling, mu held ---

  void handle_frame(uint8_t type, uint8_t flags, int32_t sid, const uint8_t* p,
                    size_t n) {
    if (continuation_sid != 0 && type != kContinuation) {
      die_locked("expected CONTINUATION");
      return;
    }
    switch (type) {
      case kData:
        handle_data(flags, sid, p, n);
        break;
      case kHeaders:
        handle_headers(flags, sid, p, n);
        break;
      case kContinuation:
        handle_continuation(flags, sid, p, n);
        break;
      case kRstStream: {
        if (n != 4 || sid == 0) {
          die_locked("malformed RST_STREAM");
          break;
        }
        if (auto* ss = find(sid)) {
          ss->reset = true;
          ss->reset_code = uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 |
                           uint32_t(p[2]) << 8 | p[3];
        }
        break;
      }
      case kSettings:
        handle_settings(flags, sid, p, n);
        break;
      case kPing:
        if (n != 8 || sid != 0) {
          die_locked("malformed PING");
          break;
        }
        if (!(flags & kFlagAck)) append_frame(kPing, kFlagAck, 0, p, 8);
        break;
      case kGoaway: {
        if (n < 8) {
          die_locked("malformed GOAWAY");
          break;
        }
        going_away = true;
        int32_t last = int32_t(uint32_t(p[0] & 0x7f) << 24 | uint32_t(p[1]) << 16 |
                               uint32_t(p[2]) << 8 | p[3]);
        for (auto& [id, ss] : streams) {
          bool ours = role == kClientRole ? (id % 2 == 1) : (id % 2 == 0);
          if (ours && id > last && !ss.end) {
            ss.reset = true;
            ss.reset_code = 0x7;  // REFUSED_STREAM
          }
        }
        break;
      }
      case kWindowUpdate: {
        if (n != 4) {
          die_locked("malformed WINDOW_UPDATE");
          break;
        }
        int64_t inc = int64_t(uint32_t(p[0] & 0x7f) << 24 | uint32_t(p[1]) << 16 |
                              uint32_t(p[2]) << 8 | p[3]);
        if (inc == 0) break;
        if (sid == 0)
          conn_send_window += inc;
        else if (auto* ss = find(sid))
          ss->send_window += inc;
        break;
      }
      case kPushPromise:
        die_locked("peer pushed with push disabled");
        break;
      case kPriority:
        break;  // ignored
      default:
        break;  // unknown extension frames must be ignored
    }
  }

  void handle_data(uint8_t flags, int32_t sid, const uint8_t* p, size_t n) {
    if (sid == 0) {
      die_locked("DATA on stream zero");
      return;
    }
    size_t full = n;  // padding counts toward flow control
    if (flags & kFlagPadded) {
      if (n < 1 || p[0] + 1u > n) {
        die_locked("bad DATA padding");
        return;
      }
      size_t pad = p[0];
      ++p;
      n -= 1 + pad;
    }
    auto* ss = find(sid);
    if (ss && !ss->reset) {
      ss->data.insert(ss->data.end(), p, p + n);
      if (flags & kFlagEndStream) ss->end = true;
      if (role == kServerRole && ss->end && ss->headers_done && !ss->dispatched) {
        ss->dispatched = true;
        ready.push_back(sid);
      }
    }
    // hand the credit straight back so the peer never starves
    if (full > 0) {
      uint8_t wu[4] = {uint8_t(full >> 24), uint8_t(full >> 16), uint8_t(full >> 8),
                       uint8_t(full)};
      append_frame(kWindowUpdate, 0, 0, wu, 4);
      if (ss && !ss->end && !ss->reset) append_frame(kWindowUpdate, 0, sid, wu, 4);
    }
  }

  void handle_headers(uint8_t flags, int32_t sid, const uint8_t* p, size_t n) {
    if (sid == 0) {
      die_locked("HEADERS on stream zero");
      return;
    }
    if (flags & kFlagPadded) {
      if (n < 1 || p[0] + 1u > n) {
        die_locked("bad HEADERS padding");
        return;
      }
      size_t pad = p[0];
      ++p;
      n -= 1 + pad;
    }
    if (flags & kFlagPriority) {
      if (n < 5) {
        die_locked("bad HEADERS priority block");
        return;
      }
      p += 5;
      n -= 5;
    }
    auto* ss = find(sid);
    if (!ss) {
      bool peer_owned = role == kServerRole ? (sid % 2 == 1) : (sid % 2 == 0);
      if (!peer_owned || sid <= last_peer_sid) {
        die_locked("HEADERS on an unexpected stream");
        return;
      }
      last_peer_sid = sid;
      ss = &streams[sid];
      ss->send_window = peer_initial_window;
    }
    ss->hdr_block.assign(p, p + n);
    if (flags & kFlagEndStream) ss->pending_end = true;
    if (flags & kFlagEndHeaders)
      finish_header_block(sid, ss);
    else
      continuation_sid = sid;
  }

  void handle_continuation(uint8_t flags, int32_t sid, const uint8_t* p, size_t n) {
    if (sid == 0 || sid != continuation_sid) {
      die_locked("stray CONTINUATION");
      return;
    }
    auto* ss = find(sid);
    if (!ss) {
      die_locked("CONTINUATION for unknown stream");
      return;
    }
    ss->hdr_block.insert(ss->hdr_block.end(), p, p + n);
    if (flags & kFlagEndHeaders) {
      continuation_sid = 0;
      finish_header_block(sid, ss);
    }
  }

  void finish_header_block(int32_t sid, StreamState* ss) {
    std::vector<hpack::Header> hs;
    try {
      hs = dec.decode(ss->hdr_block.data(), ss->hdr_block.size());
    } catch (const hpack::HpackError& e) {
      die_locked(std::string("header decode: ") + e.what());
      return;
    }
    ss->hdr_block.clear();
    ss->headers.insert(ss->headers.end(), hs.begin(), hs.end());
    ss->headers_done = true;
    if (ss->pending_end) {
      ss->end = true;
      ss->pending_end = false;
    }
    if (role == kServerRole && ss->end && !ss->dispatched) {
      ss->dispatched = true;
      ready.push_back(sid);
    }
  }

  void handle_settings(uint8_t flags, int32_t sid, const uint8_t* p, size_t n) {
    if (sid != 0 || (!(flags & kFlagAck) && n % 6 != 0)) {
      die_locked("malformed SETTINGS");
      return;
    }
    if (flags & kFlagAck) return;
    for (size_t i = 0; i + 6 <= n; i += 6) {
      uint16_t id = uint16_t(p[i]) << 8 | p[i + 1];
      uint32_t v = uint32_t(p[i + 2]) << 24 | uint32_t(p[i + 3]) << 16 |
                   uint32_t(p[i + 4]) << 8 | p[i + 5];
      switch (id) {
        case 1:  // HEADER_TABLE_SIZE: cap of the peer's decoder
          if (v < 4096) enc.resize_table(v);
          break;
        case 4: {  // INITIAL_WINDOW_SIZE
          if (v > 0x7fffffff) {
            die_locked("illegal initial window");
            return;
          }
          int64_t delta = int64_t(v) - peer_initial_window;
          peer_initial_window = int64_t(v);
          for (auto& [id2, ss] : streams) {
            (void)id2;
            ss.send_window += delta;
          }
          break;
        }
        case 5:  // MAX_FRAME_SIZE
          if (v >= 16384 && v <= 0xffffff) peer_max_frame = v;
          break;
        default:
          break;
      }
    }
    append_frame(kSettings, kFlagAck, 0, nullptr, 0);
  }

  // Parse complete frames out of the inbox; mu held.
  void parse_inbox() {
    size_t off = 0;
    while (inbox.size() - off >= 9) {
      const uint8_t* h = inbox.data() + off;
      size_t len = size_t(h[0]) << 16 | size_t(h[1]) << 8 | h[2];
      if (len > kMaxFrame) {
        die_locked("oversized frame");
        return;
      }
      if (inbox.size() - off < 9 + len) break;
      uint8_t type = h[3], flags = h[4];
      int32_t sid = int32_t(uint32_t(h[5] & 0x7f) << 24 | uint32_t(h[6]) << 16 |
                            uint32_t(h[7]) << 8 | h[8]);
      handle_frame(type, flags, sid, h + 9, len);
      off += 9 + len;
      if (dead) break;
    }
    if (off > 0) inbox.erase(inbox.begin(), inbox.begin() + long(off));
  }

  // Reader loop: runs until stop or the peer goes away. Server connections
  // call with on_batch to pick up completed requests.
  void reader_loop(const std::function<void(std::vector<int32_t>)>& on_batch) {
    std::vector<uint8_t> buf(32768);
    for (;;) {
      short need = POLLIN;
      bool out_pending = false;
      std::vector<int32_t> batch;
      {
        std::unique_lock<std::mutex> lk(mu);
        if (stop || dead) break;
        if (out_off < outbox.size()) flush_best_effort(lk, now_ms() + 5);
        if (stop || dead) break;
        auto r = tls.try_read(buf.data(), buf.size());
        if (r.n > 0) {
          inbox.insert(inbox.end(), buf.data(), buf.data() + r.n);
          parse_inbox();
          if (out_off < outbox.size()) flush_best_effort(lk, now_ms() + 5);
          batch.swap(ready);
          cv.notify_all();
        } else if (r.closed) {
          die_locked("connection closed by peer");
          break;
        } else {
          need = r.need;
        }
        out_pending = out_off < outbox.size();
      }
      if (!batch.empty() && on_batch) on_batch(std::move(batch));
      if (need == POLLIN && out_pending) need |= POLLOUT;
      wait_fd(tls.fd(), need, now_ms() + 50);
    }
    std::unique_lock<std::mutex> lk(mu);
    if (!dead) die_locked(stop ? "connection closed locally" : "reader stopped");
  }

  // Sends a body with flow control; mu held on entry and exit.
  void send_body(std::unique_lock<std::mutex>& lk, int32_t sid,
                 const uint8_t* body, size_t len, bool end_stream,
                 double deadline_ms) {
    size_t off = 0;
    for (;;) {
      if (dead || stop) throw ConnClosed("h2: " + death_reason);
      auto* ss = find(sid);
      if (!ss || ss->reset) throw NetError("h2: stream reset by peer");
      int64_t avail = std::min(conn_send_window, ss->send_window);
      if (avail <= 0) {
        if (!cv_wait_deadline(cv, lk, deadline_ms))
          throw TimeoutError("h2: flow control window starved");
        continue;
      }
      size_t n = std::min({len - off, size_t(avail), size_t(peer_max_frame)});
      bool last = off + n == len;
      append_frame(kData, last && end_stream ? kFlagEndStream : 0, sid, body + off, n);
      conn_send_window -= int64_t(n);
      ss->send_window -= int64_t(n);
      off += n;
      flush(lk, deadline_ms);
      if (last) break;
    }
  }
};

void settings_entry(std::vector<uint8_t>& out, uint16_t id, uint32_t v) {
  out.push_back(uint8_t(id >> 8));
  out.push_back(uint8_t(id));
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

}  // namespace

// ---------------------------------------------------------------- client --

struct Http2Client::Impl {
  H2Conn conn{H2Conn::kClientRole};
  std::thread reader;

  ~Impl() { shutdown(); }

  void shutdown() {
    {
      std::unique_lock<std::mutex> lk(conn.mu);
      if (!conn.dead && conn.tls.valid()) {
        uint8_t ga[8] = {0, 0, 0, 0, 0, 0, 0, 0};  // NO_ERROR, last stream 0
        conn.append_frame(kGoaway, 0, 0, ga, 8);
        conn.flush_best_effort(lk, now_ms() + 100);
      }
      conn.stop = true;
      conn.cv.notify_all();
    }
    if (reader.joinable()) reader.join();
  }
};

Http2Client::Http2Client() = default;
Http2Client::~Http2Client() = default;
Http2Client::Http2Client(Http2Client&&) noexcept = default;
Http2Client& Http2Client::operator=(Http2Client&&) noexcept = default;

Http2Client Http2Client::connect(const Addr& addr, const std::string& host,
                                 bool verify, double deadline_ms) {
  auto tcp = TcpStream::connect(addr, deadline_ms);
  auto ctx = TlsContext::client(verify, "h2");
  auto tls = TlsStream::connect(ctx, std::move(tcp), host, deadline_ms);
  if (tls.selected_alpn() != "h2")
    throw H2Error("peer did not negotiate h2 (alpn: '" + tls.selected_alpn() + "')");

  Http2Client c;
  c.impl_ = std::make_unique<Impl>();
  auto& conn = c.impl_->conn;
  conn.tls = std::move(tls);

  conn.tls.write_all(reinterpret_cast<const uint8_t*>(kPreface), kPrefaceLen,
                     deadline_ms);
  std::vector<uint8_t> settings;
  settings_entry(settings, 2, 0);  // ENABLE_PUSH off
  {
    std::unique_lock<std::mutex> lk(conn.mu);
    conn.append_frame(kSettings, 0, 0, settings.data(), settings.size());
    conn.flush(lk, deadline_ms);
  }

  c.impl_->reader = std::thread([ic = c.impl_.get()] { ic->conn.reader_loop(nullptr); });
  return c;
}

bool Http2Client::alive() const {
  if (!impl_) return false;
  std::unique_lock<std::mutex> lk(impl_->conn.mu);
  return !impl_->conn.dead && !impl_->conn.going_away;
}

void Http2Client::close() {
  if (impl_) impl_->shutdown();
}

Http2Client::Response Http2Client::request(const std::vector<hpack::Header>& headers,
                                           const std::vector<uint8_t>& body,
                                           double deadline_ms, const DataFn& on_data) {
  if (!impl_) throw ConnClosed("h2: not connected");
  auto& conn = impl_->conn;
  std::unique_lock<std::mutex> lk(conn.mu);
  if (conn.dead) throw ConnClosed("h2: " + conn.death_reason);
  if (conn.going_away) throw ConnClosed("h2: connection is going away");

  int32_t sid = conn.next_id;
  conn.next_id += 2;
  auto& ss = conn.streams[sid];
  ss.send_window = conn.peer_initial_window;

  auto cleanup = [&](bool send_rst) {
    if (send_rst && !conn.dead) {
      uint8_t rst[4] = {0, 0, 0, uint8_t(kErrCancel)};
      conn.append_frame(kRstStream, 0, sid, rst, 4);
      conn.flush_best_effort(lk, now_ms() + 100);
    }
    conn.streams.erase(sid);
  };

  try {
    auto block = conn.enc.encode(headers);
    if (block.size() > conn.peer_max_frame)
      throw H2Error("h2: header block exceeds peer frame limit");
    uint8_t flags = kFlagEndHeaders | (body.empty() ? kFlagEndStream : 0);
    conn.append_frame(kHeaders, flags, sid, block.data(), block.size());
    conn.flush(lk, deadline_ms);
    if (!body.empty())
      conn.send_body(lk, sid, body.data(), body.size(), true, deadline_ms);
  } catch (...) {
    cleanup(true);
    throw;
  }

  Response resp;
  for (;;) {
    auto* s = conn.find(sid);
    if (!s) {
      cleanup(false);
      throw NetError("h2: stream vanished");
    }
    if (!s->data.empty() && on_data) {
      std::vector<uint8_t> chunk;
      chunk.swap(s->data);
      lk.unlock();
      on_data(chunk.data(), chunk.size());
      lk.lock();
      continue;
    }
    if (s->reset) {
      bool conn_gone = conn.dead;
      std::string why = conn_gone ? conn.death_reason
                                  : "stream reset, code " + std::to_string(s->reset_code);
      cleanup(false);
      if (conn_gone) throw ConnClosed("h2: " + why);
      throw NetError("h2: " + why);
    }
    if (conn.dead) {
      std::string why = conn.death_reason;
      cleanup(false);
      throw ConnClosed("h2: " + why);
    }
    if (s->headers_done && !s->end) {
      // interim 1xx response: discard and keep waiting
      std::string status;
      for (const auto& h : s->headers)
        if (h.first == ":status") status = h.second;
      if (status.size() == 3 && status[0] == '1') {
        s->headers.clear();
        s->headers_done = false;
        continue;
      }
    }
    if (s->headers_done && s->end && (s->data.empty() || !on_data)) break;
    if (!cv_wait_deadline(conn.cv, lk, deadline_ms)) {
      cleanup(true);
      throw TimeoutError("h2: request deadline expired");
    }
  }

  auto* s = conn.find(sid);
  resp.headers = std::move(s->headers);
  if (!on_data) resp.body = std::move(s->data);
  cleanup(false);

  for (const auto& h : resp.headers) {
    if (h.first == ":status") {
      try {
        resp.status = std::stoi(h.second);
      } catch (...) {
        throw H2Error("h2: unparseable :status '" + h.second + "'");
      }
      break;
    }
  }
  if (resp.status == 0) throw H2Error("h2: response without :status");
  return resp;
}

// ---------------------------------------------------------------- server --

struct Http2Server::Responder::Hooks {
  H2Conn* conn;
};

struct ServerConn {
  H2Conn conn{H2Conn::kServerRole};
  Http2Server::Responder::Hooks hooks{&conn};
  std::thread th;
  std::vector<std::thread> handlers;
  std::mutex handlers_mu;
};

struct Http2Server::Impl {
  TcpListener listener;
  TlsContext ctx;
  Handler handler;
  std::thread accept_thread;
  std::mutex conns_mu;
  std::list<std::unique_ptr<ServerConn>> conns;
  std::atomic<bool> stopping{false};
  std::atomic<int> accepted{0};

  Impl(const Addr& bind_to, Handler h)
      : listener(bind_to), ctx(TlsContext::server("h2")), handler(std::move(h)) {}

  void accept_loop() {
    while (!stopping.load()) {
      std::optional<TcpStream> tcp;
      try {
        tcp = listener.accept(now_ms() + 200);
      } catch (const NetError&) {
        break;  // listener closed under us
      }
      if (!tcp) continue;
      accepted.fetch_add(1);
      auto sc = std::make_unique<ServerConn>();
      auto* scp = sc.get();
      {
        std::lock_guard<std::mutex> g(conns_mu);
        conns.push_back(std::move(sc));
      }
      scp->th = std::thread([this, scp, t = std::move(*tcp)]() mutable {
        serve_conn(scp, std::move(t));
      });
    }
  }

  void serve_conn(ServerConn* sc, TcpStream tcp) {
    auto& conn = sc->conn;
    try {
      auto tls = TlsStream::accept(ctx, std::move(tcp), now_ms() + 10000);
      uint8_t preface[kPrefaceLen];
      tls.read_exact(preface, kPrefaceLen, now_ms() + 10000);
      if (std::memcmp(preface, kPreface, kPrefaceLen) != 0)
        throw H2Error("bad connection preface");
      conn.tls = std::move(tls);
      {
        std::unique_lock<std::mutex> lk(conn.mu);
        conn.append_frame(kSettings, 0, 0, nullptr, 0);
        conn.flush(lk, now_ms() + 10000);
      }
    } catch (const std::exception&) {
      std::unique_lock<std::mutex> lk(conn.mu);
      conn.die_locked("handshake failed");
      return;
    }

    conn.reader_loop([this, sc](std::vector<int32_t> batch) {
      for (int32_t sid : batch) dispatch(sc, sid);
    });

    {
      std::lock_guard<std::mutex> g(sc->handlers_mu);
      for (auto& t : sc->handlers)
        if (t.joinable()) t.join();
    }
    // single-threaded from here: wave goodbye and drop the socket so the
    // peer sees the teardown instead of a silent idle connection
    {
      std::unique_lock<std::mutex> lk(conn.mu);
      uint8_t ga[8] = {uint8_t(uint32_t(conn.last_peer_sid) >> 24),
                       uint8_t(uint32_t(conn.last_peer_sid) >> 16),
                       uint8_t(uint32_t(conn.last_peer_sid) >> 8),
                       uint8_t(conn.last_peer_sid),
                       0, 0, 0, 0};
      conn.append_frame(kGoaway, 0, 0, ga, 8);
      conn.flush_best_effort(lk, now_ms() + 100);
    }
    conn.tls.close();
  }

  void dispatch(ServerConn* sc, int32_t sid) {
    Request req;
    {
      std::unique_lock<std::mutex> lk(sc->conn.mu);
      auto* ss = sc->conn.find(sid);
      if (!ss) return;
      req.headers = ss->headers;
      req.body = std::move(ss->data);
      ss->data.clear();
      for (const auto& h : req.headers) {
        if (h.first == ":method") req.method = h.second;
        if (h.first == ":path") req.path = h.second;
        if (h.first == ":authority") req.authority = h.second;
      }
    }
    std::lock_guard<std::mutex> g(sc->handlers_mu);
    sc->handlers.emplace_back([this, sc, sid, r = std::move(req)] {
      Responder resp(&sc->hooks, sid);
      try {
        handler(r, resp);
      } catch (const NetError&) {
        // peer or connection went away mid-response
      } catch (const std::exception&) {
        if (!resp.headers_sent_) {
          try {
            resp.send_headers(500, {}, true);
          } catch (...) {
          }
        }
      }
      if (!resp.ended_) {
        try {
          if (!resp.headers_sent_)
            resp.send_headers(500, {}, true);
          else
            resp.send_data(nullptr, 0, true);
        } catch (...) {
        }
      }
      std::unique_lock<std::mutex> lk(sc->conn.mu);
      sc->conn.streams.erase(sid);
    });
  }

  void stop() {
    if (stopping.exchange(true)) return;
    {
      std::lock_guard<std::mutex> g(conns_mu);
      for (auto& sc : conns) {
        std::unique_lock<std::mutex> lk(sc->conn.mu);
        sc->conn.stop = true;
        sc->conn.cv.notify_all();
      }
    }
    listener.close();
    if (accept_thread.joinable()) accept_thread.join();
    {
      std::lock_guard<std::mutex> g(conns_mu);
      for (auto& sc : conns)
        if (sc->th.joinable()) sc->th.join();
    }
  }
};

Http2Server::Http2Server(const Addr& bind_to, Handler handler)
    : impl_(std::make_unique<Impl>(bind_to, std::move(handler))) {
  impl_->accept_thread = std::thread([ip = impl_.get()] { ip->accept_loop(); });
}

Http2Server::~Http2Server() {
  if (impl_) impl_->stop();
}

uint16_t Http2Server::port() const { return impl_->listener.local_port(); }
int Http2Server::connections() const { return impl_->accepted.load(); }

void Http2Server::stop() { impl_->stop(); }

void Http2Server::Responder::send_headers(int status,
                                          const std::vector<hpack::Header>& extra,
                                          bool end_stream) {
  auto& conn = *hooks_->conn;
  std::unique_lock<std::mutex> lk(conn.mu);
  if (conn.dead || conn.stop) throw ConnClosed("h2: " + conn.death_reason);
  auto* ss = conn.find(sid_);
  if (!ss || ss->reset) throw NetError("h2: stream reset by peer");
  std::vector<hpack::Header> hs;
  hs.reserve(extra.size() + 1);
  hs.emplace_back(":status", std::to_string(status));
  hs.insert(hs.end(), extra.begin(), extra.end());
  auto block = conn.enc.encode(hs);
  uint8_t flags = kFlagEndHeaders | (end_stream ? kFlagEndStream : 0);
  conn.append_frame(kHeaders, flags, sid_, block.data(), block.size());
  conn.flush(lk, now_ms() + 30000);
  headers_sent_ = true;
  if (end_stream) ended_ = true;
}

void Http2Server::Responder::send_data(const uint8_t* data, size_t len,
                                       bool end_stream) {
  auto& conn = *hooks_->conn;
  std::unique_lock<std::mutex> lk(conn.mu);
  if (conn.dead || conn.stop) throw ConnClosed("h2: " + conn.death_reason);
  if (len == 0) {
    if (end_stream) {
      conn.append_frame(kData, kFlagEndStream, sid_, nullptr, 0);
      conn.flush(lk, now_ms() + 30000);
      ended_ = true;
    }
    return;
  }
  conn.send_body(lk, sid_, data, len, end_stream, now_ms() + 30000);
  if (end_stream) ended_ = true;
}

}  // namespace dnslab::net
