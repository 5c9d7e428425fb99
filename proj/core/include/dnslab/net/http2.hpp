#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dnslab/net/hpack.hpp"
#include "dnslab/net/socket.hpp"

namespace dnslab::net {

struct H2Error : NetError {
  explicit H2Error(const std::string& what) : NetError(what) {}
};

// h2-over-TLS client: one connection, many concurrent request() callers.
class Http2Client {
 public:
  struct Response {
    int status = 0;
    std::vector<hpack::Header> headers;  // includes pseudo-headers
    std::vector<uint8_t> body;           // empty when on_data streamed it
  };
  // Streamed DATA chunks, invoked on the requesting thread as frames land.
  using DataFn = std::function<void(const uint8_t*, size_t)>;

  Http2Client();
  ~Http2Client();
  Http2Client(Http2Client&&) noexcept;
  Http2Client& operator=(Http2Client&&) noexcept;
  Http2Client(const Http2Client&) = delete;
  Http2Client& operator=(const Http2Client&) = delete;

  // TCP + TLS (ALPN h2, `host` for SNI/verification) + connection preface.
  static Http2Client connect(const Addr& addr, const std::string& host,
                             bool verify, double deadline_ms);

  Response request(const std::vector<hpack::Header>& headers,
                   const std::vector<uint8_t>& body, double deadline_ms,
                   const DataFn& on_data = nullptr);

  bool alive() const;
  void close();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

// Minimal h2 server for lab endpoints. Each request runs the handler on its
// own thread; the responder can stream DATA frames as they become ready.
class Http2Server {
 public:
  struct Request {
    std::string method;
    std::string path;
    std::string authority;
    std::vector<hpack::Header> headers;
    std::vector<uint8_t> body;
  };

  class Responder {
   public:
    void send_headers(int status, const std::vector<hpack::Header>& extra,
                      bool end_stream);
    void send_data(const uint8_t* data, size_t len, bool end_stream);
    bool ended() const { return ended_; }

    struct Hooks;

   private:
    friend class Http2Server;
    Responder(Hooks* hooks, int32_t sid) : hooks_(hooks), sid_(sid) {}
    Hooks* hooks_;
    int32_t sid_;
    bool headers_sent_ = false;
    bool ended_ = false;
  };

  using Handler = std::function<void(const Request&, Responder&)>;

  // Binds, generates a self-signed cert, starts accepting immediately.
  Http2Server(const Addr& bind_to, Handler handler);
  ~Http2Server();
  Http2Server(const Http2Server&) = delete;
  Http2Server& operator=(const Http2Server&) = delete;

  uint16_t port() const;
  int connections() const;  // TCP connections accepted so far
  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace dnslab::net
