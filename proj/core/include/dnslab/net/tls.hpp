#pragma once

#include <poll.h>

#include <memory>
#include <string>

#include "dnslab/net/socket.hpp"

typedef struct ssl_st SSL;

namespace dnslab::net {

struct TlsError : NetError {
  explicit TlsError(const std::string& what) : NetError(what) {}
};

// Wraps an SSL_CTX. Client contexts verify the peer chain (TLS 1.2+) unless
// told not to; server contexts carry a fresh self-signed cert (lab use only).
class TlsContext {
 public:
  static TlsContext client(bool verify, const std::string& alpn = "");
  static TlsContext server(const std::string& alpn = "");

  struct Impl;
  std::shared_ptr<Impl> impl;
};

class TlsStream {
 public:
  TlsStream() = default;
  ~TlsStream();
  TlsStream(TlsStream&& o) noexcept;
  TlsStream& operator=(TlsStream&& o) noexcept;
  TlsStream(const TlsStream&) = delete;
  TlsStream& operator=(const TlsStream&) = delete;

  // Take the connected tcp stream and run the handshake. `host` is used for
  // SNI and certificate checks (IP literals check the iPAddress SAN instead).
  static TlsStream connect(const TlsContext& ctx, TcpStream&& tcp,
                           const std::string& host, double deadline_ms);
  static TlsStream accept(const TlsContext& ctx, TcpStream&& tcp, double deadline_ms);

  // Non-blocking attempt; when need != 0 the fd must become ready for that
  // poll event before retrying. Lets callers serialize SSL access with their
  // own lock and poll outside it.
  struct IoResult {
    size_t n = 0;
    short need = 0;
    bool closed = false;
  };
  IoResult try_read(uint8_t* buf, size_t cap);
  IoResult try_write(const uint8_t* data, size_t len);

  size_t read_some(uint8_t* buf, size_t cap, double deadline_ms);
  void read_exact(uint8_t* buf, size_t n, double deadline_ms);
  void write_all(const uint8_t* data, size_t len, double deadline_ms);

  std::string selected_alpn() const;
  int fd() const { return fd_; }
  bool valid() const { return ssl_ != nullptr; }
  void close();

 private:
  static TlsStream handshake(const TlsContext& ctx, TcpStream&& tcp,
                             const std::string* host, double deadline_ms);

  SSL* ssl_ = nullptr;
  int fd_ = -1;
};

}  // namespace dnslab::net
