#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnslab::net {

struct NetError : std::runtime_error {
  explicit NetError(const std::string& what) : std::runtime_error(what) {}
};

// Deadline passed without the operation completing.
struct TimeoutError : NetError {
  explicit TimeoutError(const std::string& what) : NetError(what) {}
};

// Peer went away: orderly EOF or a reset, either way the stream is unusable.
struct ConnClosed : NetError {
  explicit ConnClosed(const std::string& what) : NetError(what) {}
};

// Monotonic milliseconds since process start, microsecond grain. All
// deadline_ms parameters below are absolute values on this clock.
double now_ms();

// Polls fd for poll events until ready or the deadline; false on expiry.
bool wait_fd(int fd, short events, double deadline_ms);

// Numeric "ip:port"; v6 addresses in brackets ("[::1]:853").
struct Addr {
  std::string host;
  uint16_t port = 0;

  static Addr parse(const std::string& s);  // throws NetError
  std::string to_string() const;
  bool ipv6() const;
};

class UdpSocket {
 public:
  UdpSocket();  // unbound v4 socket, kernel assigns a port on first send
  explicit UdpSocket(const Addr& bind_to);
  ~UdpSocket();
  UdpSocket(UdpSocket&& o) noexcept;
  UdpSocket& operator=(UdpSocket&& o) noexcept;
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  void send_to(const Addr& to, const uint8_t* data, size_t len);
  // One datagram, or nullopt once the deadline passes. `from` may be null.
  std::optional<std::vector<uint8_t>> recv_from(Addr* from, double deadline_ms);
  uint16_t local_port() const;
  int fd() const { return fd_; }
  void close();

 private:
  int fd_ = -1;
};

class TcpStream {
 public:
  TcpStream() = default;
  ~TcpStream();
  TcpStream(TcpStream&& o) noexcept;
  TcpStream& operator=(TcpStream&& o) noexcept;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static TcpStream connect(const Addr& to, double deadline_ms);

  void write_all(const uint8_t* data, size_t len, double deadline_ms);
  // At least one byte, up to cap. Throws TimeoutError / ConnClosed.
  size_t read_some(uint8_t* buf, size_t cap, double deadline_ms);
  void read_exact(uint8_t* buf, size_t n, double deadline_ms);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  int release();  // hand the fd off (e.g. to a TLS stream) and forget it
  void close();

  static TcpStream adopt(int fd);  // wrap an already-connected nonblocking fd

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  explicit TcpListener(const Addr& bind_to);
  ~TcpListener();
  TcpListener(TcpListener&& o) noexcept;
  TcpListener& operator=(TcpListener&& o) noexcept;
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::optional<TcpStream> accept(double deadline_ms);
  uint16_t local_port() const;
  int fd() const { return fd_; }
  void close();

 private:
  int fd_ = -1;
};

}  // namespace dnslab::net
