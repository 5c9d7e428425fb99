#include "dnslab/net/socket.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <csignal>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>

namespace dnslab::net {

namespace {

std::string errno_text(const char* op) {
  return std::string(op) + ": " + std::strerror(errno);
}

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
    throw NetError(errno_text("fcntl"));
}

struct SockAddr {
  sockaddr_storage ss{};
  socklen_t len = 0;
  int family() const { return ss.ss_family; }
  sockaddr* ptr() { return reinterpret_cast<sockaddr*>(&ss); }
  const sockaddr* ptr() const { return reinterpret_cast<const sockaddr*>(&ss); }
};

SockAddr to_sockaddr(const Addr& a) {
  SockAddr sa;
  if (a.ipv6()) {
    auto* s6 = reinterpret_cast<sockaddr_in6*>(&sa.ss);
    s6->sin6_family = AF_INET6;
    s6->sin6_port = htons(a.port);
    if (inet_pton(AF_INET6, a.host.c_str(), &s6->sin6_addr) != 1)
      throw NetError("bad ipv6 address: " + a.host);
    sa.len = sizeof(sockaddr_in6);
  } else {
    auto* s4 = reinterpret_cast<sockaddr_in*>(&sa.ss);
    s4->sin_family = AF_INET;
    s4->sin_port = htons(a.port);
    if (inet_pton(AF_INET, a.host.c_str(), &s4->sin_addr) != 1)
      throw NetError("bad ipv4 address: " + a.host);
    sa.len = sizeof(sockaddr_in);
  }
  return sa;
}

Addr from_sockaddr(const sockaddr_storage& ss) {
  char buf[INET6_ADDRSTRLEN] = {};
  Addr a;
  if (ss.ss_family == AF_INET6) {
    auto* s6 = reinterpret_cast<const sockaddr_in6*>(&ss);
    inet_ntop(AF_INET6, &s6->sin6_addr, buf, sizeof buf);
    a.host = buf;
    a.port = ntohs(s6->sin6_port);
  } else {
    auto* s4 = reinterpret_cast<const sockaddr_in*>(&ss);
    inet_ntop(AF_INET, &s4->sin_addr, buf, sizeof buf);
    a.host = buf;
    a.port = ntohs(s4->sin_port);
  }
  return a;
}

uint16_t bound_port(int fd) {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len) < 0)
    throw NetError(errno_text("getsockname"));
  return from_sockaddr(ss).port;
}

int open_socket(int family, int type) {
  // writes into half-closed TLS sockets must fail with EPIPE, not kill us
  // (plain TCP sends pass MSG_NOSIGNAL, but OpenSSL's internal writes can't)
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;
  int fd = ::socket(family, type, 0);
  if (fd < 0) throw NetError(errno_text("socket"));
  set_nonblocking(fd);
  return fd;
}

}  // namespace

double now_ms() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point anchor = clock::now();
  return std::chrono::duration<double, std::milli>(clock::now() - anchor).count();
}

bool wait_fd(int fd, short events, double deadline_ms) {
  for (;;) {
    double remaining = deadline_ms - now_ms();
    if (remaining <= 0) return false;
    pollfd p{fd, events, 0};
    int ms = int(std::ceil(std::min(remaining, 60000.0)));
    int r = ::poll(&p, 1, ms);
    if (r > 0) return true;
    if (r < 0 && errno != EINTR) throw NetError(errno_text("poll"));
  }
}

Addr Addr::parse(const std::string& s) {
  Addr a;
  std::string port_str;
  if (!s.empty() && s[0] == '[') {
    auto close = s.find(']');
    if (close == std::string::npos || close + 1 >= s.size() || s[close + 1] != ':')
      throw NetError("bad address: " + s);
    a.host = s.substr(1, close - 1);
    port_str = s.substr(close + 2);
    in6_addr tmp;
    if (inet_pton(AF_INET6, a.host.c_str(), &tmp) != 1)
      throw NetError("bad ipv6 address: " + s);
  } else {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) throw NetError("missing port: " + s);
    a.host = s.substr(0, colon);
    port_str = s.substr(colon + 1);
    in_addr tmp;
    if (inet_pton(AF_INET, a.host.c_str(), &tmp) != 1)
      throw NetError("bad ipv4 address: " + s);
  }
  if (port_str.empty() || port_str.find_first_not_of("0123456789") != std::string::npos)
    throw NetError("bad port: " + s);
  long p = std::strtol(port_str.c_str(), nullptr, 10);
  if (p < 0 || p > 65535) throw NetError("port out of range: " + s);
  a.port = uint16_t(p);
  return a;
}

std::string Addr::to_string() const {
  if (ipv6()) return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

bool Addr::ipv6() const { return host.find(':') != std::string::npos; }

UdpSocket::UdpSocket() { fd_ = open_socket(AF_INET, SOCK_DGRAM); }

UdpSocket::UdpSocket(const Addr& bind_to) {
  fd_ = open_socket(bind_to.ipv6() ? AF_INET6 : AF_INET, SOCK_DGRAM);
  auto sa = to_sockaddr(bind_to);
  if (::bind(fd_, sa.ptr(), sa.len) < 0) {
    int e = errno;
    ::close(fd_);
    fd_ = -1;
    errno = e;
    throw NetError(errno_text("bind"));
  }
}

UdpSocket::~UdpSocket() { close(); }

UdpSocket::UdpSocket(UdpSocket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }

UdpSocket& UdpSocket::operator=(UdpSocket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void UdpSocket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void UdpSocket::send_to(const Addr& to, const uint8_t* data, size_t len) {
  auto sa = to_sockaddr(to);
  ssize_t n = ::sendto(fd_, data, len, MSG_NOSIGNAL, sa.ptr(), sa.len);
  if (n < 0) throw NetError(errno_text("sendto"));
  if (size_t(n) != len) throw NetError("short udp send");
}

std::optional<std::vector<uint8_t>> UdpSocket::recv_from(Addr* from, double deadline_ms) {
  std::vector<uint8_t> buf(65536);
  for (;;) {
    if (!wait_fd(fd_, POLLIN, deadline_ms)) return std::nullopt;
    sockaddr_storage ss{};
    socklen_t slen = sizeof ss;
    ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                           reinterpret_cast<sockaddr*>(&ss), &slen);
    if (n >= 0) {
      buf.resize(size_t(n));
      if (from) *from = from_sockaddr(ss);
      return buf;
    }
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
    throw NetError(errno_text("recvfrom"));
  }
}

uint16_t UdpSocket::local_port() const { return bound_port(fd_); }

TcpStream::~TcpStream() { close(); }

TcpStream::TcpStream(TcpStream&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }

TcpStream& TcpStream::operator=(TcpStream&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void TcpStream::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

int TcpStream::release() {
  int fd = fd_;
  fd_ = -1;
  return fd;
}

TcpStream TcpStream::adopt(int fd) {
  TcpStream s;
  s.fd_ = fd;
  return s;
}

TcpStream TcpStream::connect(const Addr& to, double deadline_ms) {
  auto sa = to_sockaddr(to);
  int fd = open_socket(sa.family(), SOCK_STREAM);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (::connect(fd, sa.ptr(), sa.len) < 0 && errno != EINPROGRESS) {
    int e = errno;
    ::close(fd);
    errno = e;
    throw NetError(errno_text("connect"));
  }
  if (!wait_fd(fd, POLLOUT, deadline_ms)) {
    ::close(fd);
    throw TimeoutError("connect timed out: " + to.to_string());
  }
  int err = 0;
  socklen_t elen = sizeof err;
  if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen) < 0 || err != 0) {
    ::close(fd);
    throw NetError("connect failed: " + to.to_string() + ": " +
                   std::strerror(err ? err : errno));
  }
  return adopt(fd);
}

void TcpStream::write_all(const uint8_t* data, size_t len, double deadline_ms) {
  size_t off = 0;
  while (off < len) {
    ssize_t n = ::send(fd_, data + off, len - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += size_t(n);
      continue;
    }
    if (n < 0 && (errno == EPIPE || errno == ECONNRESET))
      throw ConnClosed("connection reset during write");
    if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
      throw NetError(errno_text("send"));
    if (!wait_fd(fd_, POLLOUT, deadline_ms)) throw TimeoutError("write timed out");
  }
}

size_t TcpStream::read_some(uint8_t* buf, size_t cap, double deadline_ms) {
  for (;;) {
    ssize_t n = ::recv(fd_, buf, cap, 0);
    if (n > 0) return size_t(n);
    if (n == 0) throw ConnClosed("connection closed by peer");
    if (errno == ECONNRESET) throw ConnClosed("connection reset by peer");
    if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
      throw NetError(errno_text("recv"));
    if (!wait_fd(fd_, POLLIN, deadline_ms)) throw TimeoutError("read timed out");
  }
}

void TcpStream::read_exact(uint8_t* buf, size_t n, double deadline_ms) {
  size_t off = 0;
  while (off < n) off += read_some(buf + off, n - off, deadline_ms);
}

TcpListener::TcpListener(const Addr& bind_to) {
  fd_ = open_socket(bind_to.ipv6() ? AF_INET6 : AF_INET, SOCK_STREAM);
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto sa = to_sockaddr(bind_to);
  if (::bind(fd_, sa.ptr(), sa.len) < 0 || ::listen(fd_, 64) < 0) {
    int e = errno;
    ::close(fd_);
    fd_ = -1;
    errno = e;
    throw NetError(errno_text("bind/listen"));
  }
}

TcpListener::~TcpListener() { close(); }

TcpListener::TcpListener(TcpListener&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }

TcpListener& TcpListener::operator=(TcpListener&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void TcpListener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::optional<TcpStream> TcpListener::accept(double deadline_ms) {
  for (;;) {
    if (!wait_fd(fd_, POLLIN, deadline_ms)) return std::nullopt;
    int fd = ::accept4(fd_, nullptr, nullptr, SOCK_NONBLOCK);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return TcpStream::adopt(fd);
    }
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
    throw NetError(errno_text("accept"));
  }
}

uint16_t TcpListener::local_port() const { return bound_port(fd_); }

}  // namespace dnslab::net
