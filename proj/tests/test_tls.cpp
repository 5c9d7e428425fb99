#include <doctest.h>

#include <cstring>
#include <thread>

#include "dnslab/net/tls.hpp"

using namespace dnslab;

namespace {

std::vector<uint8_t> bytes(const char* s) {
  return std::vector<uint8_t>(s, s + std::strlen(s));
}

struct EchoServer {
  net::TcpListener lis;
  net::TlsContext ctx;
  std::thread th;

  explicit EchoServer(const std::string& alpn = "h2")
      : lis(net::Addr{"127.0.0.1", 0}), ctx(net::TlsContext::server(alpn)) {}

  net::Addr addr() const { return {"127.0.0.1", lis.local_port()}; }

  void serve_once() {
    th = std::thread([this] {
      auto tcp = lis.accept(net::now_ms() + 5000);
      REQUIRE(tcp.has_value());
      try {
        auto tls = net::TlsStream::accept(ctx, std::move(*tcp), net::now_ms() + 5000);
        std::vector<uint8_t> buf(4096);
        for (;;) {
          size_t n = tls.read_some(buf.data(), buf.size(), net::now_ms() + 5000);
          tls.write_all(buf.data(), n, net::now_ms() + 5000);
        }
      } catch (const net::NetError&) {
        // client went away — done
      }
    });
  }

  ~EchoServer() {
    if (th.joinable()) th.join();
  }
};

}  // namespace

TEST_CASE("tls echo over loopback with alpn h2") {
  EchoServer srv;
  srv.serve_once();

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(srv.addr(), net::now_ms() + 2000);
  auto tls = net::TlsStream::connect(ctx, std::move(tcp), "localhost",
                                     net::now_ms() + 5000);
  CHECK(tls.selected_alpn() == "h2");

  auto msg = bytes("over the wire");
  tls.write_all(msg.data(), msg.size(), net::now_ms() + 2000);
  std::vector<uint8_t> buf(msg.size());
  tls.read_exact(buf.data(), buf.size(), net::now_ms() + 2000);
  CHECK(buf == msg);
}

TEST_CASE("verification is on by default and rejects a self-signed peer") {
  EchoServer srv;
  srv.serve_once();

  auto strict = net::TlsContext::client(true, "h2");
  auto tcp = net::TcpStream::connect(srv.addr(), net::now_ms() + 2000);
  CHECK_THROWS_AS(net::TlsStream::connect(strict, std::move(tcp), "localhost",
                                          net::now_ms() + 5000),
                  net::TlsError);
}

TEST_CASE("server without alpn still talks, nothing selected") {
  EchoServer srv("");
  srv.serve_once();

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(srv.addr(), net::now_ms() + 2000);
  auto tls = net::TlsStream::connect(ctx, std::move(tcp), "localhost",
                                     net::now_ms() + 5000);
  CHECK(tls.selected_alpn().empty());

  auto msg = bytes("plain");
  tls.write_all(msg.data(), msg.size(), net::now_ms() + 2000);
  std::vector<uint8_t> buf(msg.size());
  tls.read_exact(buf.data(), buf.size(), net::now_ms() + 2000);
  CHECK(buf == msg);
}

TEST_CASE("bulk bytes cross the tls pipe intact") {
  EchoServer srv;
  srv.serve_once();

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(srv.addr(), net::now_ms() + 2000);
  auto tls = net::TlsStream::connect(ctx, std::move(tcp), "localhost",
                                     net::now_ms() + 5000);

  const size_t total = 256 * 1024;
  std::vector<uint8_t> big(total);
  for (size_t i = 0; i < total; ++i) big[i] = uint8_t(i * 13 + (i >> 8));

  std::thread pump([&] {
    tls.write_all(big.data(), big.size(), net::now_ms() + 10000);
  });
  std::vector<uint8_t> got(total);
  tls.read_exact(got.data(), got.size(), net::now_ms() + 10000);
  pump.join();
  CHECK(got == big);
}

TEST_CASE("handshake against a mute tcp peer times out") {
  net::TcpListener lis(net::Addr{"127.0.0.1", 0});
  std::thread holder([&] {
    auto tcp = lis.accept(net::now_ms() + 2000);
    REQUIRE(tcp.has_value());
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
  });

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(net::Addr{"127.0.0.1", lis.local_port()},
                                     net::now_ms() + 2000);
  double t0 = net::now_ms();
  CHECK_THROWS_AS(net::TlsStream::connect(ctx, std::move(tcp), "localhost", t0 + 120),
                  net::TimeoutError);
  double waited = net::now_ms() - t0;
  CHECK(waited >= 100.0);
  CHECK(waited < 400.0);
  holder.join();
}

TEST_CASE("try_read reports hunger instead of blocking") {
  EchoServer srv;
  srv.serve_once();

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(srv.addr(), net::now_ms() + 2000);
  auto tls = net::TlsStream::connect(ctx, std::move(tcp), "localhost",
                                     net::now_ms() + 5000);

  uint8_t b;
  auto r = tls.try_read(&b, 1);
  CHECK(r.n == 0);
  CHECK(r.need == POLLIN);
  CHECK_FALSE(r.closed);

  auto msg = bytes("x");
  tls.write_all(msg.data(), msg.size(), net::now_ms() + 2000);
  // poll until the echo arrives, the way a reader thread would
  double deadline = net::now_ms() + 2000;
  for (;;) {
    auto rr = tls.try_read(&b, 1);
    if (rr.n == 1) break;
    REQUIRE_FALSE(rr.closed);
    REQUIRE(net::wait_fd(tls.fd(), rr.need, deadline));
  }
  CHECK(b == 'x');
}

TEST_CASE("peer teardown shows up as ConnClosed") {
  net::TcpListener lis(net::Addr{"127.0.0.1", 0});
  auto sctx = net::TlsContext::server("h2");
  std::thread srv([&] {
    auto tcp = lis.accept(net::now_ms() + 2000);
    REQUIRE(tcp.has_value());
    auto tls = net::TlsStream::accept(sctx, std::move(*tcp), net::now_ms() + 5000);
    uint8_t b;
    tls.read_some(&b, 1, net::now_ms() + 2000);
    // destructor shuts the session down
  });

  auto ctx = net::TlsContext::client(false, "h2");
  auto tcp = net::TcpStream::connect(net::Addr{"127.0.0.1", lis.local_port()},
                                     net::now_ms() + 2000);
  auto tls = net::TlsStream::connect(ctx, std::move(tcp), "localhost",
                                     net::now_ms() + 5000);
  uint8_t b = 'q';
  tls.write_all(&b, 1, net::now_ms() + 2000);
  srv.join();
  CHECK_THROWS_AS(tls.read_some(&b, 1, net::now_ms() + 2000), net::ConnClosed);
}
