#include "dnslab/net/tls.hpp"

#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/rsa.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <arpa/inet.h>
#include <netinet/in.h>

#include <cstring>

namespace dnslab::net {

namespace {

std::string ssl_errors(const char* op) {
  std::string msg = op;
  unsigned long e;
  char buf[256];
  while ((e = ERR_get_error()) != 0) {
    ERR_error_string_n(e, buf, sizeof buf);
    msg += ": ";
    msg += buf;
  }
  return msg;
}

bool is_ip_literal(const std::string& host) {
  in_addr a4;
  in6_addr a6;
  return inet_pton(AF_INET, host.c_str(), &a4) == 1 ||
         inet_pton(AF_INET6, host.c_str(), &a6) == 1;
}

// Wire-format ALPN list: one length-prefixed protocol name.
std::string alpn_wire(const std::string& proto) {
  std::string w;
  w.push_back(char(proto.size()));
  w += proto;
  return w;
}

int alpn_select_cb(SSL*, const unsigned char** out, unsigned char* outlen,
                   const unsigned char* in, unsigned int inlen, void* arg) {
  auto* prefs = static_cast<std::string*>(arg);
  unsigned char* sel = nullptr;
  if (SSL_select_next_proto(&sel, outlen,
                            reinterpret_cast<const unsigned char*>(prefs->data()),
                            unsigned(prefs->size()), in, inlen) == OPENSSL_NPN_NEGOTIATED) {
    *out = sel;
    return SSL_TLSEXT_ERR_OK;
  }
  return SSL_TLSEXT_ERR_NOACK;
}

// Throwaway self-signed cert, one year validity, SANs for loopback use.
void make_self_signed(EVP_PKEY** out_key, X509** out_cert) {
  EVP_PKEY* key = EVP_EC_gen("P-256");
  if (!key) throw TlsError(ssl_errors("keygen"));

  X509* cert = X509_new();
  X509_set_version(cert, 2);
  ASN1_INTEGER_set(X509_get_serialNumber(cert), long(time(nullptr)));
  X509_gmtime_adj(X509_getm_notBefore(cert), -3600);
  X509_gmtime_adj(X509_getm_notAfter(cert), 365L * 24 * 3600);
  X509_set_pubkey(cert, key);

  X509_NAME* name = X509_get_subject_name(cert);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                             reinterpret_cast<const unsigned char*>("dnslab-lab-server"),
                             -1, -1, 0);
  X509_set_issuer_name(cert, name);

  X509V3_CTX v3{};
  X509V3_set_ctx(&v3, cert, cert, nullptr, nullptr, 0);
  X509_EXTENSION* san = X509V3_EXT_conf_nid(
      nullptr, &v3, NID_subject_alt_name,
      "DNS:localhost,IP:127.0.0.1,IP:::1");
  if (san) {
    X509_add_ext(cert, san, -1);
    X509_EXTENSION_free(san);
  }

  if (!X509_sign(cert, key, EVP_sha256())) {
    EVP_PKEY_free(key);
    X509_free(cert);
    throw TlsError(ssl_errors("cert sign"));
  }
  *out_key = key;
  *out_cert = cert;
}

}  // namespace

struct TlsContext::Impl {
  SSL_CTX* ctx = nullptr;
  std::string alpn;  // wire format, server-side callback points here
  bool verify = false;

  ~Impl() {
    if (ctx) SSL_CTX_free(ctx);
  }
};

TlsContext TlsContext::client(bool verify, const std::string& alpn) {
  auto impl = std::make_shared<Impl>();
  impl->ctx = SSL_CTX_new(TLS_client_method());
  if (!impl->ctx) throw TlsError(ssl_errors("SSL_CTX_new"));
  SSL_CTX_set_min_proto_version(impl->ctx, TLS1_2_VERSION);
  impl->verify = verify;
  if (verify) {
    SSL_CTX_set_verify(impl->ctx, SSL_VERIFY_PEER, nullptr);
    SSL_CTX_set_default_verify_paths(impl->ctx);
  } else {
    SSL_CTX_set_verify(impl->ctx, SSL_VERIFY_NONE, nullptr);
  }
  if (!alpn.empty()) {
    impl->alpn = alpn_wire(alpn);
    SSL_CTX_set_alpn_protos(impl->ctx,
                            reinterpret_cast<const unsigned char*>(impl->alpn.data()),
                            unsigned(impl->alpn.size()));
  }
  TlsContext c;
  c.impl = std::move(impl);
  return c;
}

TlsContext TlsContext::server(const std::string& alpn) {
  auto impl = std::make_shared<Impl>();
  impl->ctx = SSL_CTX_new(TLS_server_method());
  if (!impl->ctx) throw TlsError(ssl_errors("SSL_CTX_new"));
  SSL_CTX_set_min_proto_version(impl->ctx, TLS1_2_VERSION);

  EVP_PKEY* key = nullptr;
  X509* cert = nullptr;
  make_self_signed(&key, &cert);
  int ok = SSL_CTX_use_certificate(impl->ctx, cert) == 1 &&
           SSL_CTX_use_PrivateKey(impl->ctx, key) == 1;
  X509_free(cert);
  EVP_PKEY_free(key);
  if (!ok) throw TlsError(ssl_errors("install cert"));

  if (!alpn.empty()) {
    impl->alpn = alpn_wire(alpn);
    SSL_CTX_set_alpn_select_cb(impl->ctx, alpn_select_cb, &impl->alpn);
  }
  TlsContext c;
  c.impl = std::move(impl);
  return c;
}

TlsStream::~TlsStream() { close(); }

TlsStream::TlsStream(TlsStream&& o) noexcept : ssl_(o.ssl_), fd_(o.fd_) {
  o.ssl_ = nullptr;
  o.fd_ = -1;
}

TlsStream& TlsStream::operator=(TlsStream&& o) noexcept {
  if (this != &o) {
    close();
    ssl_ = o.ssl_;
    fd_ = o.fd_;
    o.ssl_ = nullptr;
    o.fd_ = -1;
  }
  return *this;
}

void TlsStream::close() {
  if (ssl_) {
    SSL_shutdown(ssl_);  // best effort, peer may already be gone
    SSL_free(ssl_);
    ssl_ = nullptr;
  }
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TlsStream TlsStream::handshake(const TlsContext& ctx, TcpStream&& tcp,
                               const std::string* host, double deadline_ms) {
  TlsStream s;
  s.fd_ = tcp.release();
  s.ssl_ = SSL_new(ctx.impl->ctx);
  if (!s.ssl_) throw TlsError(ssl_errors("SSL_new"));
  SSL_set_fd(s.ssl_, s.fd_);
  SSL_set_mode(s.ssl_, SSL_MODE_ENABLE_PARTIAL_WRITE |
                           SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);

  if (host) {
    SSL_set_connect_state(s.ssl_);
    if (!is_ip_literal(*host))
      SSL_set_tlsext_host_name(s.ssl_, host->c_str());
    if (ctx.impl->verify) {
      X509_VERIFY_PARAM* param = SSL_get0_param(s.ssl_);
      if (is_ip_literal(*host))
        X509_VERIFY_PARAM_set1_ip_asc(param, host->c_str());
      else
        X509_VERIFY_PARAM_set1_host(param, host->c_str(), host->size());
    }
  } else {
    SSL_set_accept_state(s.ssl_);
  }

  for (;;) {
    ERR_clear_error();
    int r = SSL_do_handshake(s.ssl_);
    if (r == 1) return s;
    int err = SSL_get_error(s.ssl_, r);
    if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE) {
      short ev = err == SSL_ERROR_WANT_READ ? POLLIN : POLLOUT;
      if (!wait_fd(s.fd_, ev, deadline_ms)) throw TimeoutError("tls handshake timed out");
      continue;
    }
    long vr = SSL_get_verify_result(s.ssl_);
    if (vr != X509_V_OK)
      throw TlsError(std::string("certificate verification failed: ") +
                     X509_verify_cert_error_string(vr));
    throw TlsError(ssl_errors("tls handshake"));
  }
}

TlsStream TlsStream::connect(const TlsContext& ctx, TcpStream&& tcp,
                             const std::string& host, double deadline_ms) {
  return handshake(ctx, std::move(tcp), &host, deadline_ms);
}

TlsStream TlsStream::accept(const TlsContext& ctx, TcpStream&& tcp, double deadline_ms) {
  return handshake(ctx, std::move(tcp), nullptr, deadline_ms);
}

TlsStream::IoResult TlsStream::try_read(uint8_t* buf, size_t cap) {
  IoResult res;
  ERR_clear_error();
  int r = SSL_read(ssl_, buf, int(cap));
  if (r > 0) {
    res.n = size_t(r);
    return res;
  }
  int err = SSL_get_error(ssl_, r);
  switch (err) {
    case SSL_ERROR_WANT_READ:
      res.need = POLLIN;
      return res;
    case SSL_ERROR_WANT_WRITE:
      res.need = POLLOUT;
      return res;
    case SSL_ERROR_ZERO_RETURN:
      res.closed = true;
      return res;
    case SSL_ERROR_SYSCALL:
      if (errno == 0 || errno == ECONNRESET || errno == EPIPE) {
        res.closed = true;  // peer dropped the transport without close_notify
        return res;
      }
      throw NetError(std::string("tls read: ") + std::strerror(errno));
    default:
      throw TlsError(ssl_errors("tls read"));
  }
}

TlsStream::IoResult TlsStream::try_write(const uint8_t* data, size_t len) {
  IoResult res;
  ERR_clear_error();
  int r = SSL_write(ssl_, data, int(len));
  if (r > 0) {
    res.n = size_t(r);
    return res;
  }
  int err = SSL_get_error(ssl_, r);
  switch (err) {
    case SSL_ERROR_WANT_READ:
      res.need = POLLIN;
      return res;
    case SSL_ERROR_WANT_WRITE:
      res.need = POLLOUT;
      return res;
    case SSL_ERROR_ZERO_RETURN:
      res.closed = true;
      return res;
    case SSL_ERROR_SYSCALL:
      if (errno == 0 || errno == ECONNRESET || errno == EPIPE) {
        res.closed = true;
        return res;
      }
      throw NetError(std::string("tls write: ") + std::strerror(errno));
    default:
      throw TlsError(ssl_errors("tls write"));
  }
}

size_t TlsStream::read_some(uint8_t* buf, size_t cap, double deadline_ms) {
  for (;;) {
    auto r = try_read(buf, cap);
    if (r.n > 0) return r.n;
    if (r.closed) throw ConnClosed("tls connection closed by peer");
    if (!wait_fd(fd_, r.need, deadline_ms)) throw TimeoutError("tls read timed out");
  }
}

void TlsStream::read_exact(uint8_t* buf, size_t n, double deadline_ms) {
  size_t off = 0;
  while (off < n) off += read_some(buf + off, n - off, deadline_ms);
}

void TlsStream::write_all(const uint8_t* data, size_t len, double deadline_ms) {
  size_t off = 0;
  while (off < len) {
    auto r = try_write(data + off, len - off);
    if (r.closed) throw ConnClosed("tls connection closed during write");
    off += r.n;
    if (r.n == 0 && !wait_fd(fd_, r.need, deadline_ms))
      throw TimeoutError("tls write timed out");
  }
}

std::string TlsStream::selected_alpn() const {
  const unsigned char* data = nullptr;
  unsigned len = 0;
  SSL_get0_alpn_selected(ssl_, &data, &len);
  return std::string(reinterpret_cast<const char*>(data), len);
}

}  // namespace dnslab::net
