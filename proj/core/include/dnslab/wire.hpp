#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnslab::wire {

enum class RecordType : uint16_t {
  A = 1,
  NS = 2,
  CNAME = 5,
  SOA = 6,
  PTR = 12,
  MX = 15,
  TXT = 16,
  AAAA = 28,
  OPT = 41,
  SVCB = 64,
  HTTPS = 65,
  ANY = 255,
};

constexpr uint16_t kClassIn = 1;
constexpr uint16_t kTypeOpt = 41;
constexpr uint16_t kEdnsOptionEcs = 8;
constexpr size_t kMaxMessageBytes = 65535;
constexpr size_t kMaxNameWireBytes = 255;
constexpr size_t kMaxLabelBytes = 63;

uint16_t qtype_from_string(const std::string& s);  // "A", "AAAA", ... or numeric
std::string qtype_to_string(uint16_t t);

enum class Rcode : uint8_t {
  NoError = 0,
  FormErr = 1,
  ServFail = 2,
  NxDomain = 3,
  NotImp = 4,
  Refused = 5,
};

// Labels stored as received; operator== is byte-exact, equals_ci is the
// DNS-comparison form. Labels may contain arbitrary bytes except that
// from_string cannot express a literal '.'.
class DnsName {
 public:
  DnsName() = default;
  explicit DnsName(std::vector<std::string> labels);
  static DnsName from_string(const std::string& dotted);

  std::string to_string() const;  // "example.com", "." for root
  const std::vector<std::string>& labels() const { return labels_; }
  size_t wire_length() const;  // length bytes + label bytes + root terminator
  bool empty() const { return labels_.empty(); }
  bool equals_ci(const DnsName& other) const;
  DnsName lowered() const;
  std::string lowered_string() const;

  bool operator==(const DnsName&) const = default;

 private:
  std::vector<std::string> labels_;
};

struct DnsHeader {
  uint16_t id = 0;
  bool qr = false;
  uint8_t opcode = 0;
  bool aa = false;
  bool tc = false;
  bool rd = false;
  bool ra = false;
  uint8_t rcode = 0;

  bool operator==(const DnsHeader&) const = default;
};

struct Question {
  DnsName name;
  uint16_t qtype = static_cast<uint16_t>(RecordType::A);
  uint16_t qclass = kClassIn;

  bool operator==(const Question&) const = default;
};

struct ResourceRecord {
  DnsName name;
  uint16_t rtype = static_cast<uint16_t>(RecordType::A);
  uint16_t rclass = kClassIn;
  uint32_t ttl = 0;
  // Kept verbatim. Records decoded from a compressed message may embed
  // compression pointers here; re-encoding such a message does not rewrite
  // them (the cache patches original bytes instead of re-encoding).
  std::vector<uint8_t> rdata;

  bool operator==(const ResourceRecord&) const = default;
};

struct EdnsOption {
  uint16_t code = 0;
  std::vector<uint8_t> payload;

  bool operator==(const EdnsOption&) const = default;
};

struct Edns {
  uint16_t udp_payload_size = 4096;
  uint32_t ext_rcode_flags = 0;  // the OPT TTL field, preserved opaquely
  std::vector<EdnsOption> options;

  bool operator==(const Edns&) const = default;
};

struct DnsMessage {
  DnsHeader header;
  std::vector<Question> questions;
  std::vector<ResourceRecord> answers;
  std::vector<ResourceRecord> authorities;
  std::vector<ResourceRecord> additionals;  // OPT excluded; lives in edns
  std::optional<Edns> edns;

  bool operator==(const DnsMessage&) const = default;

  const EdnsOption* find_option(uint16_t code) const;
};

enum class DecodeErrorKind {
  Truncated,
  BadPointer,
  BadLabel,
  BadOpt,
  Garbage,
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

enum class EncodeErrorKind {
  LabelTooLong,
  NameTooLong,
  MessageTooLarge,
};

class EncodeError : public std::runtime_error {
 public:
  EncodeError(EncodeErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  EncodeErrorKind kind() const { return kind_; }

 private:
  EncodeErrorKind kind_;
};

// Always emits uncompressed names; the OPT pseudo-record (if edns is set) goes
// last in the additional section.
std::vector<uint8_t> encode_message(const DnsMessage& msg);

struct Decoded {
  DnsMessage message;
  bool trailing_garbage = false;
};

Decoded decode_message_ex(const uint8_t* data, size_t len);
DnsMessage decode_message(const std::vector<uint8_t>& bytes);
DnsMessage decode_message(const uint8_t* data, size_t len);

// In-place ID patch; requires wire.size() >= 2.
void rewrite_transaction_id(std::vector<uint8_t>& wire, uint16_t new_id);
uint16_t peek_transaction_id(const uint8_t* data, size_t len);

// Saturating TTL decrement across answer/authority/additional records. The
// EDNS pseudo-record is untouched. decrement = elapsed + margin.
void decrement_ttls(DnsMessage& msg, uint32_t elapsed_s, uint32_t margin_s);

// Byte offsets of the 32-bit TTL fields of every non-OPT record, in section
// order. Lets callers patch TTLs in original wire bytes without re-encoding.
std::vector<size_t> ttl_offsets(const uint8_t* data, size_t len);
inline std::vector<size_t> ttl_offsets(const std::vector<uint8_t>& b) {
  return ttl_offsets(b.data(), b.size());
}

// Minimum field of an SOA RDATA. Tolerates compression pointers in MNAME and
// RNAME (they terminate a name, so no resolution is needed to skip them).
std::optional<uint32_t> soa_minimum(const std::vector<uint8_t>& rdata);

DnsMessage make_query(const DnsName& name, uint16_t qtype, uint16_t id,
                      bool recursion_desired = true, bool with_edns = true);

// RDATA helpers for fixtures and tests.
std::vector<uint8_t> rdata_a(const std::string& ipv4);
std::vector<uint8_t> rdata_aaaa(const std::string& ipv6);
std::vector<uint8_t> rdata_txt(const std::string& text);
std::vector<uint8_t> rdata_name(const DnsName& name);
std::vector<uint8_t> rdata_soa(const DnsName& mname, const DnsName& rname,
                               uint32_t serial, uint32_t refresh, uint32_t retry,
                               uint32_t expire, uint32_t minimum);

}  // namespace dnslab::wire
