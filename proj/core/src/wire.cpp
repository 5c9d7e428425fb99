#include "dnslab/wire.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cctype>
#include <cstring>

namespace dnslab::wire {

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

  size_t pos() const { return pos_; }
  size_t remaining() const { return len_ - pos_; }

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data_[pos_] << 8 | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = (uint32_t(data_[pos_]) << 24) | (uint32_t(data_[pos_ + 1]) << 16) |
                 (uint32_t(data_[pos_ + 2]) << 8) | uint32_t(data_[pos_ + 3]);
    pos_ += 4;
    return v;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return out;
  }

  // DNS name with compression. Pointers must target a strictly lower offset
  // than the name start / previous jump target, which rules out loops and
  // forward references alike.
  DnsName name() {
    std::vector<std::string> labels;
    size_t total = 1;  // root terminator
    size_t rd = pos_;
    size_t jump_limit = rd;  // next pointer must go below this
    bool jumped = false;
    for (;;) {
      if (rd >= len_) throw DecodeError(DecodeErrorKind::Truncated, "name runs past message end");
      uint8_t len = data_[rd];
      if ((len & 0xc0) == 0xc0) {
        if (rd + 1 >= len_)
          throw DecodeError(DecodeErrorKind::Truncated, "compression pointer truncated");
        size_t target = (size_t(len & 0x3f) << 8) | data_[rd + 1];
        if (!jumped) {
          pos_ = rd + 2;
          jumped = true;
        }
        if (target >= jump_limit)
          throw DecodeError(DecodeErrorKind::BadPointer,
                            "compression pointer does not go strictly backwards");
        jump_limit = target;
        rd = target;
        continue;
      }
      if ((len & 0xc0) != 0)
        throw DecodeError(DecodeErrorKind::BadLabel, "reserved label type bits set");
      if (len == 0) {
        if (!jumped) pos_ = rd + 1;
        return DnsName(std::move(labels));
      }
      if (rd + 1 + len > len_)
        throw DecodeError(DecodeErrorKind::Truncated, "label runs past message end");
      total += size_t(len) + 1;
      if (total > kMaxNameWireBytes)
        throw DecodeError(DecodeErrorKind::BadLabel, "name exceeds 255 wire bytes");
      labels.emplace_back(reinterpret_cast<const char*>(data_ + rd + 1), len);
      rd += 1 + size_t(len);
    }
  }

  void skip_name() { (void)name(); }

 private:
  void need(size_t n) {
    if (pos_ + n > len_)
      throw DecodeError(DecodeErrorKind::Truncated, "message truncated");
  }

  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

void encode_name(std::vector<uint8_t>& out, const DnsName& name) {
  size_t total = 1;
  for (const std::string& label : name.labels()) {
    if (label.empty() || label.size() > kMaxLabelBytes)
      throw EncodeError(EncodeErrorKind::LabelTooLong,
                        "label length " + std::to_string(label.size()) + " outside 1..63");
    total += label.size() + 1;
  }
  if (total > kMaxNameWireBytes)
    throw EncodeError(EncodeErrorKind::NameTooLong, "name exceeds 255 wire bytes");
  for (const std::string& label : name.labels()) {
    out.push_back(static_cast<uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
  }
  out.push_back(0);
}

void encode_record(std::vector<uint8_t>& out, const ResourceRecord& rr) {
  encode_name(out, rr.name);
  put_u16(out, rr.rtype);
  put_u16(out, rr.rclass);
  put_u32(out, rr.ttl);
  if (rr.rdata.size() > 0xffff)
    throw EncodeError(EncodeErrorKind::MessageTooLarge, "rdata exceeds 65535 bytes");
  put_u16(out, static_cast<uint16_t>(rr.rdata.size()));
  out.insert(out.end(), rr.rdata.begin(), rr.rdata.end());
}

ResourceRecord decode_record(Reader& r) {
  ResourceRecord rr;
  rr.name = r.name();
  rr.rtype = r.u16();
  rr.rclass = r.u16();
  rr.ttl = r.u32();
  uint16_t rdlen = r.u16();
  rr.rdata = r.bytes(rdlen);
  return rr;
}

Edns edns_from_record(const ResourceRecord& rr) {
  Edns e;
  e.udp_payload_size = rr.rclass;
  e.ext_rcode_flags = rr.ttl;
  Reader r(rr.rdata.data(), rr.rdata.size());
  while (r.remaining() > 0) {
    if (r.remaining() < 4)
      throw DecodeError(DecodeErrorKind::BadOpt, "EDNS option header truncated");
    EdnsOption opt;
    opt.code = r.u16();
    uint16_t len = r.u16();
    if (r.remaining() < len)
      throw DecodeError(DecodeErrorKind::BadOpt, "EDNS option payload truncated");
    opt.payload = r.bytes(len);
    e.options.push_back(std::move(opt));
  }
  return e;
}

ResourceRecord edns_to_record(const Edns& e) {
  ResourceRecord rr;
  rr.name = DnsName();
  rr.rtype = kTypeOpt;
  rr.rclass = e.udp_payload_size;
  rr.ttl = e.ext_rcode_flags;
  for (const EdnsOption& opt : e.options) {
    put_u16(rr.rdata, opt.code);
    if (opt.payload.size() > 0xffff)
      throw EncodeError(EncodeErrorKind::MessageTooLarge, "EDNS option payload too large");
    put_u16(rr.rdata, static_cast<uint16_t>(opt.payload.size()));
    rr.rdata.insert(rr.rdata.end(), opt.payload.begin(), opt.payload.end());
  }
  return rr;
}

}  // namespace

DnsName::DnsName(std::vector<std::string> labels) : labels_(std::move(labels)) {}

DnsName DnsName::from_string(const std::string& dotted) {
  std::vector<std::string> labels;
  if (dotted.empty() || dotted == ".") return DnsName();
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      if (!cur.empty()) labels.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) labels.push_back(cur);
  return DnsName(std::move(labels));
}

std::string DnsName::to_string() const {
  if (labels_.empty()) return ".";
  std::string out;
  for (size_t i = 0; i < labels_.size(); ++i) {
    if (i) out.push_back('.');
    out += labels_[i];
  }
  return out;
}

size_t DnsName::wire_length() const {
  size_t n = 1;
  for (const std::string& l : labels_) n += l.size() + 1;
  return n;
}

bool DnsName::equals_ci(const DnsName& other) const {
  if (labels_.size() != other.labels_.size()) return false;
  for (size_t i = 0; i < labels_.size(); ++i) {
    const std::string& a = labels_[i];
    const std::string& b = other.labels_[i];
    if (a.size() != b.size()) return false;
    for (size_t j = 0; j < a.size(); ++j)
      if (lower(a[j]) != lower(b[j])) return false;
  }
  return true;
}

DnsName DnsName::lowered() const {
  std::vector<std::string> out;
  out.reserve(labels_.size());
  for (const std::string& l : labels_) {
    std::string low = l;
    std::transform(low.begin(), low.end(), low.begin(), lower);
    out.push_back(std::move(low));
  }
  return DnsName(std::move(out));
}

std::string DnsName::lowered_string() const { return lowered().to_string(); }

const EdnsOption* DnsMessage::find_option(uint16_t code) const {
  if (!edns) return nullptr;
  for (const EdnsOption& o : edns->options)
    if (o.code == code) return &o;
  return nullptr;
}

uint16_t qtype_from_string(const std::string& s) {
  std::string up = s;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  if (up == "A") return 1;
  if (up == "NS") return 2;
  if (up == "CNAME") return 5;
  if (up == "SOA") return 6;
  if (up == "PTR") return 12;
  if (up == "MX") return 15;
  if (up == "TXT") return 16;
  if (up == "AAAA") return 28;
  if (up == "SVCB") return 64;
  if (up == "HTTPS") return 65;
  if (up == "ANY") return 255;
  try {
    size_t pos = 0;
    unsigned long v = std::stoul(up, &pos);
    if (pos == up.size() && v <= 0xffff) return static_cast<uint16_t>(v);
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("unknown record type: " + s);
}

std::string qtype_to_string(uint16_t t) {
  switch (t) {
    case 1: return "A";
    case 2: return "NS";
    case 5: return "CNAME";
    case 6: return "SOA";
    case 12: return "PTR";
    case 15: return "MX";
    case 16: return "TXT";
    case 28: return "AAAA";
    case 41: return "OPT";
    case 64: return "SVCB";
    case 65: return "HTTPS";
    case 255: return "ANY";
    default: return std::to_string(t);
  }
}

std::vector<uint8_t> encode_message(const DnsMessage& msg) {
  std::vector<uint8_t> out;
  out.reserve(512);
  put_u16(out, msg.header.id);
  uint16_t flags = 0;
  if (msg.header.qr) flags |= 0x8000;
  flags |= (uint16_t(msg.header.opcode & 0x0f) << 11);
  if (msg.header.aa) flags |= 0x0400;
  if (msg.header.tc) flags |= 0x0200;
  if (msg.header.rd) flags |= 0x0100;
  if (msg.header.ra) flags |= 0x0080;
  flags |= (msg.header.rcode & 0x0f);
  put_u16(out, flags);

  size_t additional_count = msg.additionals.size() + (msg.edns ? 1 : 0);
  for (size_t count : {msg.questions.size(), msg.answers.size(), msg.authorities.size(),
                       additional_count}) {
    if (count > 0xffff)
      throw EncodeError(EncodeErrorKind::MessageTooLarge, "section count exceeds 65535");
    put_u16(out, static_cast<uint16_t>(count));
  }

  for (const Question& q : msg.questions) {
    encode_name(out, q.name);
    put_u16(out, q.qtype);
    put_u16(out, q.qclass);
  }
  for (const ResourceRecord& rr : msg.answers) encode_record(out, rr);
  for (const ResourceRecord& rr : msg.authorities) encode_record(out, rr);
  for (const ResourceRecord& rr : msg.additionals) encode_record(out, rr);
  if (msg.edns) encode_record(out, edns_to_record(*msg.edns));

  if (out.size() > kMaxMessageBytes)
    throw EncodeError(EncodeErrorKind::MessageTooLarge,
                      "message is " + std::to_string(out.size()) + " bytes");
  return out;
}

Decoded decode_message_ex(const uint8_t* data, size_t len) {
  Reader r(data, len);
  Decoded out;
  DnsMessage& msg = out.message;
  msg.header.id = r.u16();
  uint16_t flags = r.u16();
  msg.header.qr = flags & 0x8000;
  msg.header.opcode = (flags >> 11) & 0x0f;
  msg.header.aa = flags & 0x0400;
  msg.header.tc = flags & 0x0200;
  msg.header.rd = flags & 0x0100;
  msg.header.ra = flags & 0x0080;
  msg.header.rcode = flags & 0x0f;

  uint16_t qd = r.u16();
  uint16_t an = r.u16();
  uint16_t ns = r.u16();
  uint16_t ar = r.u16();

  for (uint16_t i = 0; i < qd; ++i) {
    Question q;
    q.name = r.name();
    q.qtype = r.u16();
    q.qclass = r.u16();
    msg.questions.push_back(std::move(q));
  }
  for (uint16_t i = 0; i < an; ++i) msg.answers.push_back(decode_record(r));
  for (uint16_t i = 0; i < ns; ++i) msg.authorities.push_back(decode_record(r));
  for (uint16_t i = 0; i < ar; ++i) {
    ResourceRecord rr = decode_record(r);
    if (rr.rtype == kTypeOpt && !msg.edns) {
      msg.edns = edns_from_record(rr);
    } else {
      msg.additionals.push_back(std::move(rr));
    }
  }
  out.trailing_garbage = r.remaining() > 0;
  return out;
}

DnsMessage decode_message(const uint8_t* data, size_t len) {
  return decode_message_ex(data, len).message;
}

DnsMessage decode_message(const std::vector<uint8_t>& bytes) {
  return decode_message(bytes.data(), bytes.size());
}

void rewrite_transaction_id(std::vector<uint8_t>& wire, uint16_t new_id) {
  if (wire.size() < 2)
    throw DecodeError(DecodeErrorKind::Truncated, "wire shorter than a transaction ID");
  wire[0] = static_cast<uint8_t>(new_id >> 8);
  wire[1] = static_cast<uint8_t>(new_id & 0xff);
}

uint16_t peek_transaction_id(const uint8_t* data, size_t len) {
  if (len < 2)
    throw DecodeError(DecodeErrorKind::Truncated, "wire shorter than a transaction ID");
  return static_cast<uint16_t>(data[0] << 8 | data[1]);
}

void decrement_ttls(DnsMessage& msg, uint32_t elapsed_s, uint32_t margin_s) {
  uint64_t dec = uint64_t(elapsed_s) + margin_s;
  auto apply = [&](std::vector<ResourceRecord>& rrs) {
    for (ResourceRecord& rr : rrs) rr.ttl = rr.ttl > dec ? uint32_t(rr.ttl - dec) : 0;
  };
  apply(msg.answers);
  apply(msg.authorities);
  apply(msg.additionals);
}

std::vector<size_t> ttl_offsets(const uint8_t* data, size_t len) {
  Reader r(data, len);
  std::vector<size_t> out;
  r.u16();  // id
  r.u16();  // flags
  uint16_t qd = r.u16();
  uint16_t an = r.u16();
  uint16_t ns = r.u16();
  uint16_t ar = r.u16();
  for (uint16_t i = 0; i < qd; ++i) {
    r.skip_name();
    r.u16();
    r.u16();
  }
  for (uint32_t i = 0; i < uint32_t(an) + ns + ar; ++i) {
    r.skip_name();
    uint16_t rtype = r.u16();
    r.u16();
    size_t ttl_at = r.pos();
    r.u32();
    uint16_t rdlen = r.u16();
    r.bytes(rdlen);
    if (rtype != kTypeOpt) out.push_back(ttl_at);
  }
  return out;
}

std::optional<uint32_t> soa_minimum(const std::vector<uint8_t>& rdata) {
  // MNAME and RNAME may end in a compression pointer; skipping needs no
  // resolution because a pointer terminates the name.
  size_t pos = 0;
  auto skip_name = [&]() -> bool {
    while (pos < rdata.size()) {
      uint8_t len = rdata[pos];
      if ((len & 0xc0) == 0xc0) {
        pos += 2;
        return pos <= rdata.size();
      }
      if (len == 0) {
        pos += 1;
        return true;
      }
      if ((len & 0xc0) != 0) return false;
      pos += 1 + size_t(len);
    }
    return false;
  };
  if (!skip_name() || !skip_name()) return std::nullopt;
  if (pos + 20 > rdata.size()) return std::nullopt;
  size_t min_at = pos + 16;
  uint32_t minimum = (uint32_t(rdata[min_at]) << 24) | (uint32_t(rdata[min_at + 1]) << 16) |
                     (uint32_t(rdata[min_at + 2]) << 8) | uint32_t(rdata[min_at + 3]);
  return minimum;
}

DnsMessage make_query(const DnsName& name, uint16_t qtype, uint16_t id,
                      bool recursion_desired, bool with_edns) {
  DnsMessage msg;
  msg.header.id = id;
  msg.header.rd = recursion_desired;
  msg.questions.push_back(Question{name, qtype, kClassIn});
  if (with_edns) msg.edns = Edns{};
  return msg;
}

std::vector<uint8_t> rdata_a(const std::string& ipv4) {
  in_addr a{};
  if (inet_pton(AF_INET, ipv4.c_str(), &a) != 1)
    throw std::invalid_argument("bad IPv4 address: " + ipv4);
  const uint8_t* p = reinterpret_cast<const uint8_t*>(&a.s_addr);
  return {p, p + 4};
}

std::vector<uint8_t> rdata_aaaa(const std::string& ipv6) {
  in6_addr a{};
  if (inet_pton(AF_INET6, ipv6.c_str(), &a) != 1)
    throw std::invalid_argument("bad IPv6 address: " + ipv6);
  const uint8_t* p = a.s6_addr;
  return {p, p + 16};
}

std::vector<uint8_t> rdata_txt(const std::string& text) {
  std::vector<uint8_t> out;
  size_t pos = 0;
  do {
    size_t n = std::min<size_t>(text.size() - pos, 255);
    out.push_back(static_cast<uint8_t>(n));
    out.insert(out.end(), text.begin() + pos, text.begin() + pos + n);
    pos += n;
  } while (pos < text.size());
  return out;
}

std::vector<uint8_t> rdata_name(const DnsName& name) {
  std::vector<uint8_t> out;
  encode_name(out, name);
  return out;
}

std::vector<uint8_t> rdata_soa(const DnsName& mname, const DnsName& rname,
                               uint32_t serial, uint32_t refresh, uint32_t retry,
                               uint32_t expire, uint32_t minimum) {
  std::vector<uint8_t> out;
  encode_name(out, mname);
  encode_name(out, rname);
  put_u32(out, serial);
  put_u32(out, refresh);
  put_u32(out, retry);
  put_u32(out, expire);
  put_u32(out, minimum);
  return out;
}

}  // namespace dnslab::wire
