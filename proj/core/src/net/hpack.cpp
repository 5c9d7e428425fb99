#include "dnslab/net/hpack.hpp"

#include <array>
#include <mutex>

namespace dnslab::net::hpack {

namespace {

struct HuffCode {
  uint32_t code;
  uint8_t bits;
};

// canonical HTTP/2 Huffman code, symbols 0..255 plus EOS
constexpr HuffCode kHuff[257] = {
#include "hpack_hufftable.inc"
};

constexpr std::pair<const char*, const char*> kStatic[62] = {
    {"", ""},  // index 0 is not a thing
    {":authority", ""},
    {":method", "GET"},
    {":method", "POST"},
    {":path", "/"},
    {":path", "/index.html"},
    {":scheme", "http"},
    {":scheme", "https"},
    {":status", "200"},
    {":status", "204"},
    {":status", "206"},
    {":status", "304"},
    {":status", "400"},
    {":status", "404"},
    {":status", "500"},
    {"accept-charset", ""},
    {"accept-encoding", "gzip, deflate"},
    {"accept-language", ""},
    {"accept-ranges", ""},
    {"accept", ""},
    {"access-control-allow-origin", ""},
    {"age", ""},
    {"allow", ""},
    {"authorization", ""},
    {"cache-control", ""},
    {"content-disposition", ""},
    {"content-encoding", ""},
    {"content-language", ""},
    {"content-length", ""},
    {"content-location", ""},
    {"content-range", ""},
    {"content-type", ""},
    {"cookie", ""},
    {"date", ""},
    {"etag", ""},
    {"expect", ""},
    {"expires", ""},
    {"from", ""},
    {"host", ""},
    {"if-match", ""},
    {"if-modified-since", ""},
    {"if-none-match", ""},
    {"if-range", ""},
    {"if-unmodified-since", ""},
    {"last-modified", ""},
    {"link", ""},
    {"location", ""},
    {"max-forwards", ""},
    {"proxy-authenticate", ""},
    {"proxy-authorization", ""},
    {"range", ""},
    {"referer", ""},
    {"refresh", ""},
    {"retry-after", ""},
    {"server", ""},
    {"set-cookie", ""},
    {"strict-transport-security", ""},
    {"transfer-encoding", ""},
    {"user-agent", ""},
    {"vary", ""},
    {"via", ""},
    {"www-authenticate", ""},
};
constexpr size_t kStaticCount = 61;

size_t entry_cost(const Header& h) { return h.first.size() + h.second.size() + 32; }

// binary decode tree, built once from the code table
struct HuffNode {
  int sym = -1;
  int kid[2] = {-1, -1};
};

const std::vector<HuffNode>& huff_tree() {
  static const std::vector<HuffNode> tree = [] {
    std::vector<HuffNode> t(1);
    for (int s = 0; s < 257; ++s) {
      int cur = 0;
      for (int b = kHuff[s].bits - 1; b >= 0; --b) {
        int bit = (kHuff[s].code >> b) & 1;
        if (t[size_t(cur)].kid[bit] < 0) {
          t[size_t(cur)].kid[bit] = int(t.size());
          t.emplace_back();
        }
        cur = t[size_t(cur)].kid[bit];
      }
      t[size_t(cur)].sym = s;
    }
    return t;
  }();
  return tree;
}

}  // namespace

void encode_integer(uint64_t value, int prefix_bits, uint8_t flags,
                    std::vector<uint8_t>& out) {
  uint64_t cap = (uint64_t(1) << prefix_bits) - 1;
  if (value < cap) {
    out.push_back(flags | uint8_t(value));
    return;
  }
  out.push_back(flags | uint8_t(cap));
  value -= cap;
  while (value >= 128) {
    out.push_back(uint8_t(value % 128 + 128));
    value /= 128;
  }
  out.push_back(uint8_t(value));
}

uint64_t decode_integer(const uint8_t*& p, const uint8_t* end, int prefix_bits) {
  if (p >= end) throw HpackError("integer: empty input");
  uint64_t cap = (uint64_t(1) << prefix_bits) - 1;
  uint64_t v = *p++ & cap;
  if (v < cap) return v;
  int shift = 0;
  for (;;) {
    if (p >= end) throw HpackError("integer: truncated continuation");
    uint8_t b = *p++;
    if (shift > 28) throw HpackError("integer: value out of range");
    v += uint64_t(b & 0x7f) << shift;
    shift += 7;
    if (!(b & 0x80)) return v;
  }
}

std::vector<uint8_t> huffman_encode(const std::string& s) {
  std::vector<uint8_t> out;
  uint64_t acc = 0;
  int nbits = 0;
  for (unsigned char c : s) {
    acc = (acc << kHuff[c].bits) | kHuff[c].code;
    nbits += kHuff[c].bits;
    while (nbits >= 8) {
      nbits -= 8;
      out.push_back(uint8_t(acc >> nbits));
    }
  }
  if (nbits > 0) {
    int pad = 8 - nbits;
    acc = (acc << pad) | ((uint64_t(1) << pad) - 1);  // EOS prefix padding
    out.push_back(uint8_t(acc));
  }
  return out;
}

std::string huffman_decode(const uint8_t* data, size_t len) {
  const auto& tree = huff_tree();
  std::string out;
  int cur = 0;
  int path_bits = 0;     // bits consumed since the last completed symbol
  bool path_ones = true; // whether those bits were all ones (legal padding)
  for (size_t i = 0; i < len; ++i) {
    for (int b = 7; b >= 0; --b) {
      int bit = (data[i] >> b) & 1;
      cur = tree[size_t(cur)].kid[bit];
      if (cur < 0) throw HpackError("huffman: invalid code");
      ++path_bits;
      path_ones = path_ones && bit == 1;
      int sym = tree[size_t(cur)].sym;
      if (sym >= 0) {
        if (sym == 256) throw HpackError("huffman: EOS in stream");
        out.push_back(char(sym));
        cur = 0;
        path_bits = 0;
        path_ones = true;
      }
    }
  }
  if (path_bits > 7 || !path_ones) throw HpackError("huffman: bad padding");
  return out;
}

void DynamicTable::set_max(size_t n) {
  max_ = n;
  evict();
}

void DynamicTable::add(Header h) {
  size_t cost = entry_cost(h);
  if (cost > max_) {  // cannot fit even alone: empty the table, drop the entry
    entries_.clear();
    size_ = 0;
    return;
  }
  size_ += cost;
  entries_.push_front(std::move(h));
  evict();
}

void DynamicTable::evict() {
  while (size_ > max_ && !entries_.empty()) {
    size_ -= entry_cost(entries_.back());
    entries_.pop_back();
  }
}

Encoder::Encoder(size_t max_table_size) { table_.set_max(max_table_size); }

void Encoder::resize_table(size_t n) {
  table_.set_max(n);
  pending_resize_ = true;
  pending_resize_to_ = n;
}

void Encoder::encode_string(const std::string& s, std::vector<uint8_t>& out) {
  auto huff = huffman_encode(s);
  if (huff.size() <= s.size()) {
    encode_integer(huff.size(), 7, 0x80, out);
    out.insert(out.end(), huff.begin(), huff.end());
  } else {
    encode_integer(s.size(), 7, 0x00, out);
    out.insert(out.end(), s.begin(), s.end());
  }
}

std::vector<uint8_t> Encoder::encode(const std::vector<Header>& headers) {
  std::vector<uint8_t> out;
  if (pending_resize_) {
    encode_integer(pending_resize_to_, 5, 0x20, out);
    pending_resize_ = false;
  }
  for (const auto& h : headers) {
    size_t full = 0, name_only = 0;
    for (size_t i = 1; i <= kStaticCount && full == 0; ++i) {
      if (h.first == kStatic[i].first) {
        if (name_only == 0) name_only = i;
        if (h.second == kStatic[i].second) full = i;
      }
    }
    for (size_t i = 0; i < table_.count() && full == 0; ++i) {
      const auto& e = table_.at(i);
      if (e.first == h.first) {
        if (name_only == 0) name_only = kStaticCount + 1 + i;
        if (e.second == h.second) full = kStaticCount + 1 + i;
      }
    }
    if (full != 0) {
      encode_integer(full, 7, 0x80, out);
      continue;
    }
    encode_integer(name_only, 6, 0x40, out);  // literal, incremental indexing
    if (name_only == 0) encode_string(h.first, out);
    encode_string(h.second, out);
    table_.add(h);
  }
  return out;
}

Decoder::Decoder(size_t max_table_size) : cap_(max_table_size) {
  table_.set_max(max_table_size);
}

std::string Decoder::read_string(const uint8_t*& p, const uint8_t* end) {
  if (p >= end) throw HpackError("string: empty input");
  bool huff = (*p & 0x80) != 0;
  uint64_t len = decode_integer(p, end, 7);
  if (len > size_t(end - p)) throw HpackError("string: length past end of block");
  std::string s;
  if (huff)
    s = huffman_decode(p, size_t(len));
  else
    s.assign(reinterpret_cast<const char*>(p), size_t(len));
  p += len;
  return s;
}

Header Decoder::indexed(uint64_t idx) const {
  if (idx == 0) throw HpackError("field index zero");
  if (idx <= kStaticCount)
    return {kStatic[idx].first, kStatic[idx].second};
  size_t di = size_t(idx) - kStaticCount - 1;
  if (di >= table_.count()) throw HpackError("field index beyond table");
  return table_.at(di);
}

std::vector<Header> Decoder::decode(const uint8_t* data, size_t len) {
  const uint8_t* p = data;
  const uint8_t* end = data + len;
  std::vector<Header> out;
  bool seen_field = false;
  while (p < end) {
    uint8_t b = *p;
    if (b & 0x80) {  // indexed field
      out.push_back(indexed(decode_integer(p, end, 7)));
      seen_field = true;
    } else if ((b & 0xc0) == 0x40) {  // literal, add to table
      uint64_t idx = decode_integer(p, end, 6);
      std::string name = idx ? indexed(idx).first : read_string(p, end);
      std::string value = read_string(p, end);
      out.emplace_back(name, value);
      table_.add(out.back());
      seen_field = true;
    } else if ((b & 0xe0) == 0x20) {  // table size update
      if (seen_field)
        throw HpackError("size update after a header field");
      uint64_t n = decode_integer(p, end, 5);
      if (n > cap_) throw HpackError("size update above the advertised cap");
      table_.set_max(size_t(n));
    } else {  // literal without indexing (0000) or never indexed (0001)
      uint64_t idx = decode_integer(p, end, 4);
      std::string name = idx ? indexed(idx).first : read_string(p, end);
      std::string value = read_string(p, end);
      out.emplace_back(std::move(name), std::move(value));
      seen_field = true;
    }
  }
  return out;
}

}  // namespace dnslab::net::hpack
