#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dnslab::net::hpack {

struct HpackError : std::runtime_error {
  explicit HpackError(const std::string& what) : std::runtime_error(what) {}
};

using Header = std::pair<std::string, std::string>;

// Primitive integer coding (N-bit prefix). Exposed for tests.
void encode_integer(uint64_t value, int prefix_bits, uint8_t flags,
                    std::vector<uint8_t>& out);
uint64_t decode_integer(const uint8_t*& p, const uint8_t* end, int prefix_bits);

std::vector<uint8_t> huffman_encode(const std::string& s);
std::string huffman_decode(const uint8_t* data, size_t len);

// Shared FIFO table; entry cost is name + value + 32 octets.
class DynamicTable {
 public:
  void set_max(size_t n);
  size_t max() const { return max_; }
  size_t size() const { return size_; }
  size_t count() const { return entries_.size(); }
  const Header& at(size_t i) const { return entries_[i]; }  // 0 = newest
  void add(Header h);

 private:
  void evict();
  std::deque<Header> entries_;
  size_t size_ = 0;
  size_t max_ = 4096;
};

class Encoder {
 public:
  explicit Encoder(size_t max_table_size = 4096);
  std::vector<uint8_t> encode(const std::vector<Header>& headers);
  // Shrinks/grows the table and announces it at the start of the next block.
  void resize_table(size_t n);
  size_t table_size() const { return table_.size(); }

 private:
  void encode_string(const std::string& s, std::vector<uint8_t>& out);
  DynamicTable table_;
  bool pending_resize_ = false;
  size_t pending_resize_to_ = 0;
};

class Decoder {
 public:
  // cap = the largest table size we allow the peer to announce
  explicit Decoder(size_t max_table_size = 4096);
  std::vector<Header> decode(const uint8_t* data, size_t len);
  size_t table_size() const { return table_.size(); }

 private:
  std::string read_string(const uint8_t*& p, const uint8_t* end);
  Header indexed(uint64_t idx) const;
  DynamicTable table_;
  size_t cap_;
};

}  // namespace dnslab::net::hpack
