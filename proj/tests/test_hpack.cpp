#include <doctest.h>

#include <string>
#include <vector>

#include "dnslab/net/hpack.hpp"
#include "dnslab/rng.hpp"

using namespace dnslab;
using net::hpack::Header;
using rng::Rng;

namespace {

std::vector<uint8_t> unhex(const std::string& h) {
  std::vector<uint8_t> out;
  for (size_t i = 0; i + 1 < h.size(); i += 2)
    out.push_back(uint8_t(std::stoul(h.substr(i, 2), nullptr, 16)));
  return out;
}

std::string hex(const std::vector<uint8_t>& v) {
  static const char* d = "0123456789abcdef";
  std::string s;
  for (uint8_t b : v) {
    s += d[b >> 4];
    s += d[b & 15];
  }
  return s;
}

std::vector<Header> decode_hex(net::hpack::Decoder& dec, const std::string& h) {
  auto bytes = unhex(h);
  return dec.decode(bytes.data(), bytes.size());
}

}  // namespace

TEST_CASE("prefix integers match the worked examples") {
  std::vector<uint8_t> out;
  net::hpack::encode_integer(10, 5, 0, out);
  CHECK(hex(out) == "0a");

  out.clear();
  net::hpack::encode_integer(1337, 5, 0, out);
  CHECK(hex(out) == "1f9a0a");

  out.clear();
  net::hpack::encode_integer(42, 8, 0, out);
  CHECK(hex(out) == "2a");

  // flags live in the bits above the prefix
  out.clear();
  net::hpack::encode_integer(3, 6, 0x40, out);
  CHECK(hex(out) == "43");
}

TEST_CASE("prefix integers round trip across sizes") {
  Rng rng(41);
  for (int trial = 0; trial < 4000; ++trial) {
    int prefix = int(rng.bounded(8)) + 1;
    uint64_t v = rng.bounded(trial % 3 == 0 ? 1u << 30 : 300u);
    std::vector<uint8_t> buf;
    net::hpack::encode_integer(v, prefix, 0, buf);
    const uint8_t* p = buf.data();
    CHECK(net::hpack::decode_integer(p, buf.data() + buf.size(), prefix) == v);
    CHECK(p == buf.data() + buf.size());
  }
}

TEST_CASE("integer decode rejects truncation and runaway continuations") {
  auto buf = unhex("1f9a");  // continuation byte missing
  const uint8_t* p = buf.data();
  CHECK_THROWS_AS(net::hpack::decode_integer(p, buf.data() + buf.size(), 5),
                  net::hpack::HpackError);

  auto big = unhex("1fffffffffffffffffffff00");  // grossly out of range
  p = big.data();
  CHECK_THROWS_AS(net::hpack::decode_integer(p, big.data() + big.size(), 5),
                  net::hpack::HpackError);
}

TEST_CASE("huffman coding matches the published strings") {
  auto enc = [](const char* s) { return hex(net::hpack::huffman_encode(s)); };
  CHECK(enc("www.example.com") == "f1e3c2e5f23a6ba0ab90f4ff");
  CHECK(enc("no-cache") == "a8eb10649cbf");
  CHECK(enc("custom-key") == "25a849e95ba97d7f");
  CHECK(enc("custom-value") == "25a849e95bb8e8b4bf");
  CHECK(enc("private") == "aec3771a4b");
  CHECK(enc("Mon, 21 Oct 2013 20:13:21 GMT") ==
        "d07abe941054d444a8200595040b8166e082a62d1bff");
  CHECK(enc("Mon, 21 Oct 2013 20:13:22 GMT") ==
        "d07abe941054d444a8200595040b8166e084a62d1bff");
  CHECK(enc("https://www.example.com") == "9d29ad171863c78f0b97c8e9ae82ae43d3");
  CHECK(enc("302") == "6402");
  CHECK(enc("307") == "640eff");
  CHECK(enc("gzip") == "9bd9ab");
  CHECK(enc("foo=ASDJKHQKBZXOQWEOPIUAXQWEOIU; max-age=3600; version=1") ==
        "94e7821dd7f2e6c7b335dfdfcd5b3960d5af27087f3672c1ab270fb5291f9587316065"
        "c003ed4ee5b1063d5007");
}

TEST_CASE("huffman survives every octet and random strings") {
  std::string all;
  for (int i = 0; i < 256; ++i) all.push_back(char(i));
  auto coded = net::hpack::huffman_encode(all);
  CHECK(net::hpack::huffman_decode(coded.data(), coded.size()) == all);

  Rng rng(202608);
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    size_t len = rng.bounded(200);
    for (size_t i = 0; i < len; ++i) s.push_back(char(rng.bounded(256)));
    auto c = net::hpack::huffman_encode(s);
    CHECK(net::hpack::huffman_decode(c.data(), c.size()) == s);
    // a full byte of ones after a symbol boundary is over-long padding
    auto bad = c;
    bad.push_back(0xff);
    CHECK_THROWS_AS(net::hpack::huffman_decode(bad.data(), bad.size()),
                    net::hpack::HpackError);
  }
}

TEST_CASE("huffman rejects the EOS symbol and broken padding") {
  auto eos = unhex("fffffffc");  // 30 bits of EOS plus ones padding
  CHECK_THROWS_AS(net::hpack::huffman_decode(eos.data(), eos.size()),
                  net::hpack::HpackError);

  // '0' is the five-bit code 00000; padding with zeros is illegal
  auto zero_pad = unhex("0000");
  CHECK_THROWS_AS(net::hpack::huffman_decode(zero_pad.data(), zero_pad.size()),
                  net::hpack::HpackError);
}

TEST_CASE("literal field examples decode as written") {
  {
    net::hpack::Decoder dec;
    auto h = decode_hex(dec,
                        "400a637573746f6d2d6b65790d637573746f6d2d686561646572");
    REQUIRE(h.size() == 1);
    CHECK(h[0] == Header{"custom-key", "custom-header"});
    CHECK(dec.table_size() == 55);
  }
  {
    net::hpack::Decoder dec;
    auto h = decode_hex(dec, "040c2f73616d706c652f70617468");
    REQUIRE(h.size() == 1);
    CHECK(h[0] == Header{":path", "/sample/path"});
    CHECK(dec.table_size() == 0);
  }
  {
    net::hpack::Decoder dec;
    auto h = decode_hex(dec, "100870617373776f726406736563726574");
    REQUIRE(h.size() == 1);
    CHECK(h[0] == Header{"password", "secret"});
    CHECK(dec.table_size() == 0);
  }
  {
    net::hpack::Decoder dec;
    auto h = decode_hex(dec, "82");
    REQUIRE(h.size() == 1);
    CHECK(h[0] == Header{":method", "GET"});
    CHECK(dec.table_size() == 0);
  }
}

TEST_CASE("request blocks decode in sequence, plain strings") {
  net::hpack::Decoder dec;

  auto r1 = decode_hex(dec, "828684410f7777772e6578616d706c652e636f6d");
  CHECK(r1 == std::vector<Header>{{":method", "GET"},
                                  {":scheme", "http"},
                                  {":path", "/"},
                                  {":authority", "www.example.com"}});
  CHECK(dec.table_size() == 57);

  auto r2 = decode_hex(dec, "828684be58086e6f2d6361636865");
  CHECK(r2 == std::vector<Header>{{":method", "GET"},
                                  {":scheme", "http"},
                                  {":path", "/"},
                                  {":authority", "www.example.com"},
                                  {"cache-control", "no-cache"}});
  CHECK(dec.table_size() == 110);

  auto r3 = decode_hex(
      dec, "828785bf400a637573746f6d2d6b65790c637573746f6d2d76616c7565");
  CHECK(r3 == std::vector<Header>{{":method", "GET"},
                                  {":scheme", "https"},
                                  {":path", "/index.html"},
                                  {":authority", "www.example.com"},
                                  {"custom-key", "custom-value"}});
  CHECK(dec.table_size() == 164);
}

TEST_CASE("request blocks decode and re-encode, huffman strings") {
  const std::string b1 = "828684418cf1e3c2e5f23a6ba0ab90f4ff";
  const std::string b2 = "828684be5886a8eb10649cbf";
  const std::string b3 = "828785bf408825a849e95ba97d7f8925a849e95bb8e8b4bf";

  net::hpack::Decoder dec;
  auto r1 = decode_hex(dec, b1);
  CHECK(r1[3] == Header{":authority", "www.example.com"});
  CHECK(dec.table_size() == 57);
  auto r2 = decode_hex(dec, b2);
  CHECK(r2[4] == Header{"cache-control", "no-cache"});
  CHECK(dec.table_size() == 110);
  auto r3 = decode_hex(dec, b3);
  CHECK(r3[4] == Header{"custom-key", "custom-value"});
  CHECK(dec.table_size() == 164);

  // the encoder's choices (indexing, name reuse, huffman) land on the same bytes
  net::hpack::Encoder enc;
  CHECK(hex(enc.encode(r1)) == b1);
  CHECK(enc.table_size() == 57);
  CHECK(hex(enc.encode(r2)) == b2);
  CHECK(enc.table_size() == 110);
  CHECK(hex(enc.encode(r3)) == b3);
  CHECK(enc.table_size() == 164);
}

TEST_CASE("response blocks decode and re-encode with eviction") {
  const std::string b1 =
      "4803333032580770726976617465611d4d6f6e2c203231204f637420323031332032303a"
      "31333a323120474d546e1768747470733a2f2f7777772e6578616d706c652e636f6d";
  const std::string b2 = "4803333037c1c0bf";
  const std::string b3 =
      "88c1611d4d6f6e2c203231204f637420323031332032303a31333a323220474d54c05a04"
      "677a69707738666f6f3d4153444a4b48514b425a584f5157454f50495541585157454f49"
      "553b206d61782d6167653d333630303b2076657273696f6e3d31";

  net::hpack::Decoder dec(256);
  auto r1 = decode_hex(dec, b1);
  CHECK(r1 == std::vector<Header>{{":status", "302"},
                                  {"cache-control", "private"},
                                  {"date", "Mon, 21 Oct 2013 20:13:21 GMT"},
                                  {"location", "https://www.example.com"}});
  CHECK(dec.table_size() == 222);

  auto r2 = decode_hex(dec, b2);
  CHECK(r2 == std::vector<Header>{{":status", "307"},
                                  {"cache-control", "private"},
                                  {"date", "Mon, 21 Oct 2013 20:13:21 GMT"},
                                  {"location", "https://www.example.com"}});
  CHECK(dec.table_size() == 222);  // :status 302 evicted to admit 307

  auto r3 = decode_hex(dec, b3);
  CHECK(r3 == std::vector<Header>{
                  {":status", "200"},
                  {"cache-control", "private"},
                  {"date", "Mon, 21 Oct 2013 20:13:22 GMT"},
                  {"location", "https://www.example.com"},
                  {"content-encoding", "gzip"},
                  {"set-cookie",
                   "foo=ASDJKHQKBZXOQWEOPIUAXQWEOIU; max-age=3600; version=1"}});
  CHECK(dec.table_size() == 215);

  net::hpack::Encoder enc(256);
  auto huff1 =
      "488264025885aec3771a4b6196d07abe941054d444a8200595040b8166e082a62d1bff6e"
      "919d29ad171863c78f0b97c8e9ae82ae43d3";
  auto huff2 = "4883640effc1c0bf";
  auto huff3 =
      "88c16196d07abe941054d444a8200595040b8166e084a62d1bffc05a839bd9ab77ad94e7"
      "821dd7f2e6c7b335dfdfcd5b3960d5af27087f3672c1ab270fb5291f9587316065c003ed"
      "4ee5b1063d5007";
  CHECK(hex(enc.encode(r1)) == huff1);
  CHECK(enc.table_size() == 222);
  CHECK(hex(enc.encode(r2)) == huff2);
  CHECK(enc.table_size() == 222);
  CHECK(hex(enc.encode(r3)) == huff3);
  CHECK(enc.table_size() == 215);

  // and the huffman blocks decode to the same header lists
  net::hpack::Decoder hdec(256);
  CHECK(decode_hex(hdec, huff1) == r1);
  CHECK(decode_hex(hdec, huff2) == r2);
  CHECK(decode_hex(hdec, huff3) == r3);
  CHECK(hdec.table_size() == 215);
}

TEST_CASE("random header blocks round trip through one shared table pair") {
  Rng rng(77);
  net::hpack::Encoder enc;
  net::hpack::Decoder dec;
  std::vector<std::string> names = {":status", "content-type", "x-lab-tag",
                                    "set-cookie", "etag", "via", "x-padding"};
  for (int block = 0; block < 60; ++block) {
    std::vector<Header> in;
    size_t n = 1 + rng.bounded(8);
    for (size_t i = 0; i < n; ++i) {
      std::string name = names[rng.bounded(names.size())];
      std::string value;
      size_t vlen = rng.bounded(40);
      for (size_t j = 0; j < vlen; ++j) value.push_back(char(rng.bounded(256)));
      in.emplace_back(name, value);
    }
    auto bytes = enc.encode(in);
    auto out = dec.decode(bytes.data(), bytes.size());
    REQUIRE(out == in);
    REQUIRE(dec.table_size() == enc.table_size());
  }
}

TEST_CASE("oversized entries flush the table instead of wedging it") {
  net::hpack::Encoder enc(64);
  net::hpack::Decoder dec(64);

  std::vector<Header> small = {{"etag", "abc"}};  // 4+3+32 = 39, fits
  auto b = enc.encode(small);
  CHECK(dec.decode(b.data(), b.size()) == small);
  CHECK(dec.table_size() == 39);

  std::vector<Header> big = {{"x-giant", std::string(100, 'v')}};
  b = enc.encode(big);
  CHECK(dec.decode(b.data(), b.size()) == big);
  CHECK(dec.table_size() == 0);  // too large to admit: table emptied
  CHECK(enc.table_size() == 0);

  b = enc.encode(small);
  CHECK(dec.decode(b.data(), b.size()) == small);
  CHECK(dec.table_size() == 39);
}

TEST_CASE("table resize is announced and enforced") {
  net::hpack::Encoder enc;
  net::hpack::Decoder dec;

  std::vector<Header> hs = {{"x-one", "1"}, {"x-two", "2"}, {"x-three", "3"}};
  auto b = enc.encode(hs);
  dec.decode(b.data(), b.size());
  CHECK(dec.table_size() > 38 * 2);

  enc.resize_table(39);  // room for exactly one small entry (6 + 1 + 32)
  b = enc.encode({{"x-four", "4"}});
  CHECK((b[0] & 0xe0) == 0x20);  // leading size-update instruction
  auto out = dec.decode(b.data(), b.size());
  CHECK(out == std::vector<Header>{{"x-four", "4"}});
  CHECK(dec.table_size() == 39);
  CHECK(enc.table_size() == 39);

  // a peer announcing more than our cap is a protocol error
  net::hpack::Decoder capped(256);
  std::vector<uint8_t> update;
  net::hpack::encode_integer(4096, 5, 0x20, update);
  CHECK_THROWS_AS(capped.decode(update.data(), update.size()),
                  net::hpack::HpackError);

  // and updates may only appear before the first field of a block
  std::vector<uint8_t> late = {0x82};
  net::hpack::encode_integer(128, 5, 0x20, late);
  net::hpack::Decoder strict;
  CHECK_THROWS_AS(strict.decode(late.data(), late.size()),
                  net::hpack::HpackError);
}

TEST_CASE("malformed blocks are refused") {
  net::hpack::Decoder dec;
  auto expect_throw = [&](const std::string& h) {
    auto b = unhex(h);
    net::hpack::Decoder fresh;
    CHECK_THROWS_AS(fresh.decode(b.data(), b.size()), net::hpack::HpackError);
  };
  expect_throw("80");      // indexed field, index zero
  expect_throw("bf");      // index 63: dynamic table is empty
  expect_throw("ff21");    // huge index, nothing there
  expect_throw("4005abc"); // literal name length runs past the block
  expect_throw("410b");    // value string truncated
}
