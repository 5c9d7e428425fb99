#include <doctest.h>

#include "dnslab/rng.hpp"
#include "dnslab/wire.hpp"
#include "gen.hpp"

using namespace dnslab;
using namespace dnslab::wire;

namespace {

const std::vector<uint8_t> kQueryExampleA = {
    0x12, 0x34,              // ID
    0x01, 0x00,              // flags: RD
    0x00, 0x01,              // 1 question
    0x00, 0x00,              // 0 answers
    0x00, 0x00,              // 0 authority
    0x00, 0x01,              // 1 additional (OPT)
    0x07, 'e',  'x',  'a',  'm', 'p', 'l', 'e',
    0x03, 'c',  'o',  'm',
    0x00,                    // root
    0x00, 0x01,              // qtype A
    0x00, 0x01,              // class IN
    0x00,                    // OPT: root name
    0x00, 0x29,              // type 41
    0x10, 0x00,              // class = udp payload 4096
    0x00, 0x00, 0x00, 0x00,  // ttl = extended flags
    0x00, 0x00,              // rdlen 0
};

// response with compressed answer names: www.example.com A + parent pointer
const std::vector<uint8_t> kCompressedResponse = {
    0xbe, 0xef,              // ID
    0x81, 0x80,              // QR RD RA
    0x00, 0x01,              // 1 question
    0x00, 0x02,              // 2 answers
    0x00, 0x00,
    0x00, 0x00,
    // question, offset 12
    0x03, 'w',  'w',  'w',
    0x07, 'e',  'x',  'a',  'm', 'p', 'l', 'e',
    0x03, 'c',  'o',  'm',
    0x00,
    0x00, 0x01, 0x00, 0x01,
    // answer 1: pointer to offset 12 (www.example.com)
    0xc0, 0x0c,
    0x00, 0x01, 0x00, 0x01,
    0x00, 0x00, 0x01, 0x2c,  // ttl 300
    0x00, 0x04,
    0x5d, 0xb8, 0xd8, 0x22,
    // answer 2: pointer to offset 16 (example.com)
    0xc0, 0x10,
    0x00, 0x01, 0x00, 0x01,
    0x00, 0x00, 0x01, 0x2c,
    0x00, 0x04,
    0x01, 0x02, 0x03, 0x04,
};

}  // namespace

TEST_CASE("frozen query bytes decode and re-encode exactly") {
  DnsMessage m = decode_message(kQueryExampleA);
  CHECK(m.header.id == 0x1234);
  CHECK(m.header.rd);
  CHECK(!m.header.qr);
  REQUIRE(m.questions.size() == 1);
  CHECK(m.questions[0].name.to_string() == "example.com");
  CHECK(m.questions[0].qtype == 1);
  CHECK(m.questions[0].qclass == 1);
  REQUIRE(m.edns.has_value());
  CHECK(m.edns->udp_payload_size == 4096);
  CHECK(m.edns->options.empty());
  CHECK(m.additionals.empty());

  CHECK(encode_message(m) == kQueryExampleA);

  DnsMessage q = make_query(DnsName::from_string("example.com"), 1, 0x1234);
  CHECK(encode_message(q) == kQueryExampleA);
}

TEST_CASE("compression pointers resolve to prior names") {
  DnsMessage m = decode_message(kCompressedResponse);
  REQUIRE(m.answers.size() == 2);
  CHECK(m.answers[0].name.to_string() == "www.example.com");
  CHECK(m.answers[1].name.to_string() == "example.com");
  CHECK(m.answers[0].ttl == 300);
  CHECK(m.answers[0].rdata == rdata_a("93.184.216.34"));
  CHECK(m.answers[1].rdata == rdata_a("1.2.3.4"));
}

TEST_CASE("pointer loops and forward references are rejected") {
  auto expect_bad_pointer = [](std::vector<uint8_t> bytes) {
    try {
      decode_message(bytes);
      FAIL_CHECK("decode accepted a malicious pointer");
    } catch (const DecodeError& e) {
      CHECK(e.kind() == DecodeErrorKind::BadPointer);
    }
  };

  std::vector<uint8_t> header = {0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0};

  SUBCASE("self pointer") {
    auto bytes = header;
    bytes.insert(bytes.end(), {0xc0, 0x0c, 0x00, 0x01, 0x00, 0x01});
    expect_bad_pointer(bytes);
  }
  SUBCASE("two-pointer cycle") {
    auto bytes = header;
    // offset 12 -> 14, offset 14 -> 12
    bytes.insert(bytes.end(), {0xc0, 0x0e, 0xc0, 0x0c, 0x00, 0x01, 0x00, 0x01});
    expect_bad_pointer(bytes);
  }
  SUBCASE("forward reference") {
    auto bytes = header;
    bytes.insert(bytes.end(), {0xc0, 0x12, 0x00, 0x01, 0x00, 0x01});
    bytes.insert(bytes.end(), {0x01, 'a', 0x00});
    expect_bad_pointer(bytes);
  }
}

TEST_CASE("every truncation of a valid message fails cleanly") {
  for (size_t n = 0; n < kCompressedResponse.size(); ++n) {
    std::vector<uint8_t> prefix(kCompressedResponse.begin(), kCompressedResponse.begin() + n);
    CHECK_THROWS_AS(decode_message(prefix), DecodeError);
  }
}

TEST_CASE("random byte soup never hangs or crashes the decoder") {
  rng::Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    std::vector<uint8_t> bytes(rng.bounded(80));
    for (auto& b : bytes) b = static_cast<uint8_t>(rng.bounded(256));
    try {
      decode_message(bytes);
    } catch (const DecodeError&) {
    }
  }
}

TEST_CASE("round-trip property over generated messages") {
  rng::Rng rng(42);
  for (int i = 0; i < 2000; ++i) {
    DnsMessage m = testgen::random_message(rng);
    std::vector<uint8_t> bytes = encode_message(m);
    Decoded d = decode_message_ex(bytes.data(), bytes.size());
    CHECK(d.message == m);
    CHECK(!d.trailing_garbage);
  }
}

TEST_CASE("trailing bytes are a warning, not a failure") {
  auto bytes = kQueryExampleA;
  bytes.push_back(0xaa);
  Decoded d = decode_message_ex(bytes.data(), bytes.size());
  CHECK(d.trailing_garbage);
  CHECK(d.message.questions.size() == 1);
}

TEST_CASE("encode limits") {
  SUBCASE("label longer than 63") {
    DnsMessage m;
    m.questions.push_back(Question{DnsName({std::string(64, 'a')}), 1, 1});
    try {
      encode_message(m);
      FAIL_CHECK("expected LabelTooLong");
    } catch (const EncodeError& e) {
      CHECK(e.kind() == EncodeErrorKind::LabelTooLong);
    }
  }
  SUBCASE("name longer than 255") {
    std::vector<std::string> labels(5, std::string(50, 'b'));
    DnsMessage m;
    m.questions.push_back(Question{DnsName(labels), 1, 1});
    try {
      encode_message(m);
      FAIL_CHECK("expected NameTooLong");
    } catch (const EncodeError& e) {
      CHECK(e.kind() == EncodeErrorKind::NameTooLong);
    }
  }
  SUBCASE("message larger than 65535") {
    DnsMessage m;
    for (int i = 0; i < 3; ++i) {
      ResourceRecord rr;
      rr.name = DnsName::from_string("big.example");
      rr.rtype = 16;
      rr.rdata.assign(30000, 0x55);
      m.answers.push_back(rr);
    }
    try {
      encode_message(m);
      FAIL_CHECK("expected MessageTooLarge");
    } catch (const EncodeError& e) {
      CHECK(e.kind() == EncodeErrorKind::MessageTooLarge);
    }
  }
}

TEST_CASE("rewrite_transaction_id touches exactly two bytes") {
  rng::Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    DnsMessage m = testgen::random_message(rng);
    std::vector<uint8_t> bytes = encode_message(m);
    std::vector<uint8_t> patched = bytes;
    uint16_t new_id = static_cast<uint16_t>(rng.bounded(65536));
    rewrite_transaction_id(patched, new_id);
    CHECK(peek_transaction_id(patched.data(), patched.size()) == new_id);
    REQUIRE(patched.size() == bytes.size());
    for (size_t j = 2; j < bytes.size(); ++j) {
      if (patched[j] != bytes[j]) {
        FAIL_CHECK("byte " << j << " changed");
        break;
      }
    }
  }
  std::vector<uint8_t> tiny = {0x01};
  CHECK_THROWS_AS(rewrite_transaction_id(tiny, 7), DecodeError);
}

TEST_CASE("decrement_ttls saturates and skips EDNS") {
  DnsMessage m;
  ResourceRecord rr;
  rr.ttl = 300;
  m.answers.push_back(rr);
  rr.ttl = 5;
  m.authorities.push_back(rr);
  m.edns = Edns{};
  m.edns->ext_rcode_flags = 0x12345678;

  decrement_ttls(m, 280, 30);
  CHECK(m.answers[0].ttl == 0);  // 300 - 310 saturates
  CHECK(m.authorities[0].ttl == 0);
  CHECK(m.edns->ext_rcode_flags == 0x12345678);

  m.answers[0].ttl = 300;
  decrement_ttls(m, 100, 2);
  CHECK(m.answers[0].ttl == 198);
}

TEST_CASE("ttl_offsets lets callers patch wire bytes in place") {
  rng::Rng rng(1234);
  for (int i = 0; i < 200; ++i) {
    DnsMessage m = testgen::random_message(rng);
    std::vector<uint8_t> bytes = encode_message(m);
    std::vector<size_t> offsets = ttl_offsets(bytes);
    size_t records = m.answers.size() + m.authorities.size() + m.additionals.size();
    REQUIRE(offsets.size() == records);
    for (size_t at : offsets) {
      bytes[at] = 0x00;
      bytes[at + 1] = 0x00;
      bytes[at + 2] = 0x00;
      bytes[at + 3] = 0x2a;
    }
    DnsMessage patched = decode_message(bytes);
    for (const auto& rr : patched.answers) CHECK(rr.ttl == 42);
    for (const auto& rr : patched.authorities) CHECK(rr.ttl == 42);
    for (const auto& rr : patched.additionals) CHECK(rr.ttl == 42);
    // nothing else moved
    DnsMessage zeroed = patched;
    DnsMessage orig = m;
    auto clear = [](DnsMessage& x) {
      for (auto* sec : {&x.answers, &x.authorities, &x.additionals})
        for (auto& rr : *sec) rr.ttl = 0;
    };
    clear(zeroed);
    clear(orig);
    CHECK(zeroed == orig);
  }
}

TEST_CASE("ttl_offsets on a compressed response") {
  auto bytes = kCompressedResponse;
  auto offsets = ttl_offsets(bytes);
  REQUIRE(offsets.size() == 2);
  for (size_t at : offsets) {
    bytes[at + 3] = 0x2b;  // 300 -> 299
  }
  DnsMessage m = decode_message(bytes);
  CHECK(m.answers[0].ttl == 299);
  CHECK(m.answers[1].ttl == 299);
}

TEST_CASE("soa_minimum reads the minimum field") {
  auto rdata = rdata_soa(DnsName::from_string("ns1.example.com"),
                         DnsName::from_string("hostmaster.example.com"), 2024010101, 7200,
                         900, 1209600, 3600);
  CHECK(soa_minimum(rdata) == 3600u);

  // compression-pointer MNAME, as upstream servers emit
  std::vector<uint8_t> compressed = {0xc0, 0x0c, 0x00};
  for (uint32_t v : {1u, 2u, 3u, 4u, 60u}) {
    compressed.push_back(0);
    compressed.push_back(0);
    compressed.push_back(static_cast<uint8_t>(v >> 8));
    compressed.push_back(static_cast<uint8_t>(v & 0xff));
  }
  CHECK(soa_minimum(compressed) == 60u);

  CHECK(!soa_minimum({0x01}).has_value());
}

TEST_CASE("multi-question messages round-trip") {
  DnsMessage m;
  m.header.id = 77;
  for (const char* n : {"a.test", "b.test", "c.test"})
    m.questions.push_back(Question{DnsName::from_string(n), 1, 1});
  auto bytes = encode_message(m);
  DnsMessage back = decode_message(bytes);
  CHECK(back == m);
  CHECK(back.questions.size() == 3);
}

TEST_CASE("DnsName semantics") {
  CHECK(DnsName::from_string("example.com").to_string() == "example.com");
  CHECK(DnsName::from_string(".").to_string() == ".");
  CHECK(DnsName::from_string("").empty());
  CHECK(DnsName::from_string("a.b.").labels().size() == 2);
  CHECK(DnsName::from_string("Example.COM").equals_ci(DnsName::from_string("exAmple.com")));
  CHECK(DnsName::from_string("Example.COM") != DnsName::from_string("example.com"));
  CHECK(DnsName::from_string("Example.COM").lowered_string() == "example.com");
  CHECK(DnsName::from_string("example.com").wire_length() == 13);
  CHECK(DnsName().wire_length() == 1);

  CHECK(qtype_from_string("aaaa") == 28);
  CHECK(qtype_from_string("257") == 257);
  CHECK(qtype_to_string(28) == "AAAA");
  CHECK_THROWS(qtype_from_string("bogus"));
}

TEST_CASE("edns options survive the trip, unknown codes included") {
  DnsMessage m;
  Edns e;
  e.udp_payload_size = 1232;
  e.options.push_back(EdnsOption{kEdnsOptionEcs, {0x00, 0x01, 0x18, 0x00, 0xc0, 0xa8, 0x01}});
  e.options.push_back(EdnsOption{65001, {0x00}});
  m.edns = e;
  auto bytes = encode_message(m);
  DnsMessage back = decode_message(bytes);
  REQUIRE(back.edns.has_value());
  CHECK(back.edns->udp_payload_size == 1232);
  REQUIRE(back.edns->options.size() == 2);
  CHECK(back.edns->options[0].code == kEdnsOptionEcs);
  CHECK(back.edns->options[1].code == 65001);
  CHECK(back.find_option(65001) != nullptr);
  CHECK(back.find_option(12) == nullptr);
}
