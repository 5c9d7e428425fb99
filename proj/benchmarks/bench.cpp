#include <benchmark/benchmark.h>

#include "dnslab/wire.hpp"

using namespace dnslab;

static void BM_EncodeQuery(benchmark::State& state) {
  auto q = wire::make_query(wire::DnsName::from_string("www.example.com"), 1, 0x1234);
  for (auto _ : state) {
    benchmark::DoNotOptimize(wire::encode_message(q));
  }
}
BENCHMARK(BM_EncodeQuery);

static void BM_DecodeQuery(benchmark::State& state) {
  auto bytes =
      wire::encode_message(wire::make_query(wire::DnsName::from_string("www.example.com"), 1, 1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(wire::decode_message(bytes));
  }
}
BENCHMARK(BM_DecodeQuery);

BENCHMARK_MAIN();
