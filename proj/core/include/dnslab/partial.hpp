#pragma once

// EDNS option for opportunistic partial responses to multi-question queries.
// Each partial is a complete DNS message sharing the query's ID; the option
// value is a single role byte. The code lives in the local/experimental
// range and stays configurable.

#include <cstdint>
#include <optional>

#include "dnslab/wire.hpp"

namespace dnslab::partial {

constexpr uint16_t kDefaultOptionCode = 65001;

enum class Role : uint8_t {
  ClientOffer = 0,
  ServerAck = 1,
  MoreComing = 2,
  Final = 3,
};

inline void attach(wire::DnsMessage& msg, uint16_t option_code, Role role) {
  if (!msg.edns) msg.edns.emplace();
  auto& opts = msg.edns->options;
  std::erase_if(opts, [&](const wire::EdnsOption& o) { return o.code == option_code; });
  opts.push_back({option_code, {static_cast<uint8_t>(role)}});
}

inline std::optional<Role> find_role(const wire::DnsMessage& msg, uint16_t option_code) {
  const wire::EdnsOption* opt = msg.find_option(option_code);
  if (!opt || opt->payload.size() != 1 || opt->payload[0] > 3) return std::nullopt;
  return static_cast<Role>(opt->payload[0]);
}

}  // namespace dnslab::partial
