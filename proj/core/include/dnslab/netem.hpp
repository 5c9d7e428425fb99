#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnslab/rng.hpp"

namespace dnslab::netem {

// Which travel directions get latency/jitter/loss and the rate limiter.
// Egress mirrors shaping only the measurement host's outgoing traffic.
enum class Direction { Egress, Ingress, Both };

Direction direction_from_string(const std::string& s);
std::string direction_to_string(Direction d);

struct NetworkProfile {
  std::string name = "default";
  double latency_ms = 0;
  double jitter_ms = 0;
  double loss_rate = 0;  // Bernoulli per packet
  double uplink_mbps = 0;    // 0 = unlimited
  double downlink_mbps = 0;  // 0 = unlimited
  Direction direction = Direction::Egress;

  void validate() const;  // throws std::invalid_argument
  bool shapes(Direction travel) const {
    return direction == Direction::Both || direction == travel;
  }
};

// default | 4g | 4g-lossy | 3g
NetworkProfile builtin_profile(const std::string& name);
std::vector<std::string> builtin_profile_names();

// kv file: latency_ms, jitter_ms, loss_rate, uplink_mbps, downlink_mbps,
// direction. Unknown keys are rejected so typos don't silently passthrough.
NetworkProfile load_profile(const std::string& path);
// name is either a built-in or a path to a profile file
NetworkProfile resolve_profile(const std::string& name_or_path);

struct Verdict {
  bool dropped = false;
  double deliver_at_ms = 0;  // absolute on the caller's clock
};

// Classic token bucket: depth one MTU, refill at the link rate. The queuing
// delay for a packet is how long until enough tokens have accumulated.
class TokenBucket {
 public:
  TokenBucket(double rate_mbps, double burst_bytes = 1500);
  double queuing_delay_ms(double now_ms, double bytes);
  bool unlimited() const { return rate_bytes_per_ms_ <= 0; }

 private:
  double rate_bytes_per_ms_;
  double burst_bytes_;
  double deficit_bytes_ = 0;  // bytes already owed at last_ms_
  double last_ms_ = 0;
};

// Per-link deterministic packet scheduler: loss first (lost packets consume
// no tokens), then latency + uniform jitter, then rate queuing.
class Shaper {
 public:
  Shaper(NetworkProfile profile, uint64_t seed);

  Verdict shape_packet(Direction travel, double bytes, double now_ms);
  const NetworkProfile& profile() const { return profile_; }

 private:
  NetworkProfile profile_;
  rng::Rng rng_;
  TokenBucket up_;
  TokenBucket down_;
};

// Datagram seam shared by live transports and tests: UDP sockets and the
// shaped wrapper implement it.
class Datagram {
 public:
  virtual ~Datagram() = default;
  virtual void send(const std::vector<uint8_t>& payload) = 0;
  virtual std::optional<std::vector<uint8_t>> recv(double timeout_ms) = 0;
};

// Applies the profile to a real datagram endpoint on the wall clock: sends
// are scheduled by a background thread, receives are held until their
// delivery time. Egress-only profiles leave receives untouched.
std::unique_ptr<Datagram> wrap_datagram(std::unique_ptr<Datagram> inner,
                                        const NetworkProfile& profile, uint64_t seed);

}  // namespace dnslab::netem
