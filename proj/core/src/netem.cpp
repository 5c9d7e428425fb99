#include "dnslab/netem.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <thread>

#include "dnslab/kvconfig.hpp"

namespace dnslab::netem {

Direction direction_from_string(const std::string& s) {
  if (s == "egress") return Direction::Egress;
  if (s == "ingress") return Direction::Ingress;
  if (s == "both") return Direction::Both;
  throw std::invalid_argument("unknown direction: " + s + " (egress|ingress|both)");
}

std::string direction_to_string(Direction d) {
  switch (d) {
    case Direction::Egress: return "egress";
    case Direction::Ingress: return "ingress";
    case Direction::Both: return "both";
  }
  return "?";
}

void NetworkProfile::validate() const {
  if (loss_rate < 0 || loss_rate > 1)
    throw std::invalid_argument("loss_rate must be in [0,1], got " + std::to_string(loss_rate));
  if (latency_ms < 0 || jitter_ms < 0 || uplink_mbps < 0 || downlink_mbps < 0)
    throw std::invalid_argument("profile fields must be non-negative");
}

NetworkProfile builtin_profile(const std::string& name) {
  NetworkProfile p;
  p.name = name;
  if (name == "default") {
    return p;
  }
  if (name == "4g") {
    p.latency_ms = 53.3;
    p.jitter_ms = 1;
    p.loss_rate = 0.005;
    p.uplink_mbps = 7.44;
    p.downlink_mbps = 22.1;
    return p;
  }
  if (name == "4g-lossy") {
    p = builtin_profile("4g");
    p.name = name;
    p.loss_rate = 0.015;
    return p;
  }
  if (name == "3g") {
    p.latency_ms = 150;
    p.jitter_ms = 8;
    p.loss_rate = 0.021;
    p.uplink_mbps = 1;
    p.downlink_mbps = 1;
    return p;
  }
  throw std::invalid_argument("unknown built-in profile: " + name);
}

std::vector<std::string> builtin_profile_names() { return {"default", "4g", "4g-lossy", "3g"}; }

NetworkProfile load_profile(const std::string& path) {
  kv::KvFile f = kv::KvFile::parse_file(path);
  NetworkProfile p;
  p.name = f.get_or("name", path);
  for (const std::string& key : f.keys()) {
    if (key != "name" && key != "latency_ms" && key != "jitter_ms" && key != "loss_rate" &&
        key != "uplink_mbps" && key != "downlink_mbps" && key != "direction")
      throw kv::ConfigError(path + ": unknown profile key '" + key + "'");
  }
  p.latency_ms = f.get_double_or("latency_ms", 0);
  p.jitter_ms = f.get_double_or("jitter_ms", 0);
  p.loss_rate = f.get_double_or("loss_rate", 0);
  p.uplink_mbps = f.get_double_or("uplink_mbps", 0);
  p.downlink_mbps = f.get_double_or("downlink_mbps", 0);
  if (f.has("direction")) p.direction = direction_from_string(f.get("direction"));
  p.validate();
  return p;
}

NetworkProfile resolve_profile(const std::string& name_or_path) {
  for (const std::string& b : builtin_profile_names())
    if (name_or_path == b) return builtin_profile(name_or_path);
  return load_profile(name_or_path);
}

TokenBucket::TokenBucket(double rate_mbps, double burst_bytes)
    : rate_bytes_per_ms_(rate_mbps * 125.0), burst_bytes_(burst_bytes) {}

double TokenBucket::queuing_delay_ms(double now_ms, double bytes) {
  if (unlimited()) return 0;
  double elapsed = std::max(0.0, now_ms - last_ms_);
  deficit_bytes_ = std::max(0.0, deficit_bytes_ - elapsed * rate_bytes_per_ms_);
  last_ms_ = now_ms;
  deficit_bytes_ += bytes;
  return std::max(0.0, (deficit_bytes_ - burst_bytes_) / rate_bytes_per_ms_);
}

Shaper::Shaper(NetworkProfile profile, uint64_t seed)
    : profile_(std::move(profile)),
      rng_(seed),
      up_(profile_.uplink_mbps),
      down_(profile_.downlink_mbps) {
  profile_.validate();
}

Verdict Shaper::shape_packet(Direction travel, double bytes, double now_ms) {
  if (travel == Direction::Both)
    throw std::invalid_argument("a packet travels egress or ingress, not both");
  if (!profile_.shapes(travel)) return Verdict{false, now_ms};
  if (rng_.chance(profile_.loss_rate)) return Verdict{true, now_ms};
  double delay = profile_.latency_ms;
  if (profile_.jitter_ms > 0)
    delay += rng_.uniform(-profile_.jitter_ms, profile_.jitter_ms);
  delay = std::max(0.0, delay);
  TokenBucket& bucket = travel == Direction::Egress ? up_ : down_;
  delay += bucket.queuing_delay_ms(now_ms, bytes);
  return Verdict{false, now_ms + delay};
}

namespace {

double mono_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

class ShapedDatagram : public Datagram {
 public:
  ShapedDatagram(std::unique_ptr<Datagram> inner, const NetworkProfile& profile, uint64_t seed)
      : inner_(std::move(inner)), shaper_(profile, seed) {
    sender_ = std::thread([this] { send_loop(); });
  }

  ~ShapedDatagram() override {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    sender_.join();
  }

  void send(const std::vector<uint8_t>& payload) override {
    Verdict v;
    {
      std::lock_guard<std::mutex> lk(mu_);
      v = shaper_.shape_packet(Direction::Egress, double(payload.size()), mono_ms());
      if (v.dropped) return;
      if (v.deliver_at_ms > mono_ms()) {
        outbox_.push(Timed{v.deliver_at_ms, seq_++, payload});
        cv_.notify_all();
        return;
      }
    }
    inner_->send(payload);
  }

  std::optional<std::vector<uint8_t>> recv(double timeout_ms) override {
    double deadline = mono_ms() + timeout_ms;
    for (;;) {
      double now = mono_ms();
      if (!inbox_.empty() && inbox_.top().due_ms <= now) {
        auto payload = inbox_.top().payload;
        inbox_.pop();
        return payload;
      }
      if (now >= deadline) return std::nullopt;
      double wait = deadline - now;
      if (!inbox_.empty()) wait = std::min(wait, inbox_.top().due_ms - now);
      auto raw = inner_->recv(std::max(0.0, wait));
      if (!raw) continue;
      Verdict v;
      {
        std::lock_guard<std::mutex> lk(mu_);
        v = shaper_.shape_packet(Direction::Ingress, double(raw->size()), mono_ms());
      }
      if (v.dropped) continue;
      inbox_.push(Timed{v.deliver_at_ms, seq_++, std::move(*raw)});
    }
  }

 private:
  struct Timed {
    double due_ms;
    uint64_t order;
    std::vector<uint8_t> payload;
    bool operator>(const Timed& o) const {
      return due_ms != o.due_ms ? due_ms > o.due_ms : order > o.order;
    }
  };
  using MinHeap = std::priority_queue<Timed, std::vector<Timed>, std::greater<Timed>>;

  void send_loop() {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      if (stop_) return;
      if (outbox_.empty()) {
        cv_.wait(lk, [this] { return stop_ || !outbox_.empty(); });
        continue;
      }
      double now = mono_ms();
      if (outbox_.top().due_ms <= now) {
        auto payload = outbox_.top().payload;
        outbox_.pop();
        lk.unlock();
        inner_->send(payload);
        lk.lock();
        continue;
      }
      cv_.wait_for(lk, std::chrono::duration<double, std::milli>(outbox_.top().due_ms - now));
    }
  }

  std::unique_ptr<Datagram> inner_;
  Shaper shaper_;
  std::mutex mu_;
  std::condition_variable cv_;
  MinHeap outbox_;
  MinHeap inbox_;  // touched only from recv()
  uint64_t seq_ = 0;
  bool stop_ = false;
  std::thread sender_;
};

}  // namespace

std::unique_ptr<Datagram> wrap_datagram(std::unique_ptr<Datagram> inner,
                                        const NetworkProfile& profile, uint64_t seed) {
  return std::make_unique<ShapedDatagram>(std::move(inner), profile, seed);
}

}  // namespace dnslab::netem
