#pragma once

#include <chrono>
#include <cstdint>
#include <random>

namespace lify {

/// Exponential reconnect delay: base·2^n capped at `cap`, then shortened by a
/// random fraction of up to `jitter` so that restarted peers do not reconnect
/// in lockstep. Delays never exceed the cap.
class Backoff {
 public:
  Backoff(std::chrono::milliseconds base, std::chrono::milliseconds cap, double jitter = 0.2,
          std::uint64_t seed = std::random_device{}());

  std::chrono::milliseconds next();
  void reset() noexcept { attempt_ = 0; }
  int attempts() const noexcept { return attempt_; }

 private:
  std::chrono::milliseconds base_;
  std::chrono::milliseconds cap_;
  double jitter_;
  int attempt_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace lify
