#include "lify/backoff.hpp"

#include <algorithm>
#include <cmath>

namespace lify {

Backoff::Backoff(std::chrono::milliseconds base, std::chrono::milliseconds cap, double jitter, std::uint64_t seed)
    : base_(base), cap_(cap), jitter_(std::clamp(jitter, 0.0, 1.0)), rng_(seed) {}

std::chrono::milliseconds Backoff::next() {
  const double raw = static_cast<double>(base_.count()) * std::ldexp(1.0, std::min(attempt_, 30));
  const double capped = std::min(raw, static_cast<double>(cap_.count()));
  ++attempt_;
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped * (1.0 - jitter_ * u)));
}

}  // namespace lify
