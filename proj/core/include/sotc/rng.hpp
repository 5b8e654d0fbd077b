#pragma once

#include <cstdint>

#include "sotc/error.hpp"

namespace sotc {

// Counter-based generator: draw k is a pure function of (seed, stream_id, k),
// so streams split by stream_id share no state and the sequence is identical
// on every platform.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id);

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();
  double next_double();  // [0, 1), 53-bit resolution, one draw

  // Draw in [lo, hi); lo == hi returns lo. Consumes exactly one draw.
  double uniform(double lo, double hi);

  double normal(double mean, double stddev);  // Box-Muller, two draws

  // Index in [0, n). One draw.
  uint64_t index(uint64_t n);

 private:
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t key_;
  uint64_t counter_{0};
};

}  // namespace sotc
