#include "sotc/rng.hpp"

#include <cmath>

namespace sotc {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
uint64_t mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id),
      key_(mix(seed + kGolden) ^ mix(stream_id * 0xA3EC647659359ACDULL + kGolden)) {}

uint64_t RngStream::next_u64() {
  ++counter_;
  return mix(key_ + counter_ * kGolden);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  if (lo > hi) throw Error(Error::Kind::kDomain, "uniform: lo > hi");
  if (lo == hi) {
    next_u64();  // still consumes one draw
    return lo;
  }
  return lo + (hi - lo) * next_double();
}

double RngStream::normal(double mean, double stddev) {
  double u1 = next_double();
  double u2 = next_double();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return mean + stddev * z;
}

uint64_t RngStream::index(uint64_t n) {
  if (n == 0) throw Error(Error::Kind::kDomain, "index: n == 0");
  return next_u64() % n;
}

}  // namespace sotc
