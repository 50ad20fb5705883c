#pragma once

#include <cmath>
#include <cstdint>

namespace duogp {

// Counter-based splittable random stream (Philox4x32-10).
//
// Sequential design needs random numbers whose values do not depend on
// evaluation order: candidate scores must be identical whether candidates are
// visited by one worker or eight, and a resumed session must continue the
// exact sequence a monolithic run would have produced.  A counter-based
// generator gives that for free: the seed is the cipher key, a derived
// "stream id" occupies the high counter words, and each draw bumps the low
// counter.  Deriving a child stream is a pure hash of (parent id, child key),
// so any piece of the algorithm can reconstruct its stream from structural
// coordinates (iteration, candidate, particle, ...) alone.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed) : key_(seed), stream_(0) {}

  // Child stream addressed by `child`.  Derivation chains: a stream derived
  // via the same sequence of keys from the same seed is always identical.
  [[nodiscard]] RngStream derive(std::uint64_t child) const {
    RngStream s;
    s.key_ = key_;
    s.stream_ = mix64(stream_ + kGolden * (child + 1));
    return s;
  }

  std::uint64_t next_u64() {
    if (bufpos_ > 1) refill();  // buf_ holds two 64-bit draws per block
    std::uint64_t lo = buf_[bufpos_ * 2];
    std::uint64_t hi = buf_[bufpos_ * 2 + 1];
    ++bufpos_;
    return (hi << 32) | lo;
  }

  // Uniform on the open interval (0, 1); safe as a log() argument.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the second member of each pair is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double exponential() { return -std::log(uniform01()); }

  // Uniform integer in [0, n).  Unbiased enough for design restarts (n is
  // tiny against 2^64); modulo keeps the draw count per call fixed, which the
  // reproducibility contract cares about more than the 2^-50 bias.
  std::uint64_t uniform_below(std::uint64_t n) { return next_u64() % n; }

  [[nodiscard]] std::uint64_t seed() const { return key_; }
  [[nodiscard]] std::uint64_t stream_id() const { return stream_; }

  // splitmix64 finalizer; also used to key streams by coordinate payloads.
  static std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  void refill() {
    std::uint32_t c[4] = {static_cast<std::uint32_t>(ctr_),
                          static_cast<std::uint32_t>(ctr_ >> 32),
                          static_cast<std::uint32_t>(stream_),
                          static_cast<std::uint32_t>(stream_ >> 32)};
    std::uint32_t k[2] = {static_cast<std::uint32_t>(key_),
                          static_cast<std::uint32_t>(key_ >> 32)};
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ull * c[0];
      std::uint64_t p1 = 0xCD9E8D57ull * c[2];
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      c[0] = hi1 ^ c[1] ^ k[0];
      c[1] = lo1;
      c[2] = hi0 ^ c[3] ^ k[1];
      c[3] = lo0;
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    buf_[0] = c[0];
    buf_[1] = c[1];
    buf_[2] = c[2];
    buf_[3] = c[3];
    ++ctr_;
    bufpos_ = 0;
  }

  std::uint64_t key_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t ctr_ = 0;
  std::uint32_t buf_[4] = {0, 0, 0, 0};
  int bufpos_ = 4;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Stream roles used by the sequential-design drivers.  Keying by role keeps
// every consumer's randomness independent of how often any other consumer
// draws, which is what makes split (propose/observe) runs bit-equivalent to
// monolithic ones.
namespace stream_role {
constexpr std::uint64_t kInitDesign = 1;   // initial design construction
constexpr std::uint64_t kInitObserve = 2;  // initial observations (internal simulator)
constexpr std::uint64_t kMcmc = 3;         // .derive(iteration): sampler refresh chains
constexpr std::uint64_t kLookahead = 4;    // .derive(iteration): criterion draws
constexpr std::uint64_t kSimNoise = 5;     // .derive(iteration): internal simulator noise
constexpr std::uint64_t kPredict = 6;      // .derive(iteration): prediction-time path draws
constexpr std::uint64_t kEbPaths = 7;      // .derive(iteration): lookahead path draws (point-estimate run)
constexpr std::uint64_t kStrategyRun = 8;  // .derive(strategy index): per-strategy run root
}  // namespace stream_role

}  // namespace duogp
