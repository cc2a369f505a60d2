#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ttdps {

/// Purposes for independent random streams. A stream is identified by
/// (seed, purpose, index) so that concurrent or reordered consumers never
/// share draws.
enum class StreamPurpose : std::uint32_t {
  kInit = 1,
  kReverse = 2,
  kInject = 3,
  kNoise = 4,
  kPhantom = 5,
  kTraining = 6,
  kMonteCarlo = 7,
  kFisher = 8,
};

/// Deterministic Gaussian/uniform source. Equal (seed, purpose, index)
/// triples produce bit-identical sequences.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  void fill_normal(std::span<double> out, double stddev = 1.0) {
    for (double& v : out) v = stddev * normal_(engine_);
  }
  std::vector<double> normal_vector(std::size_t n, double stddev = 1.0) {
    std::vector<double> out(n);
    fill_normal(out, stddev);
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ttdps
