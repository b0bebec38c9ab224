#pragma once

// Deterministic random streams. Every piece of randomness in the project is
// drawn through this wrapper so that runs are bit-reproducible across
// platforms: mt19937_64 is specified exactly by the standard, while the
// std::*_distribution classes are not, so we roll the distributions here.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// FNV-1a over bytes; a portable stand-in for std::hash on strings.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Mixes (master seed, stream id, substream id) into one 64-bit seed.
// Used to hand each pair / shape / purpose its own independent stream so
// parallel and serial generation produce identical output.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream,
                              std::uint64_t substream = 0) {
  std::uint64_t s = master;
  std::uint64_t a = splitmix64(s);
  s ^= stream * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull;
  std::uint64_t b = splitmix64(s);
  s ^= substream * 0x9e3779b97f4a7c15ull + 1;
  std::uint64_t c = splitmix64(s);
  return a ^ (b + 0x9e3779b97f4a7c15ull + (c << 6) + (c >> 2));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng derive(std::uint64_t master, std::uint64_t stream,
                    std::uint64_t substream = 0) {
    return Rng(mix_seed(master, stream, substream));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the sine partner is cached so draws come
  // in a fixed sequence per stream.
  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cache_ = r * std::sin(a);
    has_cache_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Unbiased integer in [lo, hi] inclusive.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    std::uint64_t threshold = (0ull - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(
                    uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Textual state, for checkpoints. Covers the engine and the normal cache.
  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << (has_cache_ ? 1 : 0) << ' ';
    os.precision(17);
    os << cache_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    is >> engine_ >> flag >> cache_;
    if (!is) throw std::invalid_argument("Rng::deserialize: bad state string");
    has_cache_ = (flag != 0);
  }

 private:
  std::mt19937_64 engine_;
  bool has_cache_ = false;
  double cache_ = 0.0;
};

}  // namespace lalign
