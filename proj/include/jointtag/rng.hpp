#pragma once

#include <cstdint>
#include <vector>

namespace jointtag {

// splitmix64: tiny deterministic generator with identical output on every
// platform and toolchain. std::mt19937 + distributions would tie model
// reproducibility to the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [-bound, +bound)
  double next_symmetric(double bound) { return (2.0 * next_unit() - 1.0) * bound; }

  // uniform integer in [0, n), n >= 1
  std::uint64_t next_below(std::uint64_t n) {
    // modulo bias is negligible for n << 2^64 and irrelevant for shuffling
    return next_u64() % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream, e.g. per epoch, from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  Rng r(base ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
  return r.next_u64();
}

}  // namespace jointtag
