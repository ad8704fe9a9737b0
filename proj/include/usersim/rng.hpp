#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace usersim {

// Seed derivation: every random stream in the project is a pure function of a
// root seed plus a stream name and/or an index, so runs are bit-reproducible
// independent of worker count.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// Thin wrapper over mt19937_64. The conversions are written out here instead
// of using <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                        // [0, 1)
  std::size_t below(std::size_t n);        // [0, n)
  bool bernoulli(double p) { return uniform() < p; }
  double normal();                         // Box-Muller
  // Index drawn from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace usersim
