#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sls {

/// Named, splittable RNG stream. Each stream is derived from a master seed
/// and a label, so toggling e.g. dropout does not perturb data shuffling.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view name)
      : derived_(mix(master_seed, hash_name(name))), gen_(derived_) {}

  /// Child stream independent of this stream's consumption state.
  RngStream split(std::string_view name) const { return RngStream(derived_, name); }

  std::uint64_t next_u64() { return gen_(); }

  double uniform() {  // in [0, 1)
    return std::generate_canonical<double, 53>(gen_);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(gen_);
  }

  double exponential(double scale = 1.0) {
    std::exponential_distribution<double> d(1.0 / scale);
    return d(gen_);
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(gen_);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  static std::uint64_t hash_name(std::string_view name) {
    // FNV-1a
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t name_hash) {
    return splitmix(splitmix(seed) ^ name_hash);
  }

  std::uint64_t derived_ = 0;
  std::mt19937_64 gen_;
};

}  // namespace sls
