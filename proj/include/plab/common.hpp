#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace plab {

// Failure classes map onto the CLI exit-code taxonomy.
enum class ErrorClass { kConfig, kData, kExternal };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), class_(cls), kind_(std::move(kind)) {}

  ErrorClass error_class() const { return class_; }
  const std::string& kind() const { return kind_; }

 private:
  ErrorClass class_;
  std::string kind_;
};

#define PLAB_DEFINE_ERROR(Name, Class)                                        \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(Class, #Name, what) {}     \
  };

PLAB_DEFINE_ERROR(ConfigError, ErrorClass::kConfig)
PLAB_DEFINE_ERROR(BadSpec, ErrorClass::kConfig)
PLAB_DEFINE_ERROR(BadK, ErrorClass::kConfig)
PLAB_DEFINE_ERROR(MalformedRecord, ErrorClass::kData)
PLAB_DEFINE_ERROR(EmptyDataset, ErrorClass::kData)
PLAB_DEFINE_ERROR(DegenerateDataset, ErrorClass::kData)
PLAB_DEFINE_ERROR(CorruptModel, ErrorClass::kData)
PLAB_DEFINE_ERROR(VersionMismatch, ErrorClass::kData)
PLAB_DEFINE_ERROR(InsufficientSource, ErrorClass::kData)
PLAB_DEFINE_ERROR(EmptyText, ErrorClass::kData)
PLAB_DEFINE_ERROR(NoCandidates, ErrorClass::kData)
PLAB_DEFINE_ERROR(NoNonTargetExamples, ErrorClass::kData)
PLAB_DEFINE_ERROR(NoPoisons, ErrorClass::kData)

#undef PLAB_DEFINE_ERROR

class ExternalFailure : public Error {
 public:
  ExternalFailure(int exit_code, const std::string& what)
      : Error(ErrorClass::kExternal, "ExternalFailure", what), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

// 64-bit FNV-1a.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for a named sub-stream. Independent of evaluation order, so
// concurrent work derives the same streams as sequential work.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index * 0xd1b54a32d192ed03ULL));
}

// xoshiro256** with our own distribution helpers. The standard library
// distributions are implementation-defined, which would break cross-platform
// reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x = splitmix64(x);
      s = x;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform integer in [0, n). Lemire's rejection method, unbiased.
  std::uint64_t uniform(std::uint64_t n) {
    if (n == 0) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace plab
