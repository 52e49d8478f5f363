#ifndef MSCKE_UTIL_HPP_
#define MSCKE_UTIL_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mscke {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// validation/format/config -> 2, training/numeric -> 1, transport -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConflictError : Error { using Error::Error; };
struct NotFoundError : Error { using Error::Error; };
struct StaleCacheError : Error { using Error::Error; };
struct ProviderError : Error { using Error::Error; };
struct TransportError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct PipelineError : Error { using Error::Error; };

// 64-bit mixing and hashing. All randomness in the project flows through
// these so results are identical across platforms and standard libraries.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Counter-based generator: a stateless stream indexed by (seed, counter).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform in [0, n)
  std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  // In-place Fisher-Yates; stable across platforms unlike std::shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Round to the nearest binary32 value, kept in a double. Values produced by
// public pipeline ops sit on this grid so the f32 file formats round-trip
// without loss.
inline double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void q32_all(std::vector<double>& v) {
  for (double& x : v) x = q32(x);
}

std::string to_hex16(std::uint64_t v);

// Whole-file and line helpers shared by the JSONL surfaces.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<std::string> split_lines(const std::string& text);

}  // namespace mscke

#endif  // MSCKE_UTIL_HPP_
