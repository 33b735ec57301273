#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace dyniv {

// All hard failures in the library throw this; diagnostics that are part of
// normal output (panel violations, suppressed cells) are returned as values.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Sentinel for participants never treated within the observation window.
// Encoded as +inf so that "earlier or equal exposure" comparisons work.
inline constexpr int kNever = std::numeric_limits<int>::max();

// Years of exposure at wave w for a participant first treated in wave r.
// Treatment is absorbing: once exposed, exposure grows by one per wave.
inline int exposure_at(int first_treated_wave, int w) {
  if (first_treated_wave == kNever || first_treated_wave > w) return 0;
  return w - first_treated_wave + 1;
}

// SplitMix64 mixing step.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based derivation of independent sub-stream seeds from one master
// seed. Stream k is the same no matter how work is scheduled across threads,
// which is what makes sampling reproducible under parallel execution.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(0x517cc1b727220a95ULL + stream));
}

inline constexpr double kZ975 = 1.959963984540054;  // N(0,1) 97.5% quantile

}  // namespace dyniv
