#ifndef MOPE_TESTS_FIXTURES_HPP_
#define MOPE_TESTS_FIXTURES_HPP_

// Hand-derived counts for the denoiser and gate. Every 3x3 conv carries a
// bias; instance norm carries a scale and shift per channel.

#include <cstdint>
#include <numeric>
#include <vector>

namespace mope::testing {

// conv 3->16, conv 16->32 s2, conv 32->64 s2, convT 64->32, convT 32->16, conv 16->3
inline const std::vector<std::uint64_t> kDenoiserParams = {
    9 * 3 * 16 + 16, 9 * 16 * 32 + 32, 9 * 32 * 64 + 64,
    9 * 64 * 32 + 32, 9 * 32 * 16 + 16, 9 * 16 * 3 + 3};

// conv 3->16, conv 16->32, IN 32, conv 32->64, IN 64, conv 64->1
inline const std::vector<std::uint64_t> kGatingParams = {
    9 * 3 * 16 + 16, 9 * 16 * 32 + 32, 2 * 32, 9 * 32 * 64 + 64, 2 * 64, 9 * 64 * 1 + 1};

// Conv MACs at 244x244: k^2 * c_in * c_out * output pixels (conv) or
// input pixels (conv transpose).
inline const std::vector<std::uint64_t> kDenoiserMacs244 = {
    9ull * 3 * 16 * 244 * 244,   // conv 3->16
    9ull * 16 * 32 * 122 * 122,  // conv 16->32 s2
    9ull * 32 * 64 * 61 * 61,    // conv 32->64 s2
    9ull * 64 * 32 * 61 * 61,    // convT 64->32
    9ull * 32 * 16 * 122 * 122,  // convT 32->16
    9ull * 16 * 3 * 244 * 244};  // conv 16->3

inline const std::vector<std::uint64_t> kGatingMacs244 = {
    9ull * 3 * 16 * 122 * 122, 9ull * 16 * 32 * 61 * 61, 9ull * 32 * 64 * 31 * 31,
    9ull * 64 * 1 * 31 * 31};

inline std::uint64_t total(const std::vector<std::uint64_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::uint64_t{0});
}

}  // namespace mope::testing

#endif  // MOPE_TESTS_FIXTURES_HPP_
