#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uveqfed/entropy.hpp"

namespace uveqfed {

// QSGD: ||h|| as a 32-bit float, the level count s in 24 bits, and the signed
// stochastic level index sign(h_i) * xi_i, xi_i in {0..s}, for every entry.
struct QsgdUpdate {
    float norm = 0.0f;
    std::uint32_t levels = 1;
    std::size_t length = 0;
    BitString payload;

    static constexpr std::size_t kHeaderBits = 32 + 24;
    std::size_t totalBits() const noexcept { return kHeaderBits + payload.bitLength; }
};

inline constexpr std::uint32_t kMaxQsgdLevels = (1u << 24) - 1;

QsgdUpdate qsgdEncode(std::span<const double> h, std::uint32_t levels, std::uint64_t seed, std::uint64_t user,
                      std::uint64_t round);
std::vector<double> qsgdDecode(const QsgdUpdate& enc);

// Largest level count in [1, 2^24) whose update fits floor(m * rate) bits.
std::uint32_t qsgdLevelSearch(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                              std::uint64_t round);

// Random +-1 signs followed by an orthonormal Walsh-Hadamard transform over
// power-of-two chunks; entries are then stochastically rounded onto `levels`
// points spanning [min, max] (both sent as 32-bit floats).
struct RotatedUpdate {
    float lo = 0.0f;
    float hi = 0.0f;
    std::uint32_t levels = 2;
    std::size_t length = 0;
    BitString payload;

    static constexpr std::size_t kHeaderBits = 64;
    std::size_t totalBits() const noexcept { return kHeaderBits + payload.bitLength; }
};

// Chunk length of the transform for an m-entry vector and the padded length.
std::size_t rotationChunk(std::size_t m) noexcept;
std::size_t rotationPaddedLength(std::size_t m) noexcept;

// Forward and inverse seeded rotation; `x` has rotationPaddedLength(m) entries.
void rotateForward(std::span<double> x, std::uint64_t seed, std::uint64_t user, std::uint64_t round);
void rotateInverse(std::span<double> x, std::uint64_t seed, std::uint64_t user, std::uint64_t round);

// Largest level count <= 2^floor(R) (and >= 2) whose payload always fits the
// budget. Depends only on (m, R), so it is not transmitted.
std::uint32_t rotatedLevels(std::size_t m, double rate);

RotatedUpdate rotatedEncode(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                            std::uint64_t round);
std::vector<double> rotatedDecode(const RotatedUpdate& enc, std::uint64_t seed, std::uint64_t user,
                                  std::uint64_t round);

// Random subsampling of round(p m) entries, p = min(1, R / 3), with the mask
// regenerated from the seed; kept entries are stochastically rounded onto at
// most 8 levels over their [min, max]. Dropped entries decode to zero.
struct MaskedUpdate {
    float lo = 0.0f;
    float hi = 0.0f;
    std::uint32_t levels = 2;
    std::size_t length = 0;
    std::size_t kept = 0;
    BitString payload;

    static constexpr std::size_t kHeaderBits = 64;
    std::size_t totalBits() const noexcept { return kHeaderBits + payload.bitLength; }
};

inline constexpr std::uint32_t kMaskedMaxLevels = 8;

double maskFraction(double rate);
std::size_t maskKeptCount(std::size_t m, double rate);
std::uint32_t maskedLevels(std::size_t m, double rate);

// Sorted indices of the kept entries.
std::vector<std::size_t> maskIndices(std::size_t m, std::size_t kept, std::uint64_t seed, std::uint64_t user,
                                     std::uint64_t round);

MaskedUpdate maskedEncode(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                          std::uint64_t round);
std::vector<double> maskedDecode(const MaskedUpdate& enc, std::uint64_t seed, std::uint64_t user,
                                 std::uint64_t round);

}  // namespace uveqfed
