#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uveqfed/entropy.hpp"
#include "uveqfed/lattice.hpp"

namespace uveqfed {

enum class ZetaRule {
    Fixed,             // zeta = zetaValue
    ThreeOverSqrtM,    // zeta = 3 / sqrt(M)
    RateDependent,     // zeta = (2 + R/5) / sqrt(M)
};

ZetaRule parseZetaRule(const std::string& text);
std::string toString(ZetaRule rule);

struct UVeQFedConfig {
    Lattice lattice = Lattice::hexagonal();  // base lattice; the rate search rescales it
    ZetaRule zetaRule = ZetaRule::RateDependent;
    double zetaValue = 1.0;
    double rate = 4.0;  // bits per model entry
    std::uint64_t masterSeed = 0;
};

// Header fields counted against the bit budget.
inline constexpr int kScaleCodeBits = 16;
inline constexpr int kNormCodeBits = 12;
inline constexpr std::size_t kHeaderBits = kScaleCodeBits + kNormCodeBits;

struct EncodedUpdate {
    BitString payload;
    std::uint16_t scaleCode = 0;  // applied scale = base scale * scaleFromCode(scaleCode)
    std::uint16_t normCode = 0;   // 0 marks the all-zero update
    std::size_t length = 0;       // m
    std::size_t blocks = 0;       // M = ceil(m / L)
    std::size_t paddedLength = 0; // L * M
    double appliedScale = 0.0;

    bool isZero() const noexcept { return normCode == 0; }
    std::size_t totalBits() const noexcept { return kHeaderBits + payload.bitLength; }
};

// Quantized value of zeta * ||h||: a 12-bit logarithmic code with 1/64-octave steps.
double normFromCode(std::uint16_t code) noexcept;
std::uint16_t normToCode(double value) noexcept;

// Scale multiplier relative to the base lattice: 2^((code - 32768) / 2048).
double scaleFromCode(std::uint16_t code) noexcept;

// Bit budget floor(m * R) for an update of m entries.
std::size_t bitBudget(std::size_t m, double rate);

// Logging layout: [16-bit scale][12-bit norm][32-bit bitLength][payload], MSB first.
BitString serialize(const EncodedUpdate& enc);
EncodedUpdate deserialize(const BitString& bits, std::size_t m, std::size_t dim);

class UVeQFedCodec {
public:
    explicit UVeQFedCodec(UVeQFedConfig cfg);

    const UVeQFedConfig& config() const noexcept { return cfg_; }
    std::size_t dimension() const noexcept { return cfg_.lattice.dimension(); }
    std::size_t blockCount(std::size_t m) const noexcept { return (m + dimension() - 1) / dimension(); }
    double zeta(std::size_t blocks) const;

    // Throws InvalidInputError on non-finite input and RateInfeasibleError when
    // even the coarsest scale exceeds the budget.
    EncodedUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const;

    // Encode at a fixed scale code, skipping the rate search and the budget check.
    EncodedUpdate encodeAtScale(std::span<const double> h, std::uint64_t user, std::uint64_t round,
                                std::uint16_t scaleCode) const;

    std::vector<double> decode(const EncodedUpdate& enc, std::uint64_t user, std::uint64_t round) const;

    // Same result as decode(encodeAtScale(...)) without entropy coding. Used by
    // Monte-Carlo error studies where the lossless stage is irrelevant.
    std::vector<double> quantizeAtScale(std::span<const double> h, std::uint64_t user, std::uint64_t round,
                                        std::uint16_t scaleCode) const;

    // Base-lattice dithers z_i for blocks 0..blocks-1, concatenated.
    std::vector<double> dithers(std::size_t blocks, std::uint64_t user, std::uint64_t round) const;

    struct RateSearchResult {
        std::uint16_t scaleCode = 0;
        CoderPlan plan;  // coder plan the payload must use to honour the budget
    };

    // Smallest scale code whose payload fits `payloadBudget` bits, for padded
    // normalized blocks and their base dithers.
    RateSearchResult rateSearch(std::span<const double> normalized, std::span<const double> dither,
                                std::size_t payloadBudget) const;

    // E||eps||^2 given the header: normHat^2 * M * sigma^2 of the applied lattice.
    double conditionalErrorEnergy(const EncodedUpdate& enc) const;

    // Fraction of sub-vectors of h / (zeta ||h||) lying outside the unit L-ball.
    double overloadFraction(std::span<const double> h) const;

private:
    void quantize(std::span<const double> normalized, std::span<const double> dither, double scale,
                  std::int64_t* coords) const;
    std::vector<double> normalizedBlocks(std::span<const double> h, double normHat) const;
    EncodedUpdate encodeWith(std::span<const double> h, std::uint64_t user, std::uint64_t round,
                             std::uint16_t scaleCode, const CoderPlan* plan) const;
    EntropyOptions entropyOptions() const noexcept { return {dimension(), EntropyMode::Adaptive}; }

    UVeQFedConfig cfg_;
};

inline EncodedUpdate encode(std::span<const double> h, const UVeQFedConfig& cfg, std::uint64_t user,
                            std::uint64_t round) {
    return UVeQFedCodec(cfg).encode(h, user, round);
}

inline std::vector<double> decode(const EncodedUpdate& enc, const UVeQFedConfig& cfg, std::uint64_t user,
                                  std::uint64_t round) {
    return UVeQFedCodec(cfg).decode(enc, user, round);
}

}  // namespace uveqfed
