#include "uveqfed/baselines.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "search.hpp"
#include "uveqfed/error.hpp"
#include "uveqfed/random.hpp"

namespace uveqfed {
namespace {

// Stream tags so the shared randomness of different baselines never overlaps.
constexpr std::uint64_t kQsgdRounding = 0x51;
constexpr std::uint64_t kRotationSigns = 0x52;
constexpr std::uint64_t kRotationRounding = 0x53;
constexpr std::uint64_t kMaskSelection = 0x54;
constexpr std::uint64_t kMaskRounding = 0x55;

constexpr std::size_t kMaxRotationChunk = 4096;

CounterRng stream(std::uint64_t seed, std::uint64_t user, std::uint64_t round, std::uint64_t tag) {
    return CounterRng{deriveKey(seed ^ (tag * 0x9e3779b97f4a7c15ULL), user, round, tag)};
}

void requireFinite(std::span<const double> h) {
    for (double v : h) {
        if (!std::isfinite(v)) throw InvalidInputError("update contains a non-finite entry");
    }
}

std::vector<double> uniforms(std::size_t n, CounterRng rng) {
    std::vector<double> u(n);
    for (auto& v : u) v = rng.uniform();
    return u;
}

float floatBelow(double v) {
    auto f = static_cast<float>(v);
    if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    return f;
}

float floatAbove(double v) {
    auto f = static_cast<float>(v);
    if (static_cast<double>(f) < v) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    return f;
}

// Stochastic rounding of x onto `levels` evenly spaced points over [lo, hi].
std::uint32_t roundOntoGrid(double x, double lo, double hi, std::uint32_t levels, double u) {
    if (!(hi > lo) || levels < 2) return 0;
    const double t = (x - lo) / (hi - lo) * static_cast<double>(levels - 1);
    const double fl = std::floor(t);
    double k = fl + (u < t - fl ? 1.0 : 0.0);
    k = std::clamp(k, 0.0, static_cast<double>(levels - 1));
    return static_cast<std::uint32_t>(k);
}

double gridValue(std::uint32_t k, double lo, double hi, std::uint32_t levels) {
    if (!(hi > lo) || levels < 2) return lo;
    return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(levels - 1);
}

void fwht(double* x, std::size_t n) {
    for (std::size_t len = 1; len < n; len <<= 1) {
        for (std::size_t i = 0; i < n; i += 2 * len) {
            for (std::size_t j = i; j < i + len; ++j) {
                const double a = x[j];
                const double b = x[j + len];
                x[j] = a + b;
                x[j + len] = a - b;
            }
        }
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) x[i] *= norm;
}

std::vector<double> signs(std::size_t n, std::uint64_t seed, std::uint64_t user, std::uint64_t round) {
    CounterRng rng = stream(seed, user, round, kRotationSigns);
    std::vector<double> d(n);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % 64 == 0) word = rng();
        d[i] = ((word >> (i % 64)) & 1u) != 0 ? -1.0 : 1.0;
    }
    return d;
}

// Largest level count in [2, maxLevels] whose uniform code of `count` symbols
// fits the payload budget, or 0.
std::uint32_t largestFittingLevels(std::uint32_t maxLevels, std::size_t count, std::size_t payloadBudget) {
    for (std::uint32_t levels = maxLevels; levels >= 2; --levels) {
        if (uniformSymbolsMaxLength(count, levels) <= payloadBudget) return levels;
    }
    return 0;
}

std::size_t payloadBudget(std::size_t budget, std::size_t header) { return budget > header ? budget - header : 0; }

std::size_t budgetFor(std::size_t m, double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidInputError("rate must be positive and finite");
    return static_cast<std::size_t>(std::floor(static_cast<double>(m) * rate));
}

}  // namespace

QsgdUpdate qsgdEncode(std::span<const double> h, std::uint32_t levels, std::uint64_t seed, std::uint64_t user,
                      std::uint64_t round) {
    requireFinite(h);
    if (levels < 1 || levels > kMaxQsgdLevels) throw InvalidInputError("QSGD level count must be in [1, 2^24)");
    QsgdUpdate enc;
    enc.levels = levels;
    enc.length = h.size();
    double sq = 0.0;
    for (double v : h) sq += v * v;
    enc.norm = static_cast<float>(std::sqrt(sq));
    std::vector<std::int64_t> symbols(h.size(), 0);
    if (enc.norm > 0.0f) {
        CounterRng rng = stream(seed, user, round, kQsgdRounding);
        const double norm = enc.norm;
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double t = std::abs(h[i]) / norm * levels;
            const double fl = std::floor(t);
            const auto xi = static_cast<std::int64_t>(fl) + (rng.uniform() < t - fl ? 1 : 0);
            symbols[i] = h[i] < 0 ? -xi : xi;
        }
    }
    enc.payload = encodeIndices(symbols);
    return enc;
}

std::vector<double> qsgdDecode(const QsgdUpdate& enc) {
    std::vector<double> out(enc.length, 0.0);
    if (enc.norm == 0.0f) return out;
    const IndexBlock symbols = decodeIndices(enc.payload, enc.length);
    const double step = static_cast<double>(enc.norm) / enc.levels;
    for (std::size_t i = 0; i < enc.length; ++i) out[i] = step * static_cast<double>(symbols[i]);
    return out;
}

std::uint32_t qsgdLevelSearch(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                              std::uint64_t round) {
    requireFinite(h);
    const std::size_t budget = budgetFor(h.size(), rate);
    double sq = 0.0;
    for (double v : h) sq += v * v;
    const double norm = static_cast<float>(std::sqrt(sq));
    const std::vector<double> u = uniforms(h.size(), stream(seed, user, round, kQsgdRounding));
    std::vector<std::int64_t> symbols(h.size());
    const auto excess = [&](std::int64_t negLevels) {
        const auto levels = static_cast<std::uint32_t>(-negLevels);
        if (norm > 0.0) {
            for (std::size_t i = 0; i < h.size(); ++i) {
                const double t = std::abs(h[i]) / norm * levels;
                const double fl = std::floor(t);
                const auto xi = static_cast<std::int64_t>(fl) + (u[i] < t - fl ? 1 : 0);
                symbols[i] = h[i] < 0 ? -xi : xi;
            }
        } else {
            std::fill(symbols.begin(), symbols.end(), 0);
        }
        return static_cast<double>(QsgdUpdate::kHeaderBits + codewordLength(symbols)) - static_cast<double>(budget);
    };
    // Searching over -s turns "largest s that fits" into "smallest x that fits".
    // Entries of h / ||h|| have variance 1/m, so s = 2^R sqrt(m / (2 pi e)) is
    // the high-resolution guess.
    const double m = static_cast<double>(std::max<std::size_t>(h.size(), 1));
    const double guess = std::clamp(std::exp2(rate) * std::sqrt(m / (2.0 * std::numbers::pi * std::numbers::e)), 1.0,
                                    static_cast<double>(kMaxQsgdLevels));
    const double slope = -m / (guess * std::numbers::ln2);
    const auto found = detail::smallestFitting(-static_cast<std::int64_t>(kMaxQsgdLevels), -1,
                                               -static_cast<std::int64_t>(std::llround(guess)), slope, excess);
    if (!found) {
        throw RateInfeasibleError("rate " + std::to_string(rate) + " is infeasible for qsgd with one level");
    }
    return static_cast<std::uint32_t>(-*found);
}

std::size_t rotationChunk(std::size_t m) noexcept {
    return std::min(std::bit_ceil(std::max<std::size_t>(m, 1)), kMaxRotationChunk);
}

std::size_t rotationPaddedLength(std::size_t m) noexcept {
    const std::size_t chunk = rotationChunk(m);
    return chunk * ((std::max<std::size_t>(m, 1) + chunk - 1) / chunk);
}

void rotateForward(std::span<double> x, std::uint64_t seed, std::uint64_t user, std::uint64_t round) {
    const std::size_t n = x.size();
    const std::size_t chunk = std::min(std::bit_ceil(std::max<std::size_t>(n, 1)), kMaxRotationChunk);
    if (n % chunk != 0) throw InvalidInputError("rotation length must be a multiple of its chunk");
    const std::vector<double> d = signs(n, seed, user, round);
    for (std::size_t i = 0; i < n; ++i) x[i] *= d[i];
    for (std::size_t off = 0; off < n; off += chunk) fwht(x.data() + off, chunk);
}

void rotateInverse(std::span<double> x, std::uint64_t seed, std::uint64_t user, std::uint64_t round) {
    const std::size_t n = x.size();
    const std::size_t chunk = std::min(std::bit_ceil(std::max<std::size_t>(n, 1)), kMaxRotationChunk);
    if (n % chunk != 0) throw InvalidInputError("rotation length must be a multiple of its chunk");
    // The orthonormal Walsh-Hadamard matrix is its own inverse.
    for (std::size_t off = 0; off < n; off += chunk) fwht(x.data() + off, chunk);
    const std::vector<double> d = signs(n, seed, user, round);
    for (std::size_t i = 0; i < n; ++i) x[i] *= d[i];
}

std::uint32_t rotatedLevels(std::size_t m, double rate) {
    const std::size_t budget = budgetFor(m, rate);
    const auto maxLevels = static_cast<std::uint32_t>(std::max(2.0, std::exp2(std::min(std::floor(rate), 16.0))));
    const std::uint32_t levels =
        largestFittingLevels(maxLevels, rotationPaddedLength(m), payloadBudget(budget, RotatedUpdate::kHeaderBits));
    if (levels == 0) {
        throw RateInfeasibleError("rate " + std::to_string(rate) + " is infeasible for the rotated quantizer");
    }
    return levels;
}

RotatedUpdate rotatedEncode(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                            std::uint64_t round) {
    requireFinite(h);
    RotatedUpdate enc;
    enc.length = h.size();
    std::vector<double> y(rotationPaddedLength(h.size()), 0.0);
    std::copy(h.begin(), h.end(), y.begin());
    rotateForward(y, seed, user, round);
    const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
    enc.lo = floatBelow(*mn);
    enc.hi = floatAbove(*mx);
    const std::vector<double> u = uniforms(y.size(), stream(seed, user, round, kRotationRounding));
    const auto symbolsFor = [&](std::uint32_t levels) {
        std::vector<std::uint32_t> sym(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) sym[i] = roundOntoGrid(y[i], enc.lo, enc.hi, levels, u[i]);
        return sym;
    };
    enc.levels = rotatedLevels(h.size(), rate);
    const std::vector<std::uint32_t> sym = symbolsFor(enc.levels);
    enc.payload = encodeUniformSymbols(sym, enc.levels);
    return enc;
}

std::vector<double> rotatedDecode(const RotatedUpdate& enc, std::uint64_t seed, std::uint64_t user,
                                  std::uint64_t round) {
    const std::size_t padded = rotationPaddedLength(enc.length);
    const std::vector<std::uint32_t> sym = decodeUniformSymbols(enc.payload, padded, enc.levels);
    std::vector<double> y(padded);
    for (std::size_t i = 0; i < padded; ++i) y[i] = gridValue(sym[i], enc.lo, enc.hi, enc.levels);
    rotateInverse(y, seed, user, round);
    y.resize(enc.length);
    return y;
}

double maskFraction(double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidInputError("rate must be positive and finite");
    return std::min(1.0, rate / 3.0);
}

std::size_t maskKeptCount(std::size_t m, double rate) {
    return static_cast<std::size_t>(std::llround(maskFraction(rate) * static_cast<double>(m)));
}

std::uint32_t maskedLevels(std::size_t m, double rate) {
    const std::size_t budget = budgetFor(m, rate);
    const std::uint32_t levels =
        largestFittingLevels(kMaskedMaxLevels, maskKeptCount(m, rate), payloadBudget(budget, MaskedUpdate::kHeaderBits));
    if (levels == 0) {
        throw RateInfeasibleError("rate " + std::to_string(rate) + " is infeasible for the masked quantizer");
    }
    return levels;
}

std::vector<std::size_t> maskIndices(std::size_t m, std::size_t kept, std::uint64_t seed, std::uint64_t user,
                                     std::uint64_t round) {
    if (kept > m) throw InvalidInputError("mask cannot keep more entries than exist");
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    CounterRng rng = stream(seed, user, round, kMaskSelection);
    for (std::size_t i = 0; i < kept; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(kept);
    std::sort(perm.begin(), perm.end());
    return perm;
}

MaskedUpdate maskedEncode(std::span<const double> h, double rate, std::uint64_t seed, std::uint64_t user,
                          std::uint64_t round) {
    requireFinite(h);
    MaskedUpdate enc;
    enc.length = h.size();
    enc.kept = maskKeptCount(h.size(), rate);
    const std::vector<std::size_t> idx = maskIndices(h.size(), enc.kept, seed, user, round);
    std::vector<double> values(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) values[i] = h[idx[i]];
    if (!values.empty()) {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        enc.lo = floatBelow(*mn);
        enc.hi = floatAbove(*mx);
    }
    const std::vector<double> u = uniforms(values.size(), stream(seed, user, round, kMaskRounding));
    const auto symbolsFor = [&](std::uint32_t levels) {
        std::vector<std::uint32_t> sym(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) sym[i] = roundOntoGrid(values[i], enc.lo, enc.hi, levels, u[i]);
        return sym;
    };
    enc.levels = maskedLevels(h.size(), rate);
    enc.payload = encodeUniformSymbols(symbolsFor(enc.levels), enc.levels);
    return enc;
}

std::vector<double> maskedDecode(const MaskedUpdate& enc, std::uint64_t seed, std::uint64_t user,
                                 std::uint64_t round) {
    const std::vector<std::size_t> idx = maskIndices(enc.length, enc.kept, seed, user, round);
    const std::vector<std::uint32_t> sym = decodeUniformSymbols(enc.payload, idx.size(), enc.levels);
    std::vector<double> out(enc.length, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = gridValue(sym[i], enc.lo, enc.hi, enc.levels);
    return out;
}

}  // namespace uveqfed
