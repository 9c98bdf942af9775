#include "uveqfed/codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "search.hpp"
#include "uveqfed/error.hpp"

namespace uveqfed {
namespace {

constexpr int kNormStepsPerOctave = 64;
constexpr int kNormOffset = 2048;
constexpr std::uint16_t kMaxNormCode = (1u << kNormCodeBits) - 1;
constexpr int kScaleStepsPerOctave = 2048;
constexpr int kScaleOffset = 32768;
constexpr std::uint16_t kMaxScaleCode = 0xFFFF;

void requireFinite(std::span<const double> h) {
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!std::isfinite(h[i])) {
            throw InvalidInputError("update entry " + std::to_string(i) + " is not finite");
        }
    }
}

double l2norm(std::span<const double> h) {
    // Scaled accumulation so huge or tiny entries do not overflow.
    double maxAbs = 0.0;
    for (double v : h) maxAbs = std::max(maxAbs, std::abs(v));
    if (maxAbs == 0.0) return 0.0;
    double acc = 0.0;
    for (double v : h) {
        const double r = v / maxAbs;
        acc += r * r;
    }
    return maxAbs * std::sqrt(acc);
}

}  // namespace

ZetaRule parseZetaRule(const std::string& text) {
    if (text == "3/sqrtM" || text == "three") return ZetaRule::ThreeOverSqrtM;
    if (text == "(2+R/5)/sqrtM" || text == "rate") return ZetaRule::RateDependent;
    if (text == "fixed") return ZetaRule::Fixed;
    throw InvalidInputError("unknown zeta rule '" + text + "' (expected 3/sqrtM, (2+R/5)/sqrtM or a number)");
}

std::string toString(ZetaRule rule) {
    switch (rule) {
        case ZetaRule::Fixed: return "fixed";
        case ZetaRule::ThreeOverSqrtM: return "3/sqrtM";
        case ZetaRule::RateDependent: return "(2+R/5)/sqrtM";
    }
    return "?";
}

double normFromCode(std::uint16_t code) noexcept {
    if (code == 0) return 0.0;
    return std::exp2(static_cast<double>(static_cast<int>(code) - kNormOffset) / kNormStepsPerOctave);
}

std::uint16_t normToCode(double value) noexcept {
    if (!(value > 0.0)) return 0;
    const double c = std::round(std::log2(value) * kNormStepsPerOctave) + kNormOffset;
    return static_cast<std::uint16_t>(std::clamp(c, 1.0, static_cast<double>(kMaxNormCode)));
}

double scaleFromCode(std::uint16_t code) noexcept {
    return std::exp2(static_cast<double>(static_cast<int>(code) - kScaleOffset) / kScaleStepsPerOctave);
}

std::size_t bitBudget(std::size_t m, double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidInputError("rate must be positive and finite");
    return static_cast<std::size_t>(std::floor(static_cast<double>(m) * rate));
}

BitString serialize(const EncodedUpdate& enc) {
    BitWriter w;
    w.putBits(enc.scaleCode, kScaleCodeBits);
    w.putBits(enc.normCode, kNormCodeBits);
    w.putBits(enc.payload.bitLength, 32);
    for (std::size_t i = 0; i < enc.payload.bitLength; ++i) {
        w.putBit(((enc.payload.bytes[i / 8] >> (7 - i % 8)) & 1u) != 0);
    }
    return std::move(w).finish();
}

EncodedUpdate deserialize(const BitString& bits, std::size_t m, std::size_t dim) {
    if (dim == 0) throw InvalidInputError("lattice dimension must be positive");
    BitReader r(bits);
    EncodedUpdate enc;
    enc.scaleCode = static_cast<std::uint16_t>(r.getBits(kScaleCodeBits));
    enc.normCode = static_cast<std::uint16_t>(r.getBits(kNormCodeBits));
    const std::size_t len = r.getBits(32);
    if (len > bits.bitLength - r.position()) throw DecodeError("serialized update: payload truncated");
    BitWriter payload;
    for (std::size_t i = 0; i < len; ++i) payload.putBit(r.getBit());
    enc.payload = std::move(payload).finish();
    enc.length = m;
    enc.blocks = (m + dim - 1) / dim;
    enc.paddedLength = enc.blocks * dim;
    return enc;
}

UVeQFedCodec::UVeQFedCodec(UVeQFedConfig cfg) : cfg_{std::move(cfg)} {
    if (!(cfg_.rate > 0.0) || !std::isfinite(cfg_.rate)) throw InvalidInputError("rate must be positive and finite");
    if (cfg_.zetaRule == ZetaRule::Fixed && (!(cfg_.zetaValue > 0.0) || !std::isfinite(cfg_.zetaValue))) {
        throw InvalidInputError("fixed zeta must be positive and finite");
    }
}

double UVeQFedCodec::zeta(std::size_t blocks) const {
    const double rootM = std::sqrt(static_cast<double>(std::max<std::size_t>(blocks, 1)));
    switch (cfg_.zetaRule) {
        case ZetaRule::Fixed: return cfg_.zetaValue;
        case ZetaRule::ThreeOverSqrtM: return 3.0 / rootM;
        case ZetaRule::RateDependent: return (2.0 + cfg_.rate / 5.0) / rootM;
    }
    return cfg_.zetaValue;
}

std::vector<double> UVeQFedCodec::dithers(std::size_t blocks, std::uint64_t user, std::uint64_t round) const {
    const std::size_t dim = dimension();
    std::vector<double> z(blocks * dim);
    const std::uint64_t base = deriveKey(cfg_.masterSeed, user, round);
    for (std::size_t i = 0; i < blocks; ++i) {
        // One stream per block, so any block's dither can be drawn on its own.
        CounterRng rng{mix64(base ^ (0x9e3779b97f4a7c15ULL * (i + 1)))};
        cfg_.lattice.sampleDither(rng, z.data() + i * dim);
    }
    return z;
}

std::vector<double> UVeQFedCodec::normalizedBlocks(std::span<const double> h, double normHat) const {
    std::vector<double> out(blockCount(h.size()) * dimension(), 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] / normHat;
    return out;
}

void UVeQFedCodec::quantize(std::span<const double> normalized, std::span<const double> dither, double scale,
                            std::int64_t* coords) const {
    // Quantizing x onto scale * Lambda with dither scale * z equals quantizing
    // x / scale + z onto Lambda.
    const std::size_t dim = dimension();
    const std::size_t blocks = normalized.size() / dim;
    const double inv = 1.0 / scale;
    std::array<double, kMaxLatticeDim> x{};
    for (std::size_t i = 0; i < blocks; ++i) {
        for (std::size_t j = 0; j < dim; ++j) x[j] = normalized[i * dim + j] * inv + dither[i * dim + j];
        cfg_.lattice.nearestCoords(x.data(), coords + i * dim);
    }
}

UVeQFedCodec::RateSearchResult UVeQFedCodec::rateSearch(std::span<const double> normalized,
                                                        std::span<const double> dither,
                                                        std::size_t payloadBudget) const {
    const std::size_t dim = dimension();
    const std::size_t blocks = normalized.size() / dim;
    if (blocks == 0) return {};
    std::vector<std::int64_t> coords(normalized.size());

    // Start from the high-resolution estimate for a Gaussian source: a point
    // costs about (L/2) log2(2 pi e var) - log2(cell volume) bits.
    double meanSq = 0.0;
    for (double v : normalized) meanSq += v * v;
    meanSq = std::max(meanSq / static_cast<double>(normalized.size()), 1e-300);
    const double bitsPerBlock = static_cast<double>(payloadBudget) / static_cast<double>(blocks);
    const double log2Scale = (0.5 * static_cast<double>(dim) * std::log2(2.0 * std::numbers::pi * std::numbers::e * meanSq) -
                              std::log2(cfg_.lattice.cellVolume()) - bitsPerBlock) /
                             static_cast<double>(dim);
    const auto guess = static_cast<std::int64_t>(
        std::clamp(std::round(kScaleOffset + kScaleStepsPerOctave * log2Scale), 0.0, double{kMaxScaleCode}));

    RateSearchResult result;
    quantize(normalized, dither, scaleFromCode(static_cast<std::uint16_t>(guess)), coords.data());
    result.plan = planIndices(coords, entropyOptions());
    const auto excess = [&](std::int64_t code) {
        quantize(normalized, dither, scaleFromCode(static_cast<std::uint16_t>(code)), coords.data());
        return static_cast<double>(codewordLength(coords, entropyOptions(), result.plan)) -
               static_cast<double>(payloadBudget);
    };
    // Doubling the scale saves about L bits per block.
    const double slope = -static_cast<double>(blocks * dim) / kScaleStepsPerOctave;
    const auto found = detail::smallestFitting(0, kMaxScaleCode, guess, slope, excess);
    if (!found) {
        throw RateInfeasibleError("rate " + std::to_string(cfg_.rate) + " is infeasible for uveqfed-l" +
                                  std::to_string(dim) + " even at the coarsest lattice scale");
    }
    result.scaleCode = static_cast<std::uint16_t>(*found);
    return result;
}

EncodedUpdate UVeQFedCodec::encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const {
    requireFinite(h);
    if (h.empty()) throw InvalidInputError("update must have at least one entry");
    const std::size_t budget = bitBudget(h.size(), cfg_.rate);
    if (budget < kHeaderBits) {
        throw RateInfeasibleError("rate " + std::to_string(cfg_.rate) + " leaves no room for the " +
                                  std::to_string(kHeaderBits) + "-bit header");
    }
    const double norm = l2norm(h);
    if (norm == 0.0) return encodeAtScale(h, user, round, 0);
    const std::size_t blocks = blockCount(h.size());
    const double normHat = normFromCode(normToCode(zeta(blocks) * norm));
    const std::vector<double> normalized = normalizedBlocks(h, normHat);
    const std::vector<double> z = dithers(blocks, user, round);
    const RateSearchResult search = rateSearch(normalized, z, budget - kHeaderBits);
    EncodedUpdate enc = encodeWith(h, user, round, search.scaleCode, &search.plan);
    if (enc.totalBits() > budget) {
        throw RateInfeasibleError("encoded update exceeds its bit budget");
    }
    return enc;
}

EncodedUpdate UVeQFedCodec::encodeAtScale(std::span<const double> h, std::uint64_t user, std::uint64_t round,
                                          std::uint16_t scaleCode) const {
    return encodeWith(h, user, round, scaleCode, nullptr);
}

EncodedUpdate UVeQFedCodec::encodeWith(std::span<const double> h, std::uint64_t user, std::uint64_t round,
                                       std::uint16_t scaleCode, const CoderPlan* plan) const {
    requireFinite(h);
    EncodedUpdate enc;
    enc.length = h.size();
    enc.blocks = blockCount(h.size());
    enc.paddedLength = enc.blocks * dimension();
    const double norm = l2norm(h);
    if (norm == 0.0) return enc;
    enc.normCode = normToCode(zeta(enc.blocks) * norm);
    enc.scaleCode = scaleCode;
    enc.appliedScale = cfg_.lattice.scale() * scaleFromCode(scaleCode);
    const std::vector<double> normalized = normalizedBlocks(h, normFromCode(enc.normCode));
    const std::vector<double> z = dithers(enc.blocks, user, round);
    std::vector<std::int64_t> coords(enc.paddedLength);
    quantize(normalized, z, scaleFromCode(scaleCode), coords.data());
    enc.payload = plan != nullptr ? encodeIndices(coords, entropyOptions(), *plan)
                                  : encodeIndices(coords, entropyOptions());
    return enc;
}

std::vector<double> UVeQFedCodec::decode(const EncodedUpdate& enc, std::uint64_t user, std::uint64_t round) const {
    const std::size_t dim = dimension();
    if (enc.blocks != blockCount(enc.length) || enc.paddedLength != enc.blocks * dim) {
        throw DecodeError("encoded update geometry does not match the lattice dimension");
    }
    std::vector<double> out(enc.length, 0.0);
    if (enc.isZero()) return out;
    const IndexBlock coords = decodeIndices(enc.payload, enc.paddedLength, entropyOptions());
    const std::vector<double> z = dithers(enc.blocks, user, round);
    const double factor = normFromCode(enc.normCode) * scaleFromCode(enc.scaleCode);
    std::array<double, kMaxLatticeDim> p{};
    for (std::size_t i = 0; i < enc.blocks; ++i) {
        cfg_.lattice.latticeVector(coords.data() + i * dim, p.data());
        for (std::size_t j = 0; j < dim; ++j) {
            const std::size_t idx = i * dim + j;
            if (idx < enc.length) out[idx] = factor * (p[j] - z[idx]);
        }
    }
    return out;
}

std::vector<double> UVeQFedCodec::quantizeAtScale(std::span<const double> h, std::uint64_t user,
                                                  std::uint64_t round, std::uint16_t scaleCode) const {
    requireFinite(h);
    std::vector<double> out(h.size(), 0.0);
    const double norm = l2norm(h);
    if (norm == 0.0) return out;
    const std::size_t dim = dimension();
    const std::size_t blocks = blockCount(h.size());
    const double normHat = normFromCode(normToCode(zeta(blocks) * norm));
    const std::vector<double> normalized = normalizedBlocks(h, normHat);
    const std::vector<double> z = dithers(blocks, user, round);
    std::vector<std::int64_t> coords(blocks * dim);
    quantize(normalized, z, scaleFromCode(scaleCode), coords.data());
    const double factor = normHat * scaleFromCode(scaleCode);
    std::array<double, kMaxLatticeDim> p{};
    for (std::size_t i = 0; i < blocks; ++i) {
        cfg_.lattice.latticeVector(coords.data() + i * dim, p.data());
        for (std::size_t j = 0; j < dim; ++j) {
            const std::size_t idx = i * dim + j;
            if (idx < h.size()) out[idx] = factor * (p[j] - z[idx]);
        }
    }
    return out;
}

double UVeQFedCodec::conditionalErrorEnergy(const EncodedUpdate& enc) const {
    if (enc.isZero()) return 0.0;
    const double n = normFromCode(enc.normCode);
    const double s = scaleFromCode(enc.scaleCode);
    return n * n * s * s * static_cast<double>(enc.blocks) * cfg_.lattice.secondMoment();
}

double UVeQFedCodec::overloadFraction(std::span<const double> h) const {
    requireFinite(h);
    const double norm = l2norm(h);
    const std::size_t blocks = blockCount(h.size());
    if (norm == 0.0 || blocks == 0) return 0.0;
    const double denom = zeta(blocks) * norm;
    const std::size_t dim = dimension();
    std::size_t outside = 0;
    for (std::size_t i = 0; i < blocks; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const std::size_t idx = i * dim + j;
            if (idx < h.size()) sq += (h[idx] / denom) * (h[idx] / denom);
        }
        if (sq > 1.0) ++outside;
    }
    return static_cast<double>(outside) / static_cast<double>(blocks);
}

}  // namespace uveqfed
