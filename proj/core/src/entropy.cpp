#include "uveqfed/entropy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "range_coder.hpp"
#include "uveqfed/error.hpp"

namespace uveqfed {
namespace {

using detail::BitModel;
using detail::CountingSink;
using detail::RangeDecoder;
using detail::RangeEncoder;
using detail::VectorSink;

constexpr std::int64_t kMaxMagnitude = std::int64_t{1} << 60;
constexpr std::int64_t kMaxPrediction = std::int64_t{1} << 61;
constexpr int kCoefShift = 12;
constexpr std::int64_t kMaxCoef = std::int64_t{1} << 20;
constexpr int kBucketContexts = 24;
constexpr int kMaxBucket = 61;
constexpr int kTreeBits = 3;
constexpr int kTreeBuckets = 16;
constexpr std::array<int, 4> kModeBins = {1, 1, 2, 4};

// Models for one context set: zero flag, sign, unary bucket (floor log2 of the
// magnitude), then the top mantissa bits through a binary tree per bucket.
// Lower mantissa bits are nearly uniform and go out as bypass bits.
struct IntModel {
    BitModel zero;
    BitModel sign;
    std::array<BitModel, kBucketContexts> bucket;
    std::array<std::array<BitModel, 1 << kTreeBits>, kTreeBuckets> tree;
};

template <class Sink>
void encodeInt(RangeEncoder<Sink>& enc, IntModel& m, std::int64_t v) {
    enc.encode(m.zero, v != 0);
    if (v == 0) return;
    enc.encode(m.sign, v < 0);
    const std::uint64_t a = v < 0 ? std::uint64_t{0} - static_cast<std::uint64_t>(v) : static_cast<std::uint64_t>(v);
    const int b = 63 - std::countl_zero(a);
    for (int j = 0; j < b; ++j) enc.encode(m.bucket[std::min(j, kBucketContexts - 1)], true);
    enc.encode(m.bucket[std::min(b, kBucketContexts - 1)], false);
    const int top = std::min(b, kTreeBits);
    auto& tree = m.tree[std::min(b, kTreeBuckets - 1)];
    std::size_t node = 1;
    for (int i = 0; i < top; ++i) {
        const bool bit = ((a >> (b - 1 - i)) & 1u) != 0;
        enc.encode(tree[node], bit);
        node = 2 * node + (bit ? 1 : 0);
    }
    if (b > top) enc.encodeBypassBits(a, b - top);
}

std::int64_t decodeInt(RangeDecoder& dec, IntModel& m) {
    if (!dec.decode(m.zero)) return 0;
    const bool negative = dec.decode(m.sign);
    int b = 0;
    while (dec.decode(m.bucket[std::min(b, kBucketContexts - 1)])) {
        if (++b > kMaxBucket) throw DecodeError("entropy decode: magnitude bucket overflow");
    }
    const int top = std::min(b, kTreeBits);
    auto& tree = m.tree[std::min(b, kTreeBuckets - 1)];
    std::uint64_t a = 1;
    std::size_t node = 1;
    for (int i = 0; i < top; ++i) {
        const bool bit = dec.decode(tree[node]);
        node = 2 * node + (bit ? 1 : 0);
        a = (a << 1) | (bit ? 1u : 0u);
    }
    if (b > top) a = (a << (b - top)) | dec.decodeBypassBits(b - top);
    const auto s = static_cast<std::int64_t>(a);
    return negative ? -s : s;
}

template <class Sink>
void encodeGammaBypass(RangeEncoder<Sink>& enc, std::uint64_t n) {
    const int nb = 64 - std::countl_zero(n);
    enc.encodeBypassBits(0, nb - 1);
    enc.encodeBypassBits(n, nb);
}

std::uint64_t decodeGammaBypass(RangeDecoder& dec) {
    int zeros = 0;
    while (!dec.decodeBypass()) {
        if (++zeros > 63) throw DecodeError("entropy decode: Elias-gamma prefix too long");
    }
    std::uint64_t n = 1;
    for (int i = 0; i < zeros; ++i) n = (n << 1) | (dec.decodeBypass() ? 1u : 0u);
    return n;
}

std::size_t coefCount(std::size_t width) { return width * (width - 1) / 2; }
std::size_t coefOffset(std::size_t k) { return k * (k - 1) / 2; }

// Prediction of coordinate k from coordinates 0..k-1 of the same point, as
// floor(sum beta_j l_j / 2^12 + 1/2). `bin` receives the fractional position of
// the unrounded prediction, split into `bins` equal intervals.
std::int64_t predict(const std::int64_t* point, std::size_t k, const std::int64_t* coef, int bins, int& bin) {
    __int128 acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += static_cast<__int128>(coef[j]) * point[j];
    acc += __int128{1} << (kCoefShift - 1);
    const __int128 pred = acc >> kCoefShift;
    const auto frac = static_cast<std::int64_t>(acc - (pred << kCoefShift));
    bin = static_cast<int>((frac * bins) >> kCoefShift);
    if (pred >= kMaxPrediction || pred <= -kMaxPrediction) {
        throw DecodeError("entropy: prediction out of range");
    }
    return static_cast<std::int64_t>(pred);
}

std::size_t contextIndex(std::size_t k, int bins, int bin) {
    return k == 0 ? 0 : 1 + (k - 1) * static_cast<std::size_t>(bins) + static_cast<std::size_t>(bin);
}

// Least-squares predictor coefficients in Q12 for every coordinate k >= 1.
std::vector<std::int64_t> fitPredictor(std::span<const std::int64_t> coords, std::size_t width) {
    std::vector<std::int64_t> coef(coefCount(width), 0);
    const std::size_t points = coords.size() / width;
    if (points == 0) return coef;
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(width, width);
    for (std::size_t p = 0; p < points; ++p) {
        Eigen::Map<const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>> l(coords.data() + p * width, width);
        const Eigen::VectorXd x = l.cast<double>();
        gram.noalias() += x * x.transpose();
    }
    for (std::size_t k = 1; k < width; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const Eigen::MatrixXd a = gram.topLeftCorner(kk, kk);
        const Eigen::VectorXd rhs = gram.col(kk).head(kk);
        const Eigen::VectorXd beta = a.completeOrthogonalDecomposition().solve(rhs);
        for (std::size_t j = 0; j < k; ++j) {
            const double q = std::round(beta(static_cast<Eigen::Index>(j)) * (1 << kCoefShift));
            const double clamped = std::isfinite(q) ? std::clamp(q, -static_cast<double>(kMaxCoef),
                                                                 static_cast<double>(kMaxCoef))
                                                    : 0.0;
            coef[coefOffset(k) + j] = static_cast<std::int64_t>(clamped);
        }
    }
    return coef;
}

// Returns false if a prediction or residual leaves the codable range.
template <class Sink>
bool encodeAdaptive(std::span<const std::int64_t> coords, std::size_t width, int mode,
                    std::span<const std::int64_t> coef, Sink& sink) {
    RangeEncoder<Sink> enc(sink);
    const int bins = kModeBins[static_cast<std::size_t>(mode)];
    if (width >= 2) {
        enc.encodeBypassBits(static_cast<std::uint64_t>(mode), 2);
        if (mode > 0) {
            for (std::int64_t c : coef) encodeGammaBypass(enc, zigzag(c) + 1);
        }
    }
    std::vector<IntModel> models(1 + (width > 1 ? (width - 1) * static_cast<std::size_t>(bins) : 0));
    const std::size_t points = coords.size() / width;
    for (std::size_t p = 0; p < points; ++p) {
        const std::int64_t* point = coords.data() + p * width;
        for (std::size_t k = 0; k < width; ++k) {
            std::int64_t pred = 0;
            int bin = 0;
            if (mode > 0 && k > 0) {
                try {
                    pred = predict(point, k, coef.data() + coefOffset(k), bins, bin);
                } catch (const DecodeError&) {
                    return false;
                }
            }
            const std::int64_t residual = point[k] - pred;
            if (residual >= kMaxMagnitude * 4 || residual <= -kMaxMagnitude * 4) return false;
            encodeInt(enc, models[contextIndex(k, bins, bin)], residual);
        }
    }
    enc.finish();
    return true;
}

void validateInput(std::span<const std::int64_t> coords, const EntropyOptions& opts) {
    if (opts.width == 0) throw InvalidInputError("entropy width must be positive");
    if (coords.size() % opts.width != 0) {
        throw InvalidInputError("coordinate count " + std::to_string(coords.size()) +
                                " is not a multiple of width " + std::to_string(opts.width));
    }
    for (std::int64_t v : coords) {
        if (v >= kMaxMagnitude || v <= -kMaxMagnitude) {
            throw InvalidInputError("lattice coordinate magnitude exceeds 2^60");
        }
    }
}

struct ModeChoice {
    CoderPlan plan;
    std::size_t bytes = 0;
};

ModeChoice chooseMode(std::span<const std::int64_t> coords, std::size_t width) {
    ModeChoice best;
    {
        CountingSink sink;
        encodeAdaptive(coords, width, 0, {}, sink);
        best.bytes = detail::trimmedSize(sink);
    }
    if (width < 2) return best;
    std::vector<std::int64_t> coef = fitPredictor(coords, width);
    for (int mode = 1; mode < static_cast<int>(kModeBins.size()); ++mode) {
        CountingSink sink;
        if (!encodeAdaptive(coords, width, mode, coef, sink)) continue;
        const std::size_t bytes = detail::trimmedSize(sink);
        if (bytes < best.bytes) {
            best.plan.mode = mode;
            best.bytes = bytes;
        }
    }
    if (best.plan.mode > 0) best.plan.coefficients = std::move(coef);
    return best;
}

void validatePlan(const CoderPlan& plan, std::size_t width) {
    if (plan.mode < 0 || plan.mode >= static_cast<int>(kModeBins.size()) || (width < 2 && plan.mode != 0)) {
        throw InvalidInputError("coder plan mode is invalid for this width");
    }
    if (plan.mode > 0) {
        if (plan.coefficients.size() != coefCount(width)) throw InvalidInputError("coder plan has wrong coefficient count");
        for (std::int64_t c : plan.coefficients) {
            if (c > kMaxCoef || c < -kMaxCoef) throw InvalidInputError("coder plan coefficient out of range");
        }
    }
}

}  // namespace

BitString encodeIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts) {
    validateInput(coords, opts);
    if (opts.mode == EntropyMode::EliasGamma) {
        BitWriter w;
        for (std::int64_t v : coords) w.putEliasGamma(zigzag(v) + 1);
        return std::move(w).finish();
    }
    return encodeIndices(coords, opts, chooseMode(coords, opts.width).plan);
}

CoderPlan planIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts) {
    validateInput(coords, opts);
    if (opts.mode == EntropyMode::EliasGamma) return {};
    return chooseMode(coords, opts.width).plan;
}

BitString encodeIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts, const CoderPlan& plan) {
    validateInput(coords, opts);
    if (opts.mode == EntropyMode::EliasGamma) return encodeIndices(coords, opts);
    validatePlan(plan, opts.width);
    BitString out;
    VectorSink sink{&out.bytes};
    if (!encodeAdaptive(coords, opts.width, plan.mode, plan.coefficients, sink)) {
        out.bytes.clear();
        encodeAdaptive(coords, opts.width, 0, {}, sink);
    }
    detail::trimTail(out.bytes);
    out.bitLength = 8 * out.bytes.size();
    return out;
}

std::size_t codewordLength(std::span<const std::int64_t> coords, const EntropyOptions& opts, const CoderPlan& plan) {
    validateInput(coords, opts);
    if (opts.mode == EntropyMode::EliasGamma) return codewordLength(coords, opts);
    validatePlan(plan, opts.width);
    CountingSink sink;
    if (!encodeAdaptive(coords, opts.width, plan.mode, plan.coefficients, sink)) {
        sink = CountingSink{};
        encodeAdaptive(coords, opts.width, 0, {}, sink);
    }
    return 8 * detail::trimmedSize(sink);
}

std::size_t codewordLength(std::span<const std::int64_t> coords, const EntropyOptions& opts) {
    validateInput(coords, opts);
    if (opts.mode == EntropyMode::EliasGamma) {
        std::size_t bits = 0;
        for (std::int64_t v : coords) bits += 2 * static_cast<std::size_t>(64 - std::countl_zero(zigzag(v) + 1)) - 1;
        return bits;
    }
    return 8 * chooseMode(coords, opts.width).bytes;
}

IndexBlock decodeIndices(const BitString& bits, std::size_t count, const EntropyOptions& opts) {
    if (opts.width == 0 || count % opts.width != 0) {
        throw InvalidInputError("decode count must be a multiple of a positive width");
    }
    if (bits.bitLength > 8 * bits.bytes.size()) throw DecodeError("bitLength exceeds byte buffer");
    IndexBlock out(count);
    if (opts.mode == EntropyMode::EliasGamma) {
        BitReader r(bits);
        for (auto& v : out) {
            const std::uint64_t n = r.getEliasGamma();
            v = unzigzag(n - 1);
        }
        return out;
    }
    const std::size_t width = opts.width;
    RangeDecoder dec(std::span<const std::uint8_t>(bits.bytes.data(), (bits.bitLength + 7) / 8));
    int mode = 0;
    std::vector<std::int64_t> coef;
    if (width >= 2) {
        mode = static_cast<int>(dec.decodeBypassBits(2));
        if (mode > 0) {
            coef.resize(coefCount(width));
            for (auto& c : coef) {
                c = unzigzag(decodeGammaBypass(dec) - 1);
                if (c > kMaxCoef || c < -kMaxCoef) throw DecodeError("entropy decode: predictor coefficient out of range");
            }
        }
    }
    const int bins = kModeBins[static_cast<std::size_t>(mode)];
    std::vector<IntModel> models(1 + (width > 1 ? (width - 1) * static_cast<std::size_t>(bins) : 0));
    const std::size_t points = count / width;
    for (std::size_t p = 0; p < points; ++p) {
        std::int64_t* point = out.data() + p * width;
        for (std::size_t k = 0; k < width; ++k) {
            std::int64_t pred = 0;
            int bin = 0;
            if (mode > 0 && k > 0) pred = predict(point, k, coef.data() + coefOffset(k), bins, bin);
            point[k] = pred + decodeInt(dec, models[contextIndex(k, bins, bin)]);
        }
    }
    return out;
}

namespace {

template <class Sink>
void encodeUniformTo(std::span<const std::uint32_t> symbols, std::uint32_t levels, Sink& sink) {
    if (levels == 0 || levels > (1u << 16)) throw InvalidInputError("uniform levels must be in [1, 2^16]");
    RangeEncoder<Sink> enc(sink);
    for (std::uint32_t s : symbols) {
        if (s >= levels) throw InvalidInputError("uniform symbol out of range");
        enc.encodeUniform(s, levels);
    }
    enc.finish();
}

}  // namespace

BitString encodeUniformSymbols(std::span<const std::uint32_t> symbols, std::uint32_t levels) {
    BitString out;
    VectorSink sink{&out.bytes};
    encodeUniformTo(symbols, levels, sink);
    detail::trimTail(out.bytes);
    out.bitLength = 8 * out.bytes.size();
    return out;
}

std::size_t uniformSymbolsLength(std::span<const std::uint32_t> symbols, std::uint32_t levels) {
    CountingSink sink;
    encodeUniformTo(symbols, levels, sink);
    return 8 * detail::trimmedSize(sink);
}

std::size_t uniformSymbolsMaxLength(std::size_t count, std::uint32_t levels) {
    // The range sequence does not depend on the symbol values, so the untrimmed
    // byte count is the same for every input.
    const std::vector<std::uint32_t> zeros(count, 0);
    CountingSink sink;
    encodeUniformTo(zeros, levels, sink);
    return 8 * sink.count;
}

std::vector<std::uint32_t> decodeUniformSymbols(const BitString& bits, std::size_t count, std::uint32_t levels) {
    if (levels == 0 || levels > (1u << 16)) throw InvalidInputError("uniform levels must be in [1, 2^16]");
    if (bits.bitLength > 8 * bits.bytes.size()) throw DecodeError("bitLength exceeds byte buffer");
    RangeDecoder dec(std::span<const std::uint8_t>(bits.bytes.data(), (bits.bitLength + 7) / 8));
    std::vector<std::uint32_t> out(count);
    for (auto& s : out) s = dec.decodeUniform(levels);
    return out;
}

void BitWriter::putBit(bool bit) {
    if (bits_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
}

void BitWriter::putBits(std::uint64_t value, int count) {
    for (int i = count - 1; i >= 0; --i) putBit(((value >> i) & 1u) != 0);
}

void BitWriter::putEliasGamma(std::uint64_t n) {
    if (n == 0) throw InvalidInputError("Elias-gamma codes positive integers only");
    const int nb = 64 - std::countl_zero(n);
    putBits(0, nb - 1);
    putBits(n, nb);
}

BitString BitWriter::finish() && { return BitString{std::move(bytes_), bits_}; }

bool BitReader::getBit() {
    if (pos_ >= bits_.bitLength) throw DecodeError("bit reader: read past end at bit " + std::to_string(pos_));
    const bool bit = ((bits_.bytes[pos_ / 8] >> (7 - pos_ % 8)) & 1u) != 0;
    ++pos_;
    return bit;
}

std::uint64_t BitReader::getBits(int count) {
    std::uint64_t v = 0;
    for (int i = 0; i < count; ++i) v = (v << 1) | (getBit() ? 1u : 0u);
    return v;
}

std::uint64_t BitReader::getEliasGamma() {
    int zeros = 0;
    while (!getBit()) {
        if (++zeros > 63) throw DecodeError("Elias-gamma prefix longer than 63 bits");
    }
    return (std::uint64_t{1} << zeros) | getBits(zeros);
}

void writeBitString(std::ostream& os, const BitString& bits) {
    if (bits.bitLength > std::numeric_limits<std::uint32_t>::max()) {
        throw InvalidInputError("bit string too long for a 32-bit length header");
    }
    const auto len = static_cast<std::uint32_t>(bits.bitLength);
    const std::array<char, 4> header = {static_cast<char>(len & 0xFF), static_cast<char>((len >> 8) & 0xFF),
                                        static_cast<char>((len >> 16) & 0xFF), static_cast<char>(len >> 24)};
    os.write(header.data(), header.size());
    os.write(reinterpret_cast<const char*>(bits.bytes.data()), static_cast<std::streamsize>((bits.bitLength + 7) / 8));
}

BitString readBitString(std::istream& is) {
    std::array<unsigned char, 4> header{};
    if (!is.read(reinterpret_cast<char*>(header.data()), 4)) throw FormatError("bit string: truncated length header");
    BitString bits;
    bits.bitLength = header[0] | (header[1] << 8) | (header[2] << 16) | (static_cast<std::size_t>(header[3]) << 24);
    bits.bytes.resize((bits.bitLength + 7) / 8);
    if (!is.read(reinterpret_cast<char*>(bits.bytes.data()), static_cast<std::streamsize>(bits.bytes.size()))) {
        throw FormatError("bit string: payload truncated at byte offset " + std::to_string(4 + is.gcount()));
    }
    return bits;
}

}  // namespace uveqfed
