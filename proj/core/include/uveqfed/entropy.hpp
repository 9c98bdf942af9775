#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace uveqfed {

struct BitString {
    std::vector<std::uint8_t> bytes;
    std::size_t bitLength = 0;  // authoritative; pad bits are zero

    friend bool operator==(const BitString&, const BitString&) = default;
};

// Concatenated integer coordinates of consecutive lattice points.
using IndexBlock = std::vector<std::int64_t>;

enum class EntropyMode {
    // Adaptive binary range coder. Coordinates are grouped into points of
    // `width` entries; for width >= 2 each coordinate may be predicted from the
    // earlier coordinates of its point by a transmitted linear predictor.
    Adaptive,
    // Zig-zag + Elias-gamma per coordinate. Kept as a reference code.
    EliasGamma,
};

struct EntropyOptions {
    std::size_t width = 1;
    EntropyMode mode = EntropyMode::Adaptive;
};

BitString encodeIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts = {});

// Coder configuration for the Adaptive mode: prediction mode and predictor
// coefficients. Both travel in the stream, so a plan fitted on one block can
// be reused for similar blocks (the rate search does this) and the decoder
// needs no side information.
struct CoderPlan {
    int mode = 0;
    std::vector<std::int64_t> coefficients;
};

// The plan encodeIndices would pick for these coordinates.
CoderPlan planIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts = {});
BitString encodeIndices(std::span<const std::int64_t> coords, const EntropyOptions& opts, const CoderPlan& plan);
std::size_t codewordLength(std::span<const std::int64_t> coords, const EntropyOptions& opts, const CoderPlan& plan);

// Throws DecodeError on a malformed stream.
IndexBlock decodeIndices(const BitString& bits, std::size_t count, const EntropyOptions& opts = {});

// bitLength of encodeIndices(coords, opts) without building the byte buffer.
std::size_t codewordLength(std::span<const std::int64_t> coords, const EntropyOptions& opts = {});

// Symbols uniform on [0, levels) (levels <= 2^16), range coded back to back.
BitString encodeUniformSymbols(std::span<const std::uint32_t> symbols, std::uint32_t levels);
std::vector<std::uint32_t> decodeUniformSymbols(const BitString& bits, std::size_t count,
                                                std::uint32_t levels);
std::size_t uniformSymbolsLength(std::span<const std::uint32_t> symbols, std::uint32_t levels);
// Upper bound on uniformSymbolsLength over all symbol sequences of `count` entries.
std::size_t uniformSymbolsMaxLength(std::size_t count, std::uint32_t levels);

constexpr std::uint64_t zigzag(std::int64_t v) noexcept {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
constexpr std::int64_t unzigzag(std::uint64_t u) noexcept {
    return static_cast<std::int64_t>(u >> 1) ^ -static_cast<std::int64_t>(u & 1);
}

// MSB-first bit packing.
class BitWriter {
public:
    void putBit(bool bit);
    void putBits(std::uint64_t value, int count);
    // n >= 1.
    void putEliasGamma(std::uint64_t n);
    std::size_t bitLength() const noexcept { return bits_; }
    BitString finish() &&;

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bits_ = 0;
};

class BitReader {
public:
    explicit BitReader(const BitString& bits) : bits_{bits} {}
    bool getBit();
    std::uint64_t getBits(int count);
    std::uint64_t getEliasGamma();
    std::size_t position() const noexcept { return pos_; }

private:
    const BitString& bits_;
    std::size_t pos_ = 0;
};

// Little-endian 32-bit bitLength header followed by the bytes.
void writeBitString(std::ostream& os, const BitString& bits);
BitString readBitString(std::istream& is);

}  // namespace uveqfed
