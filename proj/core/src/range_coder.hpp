#pragma once

// Integer-only binary range coder (carry-propagating, LZMA style) with
// count-based adaptive bit models. Every operation is exact integer
// arithmetic, so encoder and decoder agree on every platform.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uveqfed/error.hpp"

namespace uveqfed::detail {

inline constexpr int kProbBits = 16;
inline constexpr std::uint32_t kProbOne = 1u << kProbBits;
inline constexpr std::uint32_t kTop = 1u << 24;

// Krichevsky-Trofimov estimate from bit counts, halved when the total gets large.
class BitModel {
public:
    std::uint32_t p0() const noexcept {
        const std::uint64_t num = (2 * static_cast<std::uint64_t>(n0_) + 1) << kProbBits;
        const std::uint64_t den = 2 * static_cast<std::uint64_t>(n0_ + n1_) + 2;
        std::uint64_t p = num / den;
        if (p < 1) p = 1;
        if (p > kProbOne - 1) p = kProbOne - 1;
        return static_cast<std::uint32_t>(p);
    }

    void update(bool bit) noexcept {
        if (bit) {
            ++n1_;
        } else {
            ++n0_;
        }
        if (n0_ + n1_ >= kLimit) {
            n0_ = (n0_ + 1) / 2;
            n1_ = (n1_ + 1) / 2;
        }
    }

private:
    static constexpr std::uint32_t kLimit = 1u << 16;
    std::uint32_t n0_ = 0;
    std::uint32_t n1_ = 0;
};

struct VectorSink {
    std::vector<std::uint8_t>* out;
    void put(std::uint8_t b) { out->push_back(b); }
};

struct CountingSink {
    std::size_t count = 0;
    std::size_t zeroRun = 0;
    void put(std::uint8_t b) noexcept {
        ++count;
        zeroRun = b == 0 ? zeroRun + 1 : 0;
    }
};

// The first byte the carry logic emits is always zero and is never written.
// Up to four trailing zero bytes of the flush are trimmed; the decoder reads
// missing bytes as zero.
inline constexpr std::size_t kMaxTrim = 4;

template <class Sink>
class RangeEncoder {
public:
    explicit RangeEncoder(Sink& sink) : sink_{sink} {}

    void encode(BitModel& model, bool bit) {
        encodeWithProb(model.p0(), bit);
        model.update(bit);
    }

    void encodeBypass(bool bit) { encodeWithProb(kProbOne / 2, bit); }

    void encodeBypassBits(std::uint64_t value, int count) {
        for (int i = count - 1; i >= 0; --i) encodeBypass(((value >> i) & 1u) != 0);
    }

    // Uniform symbol in [0, levels), levels <= 2^16.
    void encodeUniform(std::uint32_t value, std::uint32_t levels) {
        range_ /= levels;
        low_ += static_cast<std::uint64_t>(value) * range_;
        normalize();
    }

    void finish() {
        for (int i = 0; i < 5; ++i) shiftLow();
    }

private:
    void encodeWithProb(std::uint32_t p0, bool bit) {
        const auto bound = static_cast<std::uint32_t>((static_cast<std::uint64_t>(range_) * p0) >> kProbBits);
        if (!bit) {
            range_ = bound;
        } else {
            low_ += bound;
            range_ -= bound;
        }
        normalize();
    }

    void normalize() {
        while (range_ < kTop) {
            range_ <<= 8;
            shiftLow();
        }
    }

    void shiftLow() {
        if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            const auto carry = static_cast<std::uint8_t>(low_ >> 32);
            std::uint8_t temp = cache_;
            do {
                emit(static_cast<std::uint8_t>(temp + carry));
                temp = 0xFF;
            } while (--cacheSize_ != 0);
            cache_ = static_cast<std::uint8_t>(low_ >> 24);
        }
        ++cacheSize_;
        low_ = (low_ & 0x00FFFFFFu) << 8;
    }

    void emit(std::uint8_t b) {
        if (first_) {
            first_ = false;
            return;
        }
        sink_.put(b);
    }

    Sink& sink_;
    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cacheSize_ = 1;
    bool first_ = true;
};

// Trim the flush tail of an encoded buffer.
inline void trimTail(std::vector<std::uint8_t>& bytes) {
    std::size_t trimmed = 0;
    while (!bytes.empty() && bytes.back() == 0 && trimmed < kMaxTrim) {
        bytes.pop_back();
        ++trimmed;
    }
}

inline std::size_t trimmedSize(const CountingSink& sink) {
    return sink.count - (sink.zeroRun < kMaxTrim ? sink.zeroRun : kMaxTrim);
}

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_{bytes} {
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
    }

    bool decode(BitModel& model) {
        const bool bit = decodeWithProb(model.p0());
        model.update(bit);
        return bit;
    }

    bool decodeBypass() { return decodeWithProb(kProbOne / 2); }

    std::uint64_t decodeBypassBits(int count) {
        std::uint64_t v = 0;
        for (int i = 0; i < count; ++i) v = (v << 1) | (decodeBypass() ? 1u : 0u);
        return v;
    }

    std::uint32_t decodeUniform(std::uint32_t levels) {
        range_ /= levels;
        const std::uint32_t v = code_ / range_;
        if (v >= levels) throw DecodeError("range decoder: uniform symbol out of range");
        code_ -= v * range_;
        normalize();
        return v;
    }

private:
    bool decodeWithProb(std::uint32_t p0) {
        const auto bound = static_cast<std::uint32_t>((static_cast<std::uint64_t>(range_) * p0) >> kProbBits);
        bool bit;
        if (code_ < bound) {
            range_ = bound;
            bit = false;
        } else {
            code_ -= bound;
            range_ -= bound;
            bit = true;
        }
        normalize();
        return bit;
    }

    void normalize() {
        while (range_ < kTop) {
            range_ <<= 8;
            code_ = (code_ << 8) | next();
        }
    }

    std::uint8_t next() {
        if (pos_ < bytes_.size()) return bytes_[pos_++];
        if (++overread_ > kMaxTrim) throw DecodeError("range decoder: read past end of payload");
        return 0;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::size_t overread_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace uveqfed::detail
