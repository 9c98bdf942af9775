#include "uveqfed/compressor.hpp"

#include <cmath>
#include <cstring>

#include "uveqfed/baselines.hpp"
#include "uveqfed/error.hpp"

namespace uveqfed {
namespace {

std::uint32_t floatBits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof u);
    return u;
}

float bitsFloat(std::uint64_t u) {
    const auto v = static_cast<std::uint32_t>(u);
    float f;
    std::memcpy(&f, &v, sizeof f);
    return f;
}

void putPayload(BitWriter& w, const BitString& payload) {
    for (std::size_t i = 0; i < payload.bitLength; ++i) w.putBit(((payload.bytes[i / 8] >> (7 - i % 8)) & 1u) != 0);
}

// The payload is the tail of the message, so its length is implicit.
BitString takeRest(BitReader& r, const BitString& msg) {
    BitWriter w;
    while (r.position() < msg.bitLength) w.putBit(r.getBit());
    return std::move(w).finish();
}

class UVeQFedCompressor final : public Compressor {
public:
    UVeQFedCompressor(UVeQFedConfig cfg, std::string name) : codec_{std::move(cfg)}, name_{std::move(name)} {}

    std::string name() const override { return name_; }

    WireUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const override {
        const EncodedUpdate enc = codec_.encode(h, user, round);
        return {serialize(enc), enc.totalBits()};
    }

    std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t user,
                               std::uint64_t round) const override {
        return codec_.decode(deserialize(wire.message, m, codec_.dimension()), user, round);
    }

    std::optional<double> conditionalErrorEnergy(const WireUpdate& wire, std::size_t m) const override {
        return codec_.conditionalErrorEnergy(deserialize(wire.message, m, codec_.dimension()));
    }

private:
    UVeQFedCodec codec_;
    std::string name_;
};

class QsgdCompressor final : public Compressor {
public:
    QsgdCompressor(double rate, std::uint64_t seed) : rate_{rate}, seed_{seed} {}
    std::string name() const override { return "qsgd"; }

    WireUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const override {
        const std::uint32_t levels = qsgdLevelSearch(h, rate_, seed_, user, round);
        const QsgdUpdate enc = qsgdEncode(h, levels, seed_, user, round);
        BitWriter w;
        w.putBits(floatBits(enc.norm), 32);
        w.putBits(enc.levels, 24);
        putPayload(w, enc.payload);
        return {std::move(w).finish(), enc.totalBits()};
    }

    std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t, std::uint64_t) const override {
        BitReader r(wire.message);
        QsgdUpdate enc;
        enc.norm = bitsFloat(r.getBits(32));
        enc.levels = static_cast<std::uint32_t>(r.getBits(24));
        if (enc.levels == 0) throw DecodeError("qsgd: zero level count");
        enc.length = m;
        enc.payload = takeRest(r, wire.message);
        return qsgdDecode(enc);
    }

private:
    double rate_;
    std::uint64_t seed_;
};

class RotatedCompressor final : public Compressor {
public:
    RotatedCompressor(double rate, std::uint64_t seed) : rate_{rate}, seed_{seed} {}
    std::string name() const override { return "rotated"; }

    WireUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const override {
        const RotatedUpdate enc = rotatedEncode(h, rate_, seed_, user, round);
        BitWriter w;
        w.putBits(floatBits(enc.lo), 32);
        w.putBits(floatBits(enc.hi), 32);
        putPayload(w, enc.payload);
        return {std::move(w).finish(), enc.totalBits()};
    }

    std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t user,
                               std::uint64_t round) const override {
        BitReader r(wire.message);
        RotatedUpdate enc;
        enc.lo = bitsFloat(r.getBits(32));
        enc.hi = bitsFloat(r.getBits(32));
        enc.length = m;
        enc.levels = rotatedLevels(m, rate_);
        enc.payload = takeRest(r, wire.message);
        return rotatedDecode(enc, seed_, user, round);
    }

private:
    double rate_;
    std::uint64_t seed_;
};

class MaskedCompressor final : public Compressor {
public:
    MaskedCompressor(double rate, std::uint64_t seed) : rate_{rate}, seed_{seed} {}
    std::string name() const override { return "masked"; }

    WireUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const override {
        const MaskedUpdate enc = maskedEncode(h, rate_, seed_, user, round);
        BitWriter w;
        w.putBits(floatBits(enc.lo), 32);
        w.putBits(floatBits(enc.hi), 32);
        putPayload(w, enc.payload);
        return {std::move(w).finish(), enc.totalBits()};
    }

    std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t user,
                               std::uint64_t round) const override {
        BitReader r(wire.message);
        MaskedUpdate enc;
        enc.lo = bitsFloat(r.getBits(32));
        enc.hi = bitsFloat(r.getBits(32));
        enc.length = m;
        enc.kept = maskKeptCount(m, rate_);
        enc.payload = takeRest(r, wire.message);
        enc.levels = maskedLevels(m, rate_);
        return maskedDecode(enc, seed_, user, round);
    }

private:
    double rate_;
    std::uint64_t seed_;
};

class IdentityCompressor final : public Compressor {
public:
    std::string name() const override { return "none"; }

    WireUpdate encode(std::span<const double> h, std::uint64_t, std::uint64_t) const override {
        BitWriter w;
        for (double v : h) {
            std::uint64_t u;
            std::memcpy(&u, &v, sizeof u);
            w.putBits(u, 64);
        }
        const std::size_t bits = w.bitLength();
        return {std::move(w).finish(), bits};
    }

    std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t, std::uint64_t) const override {
        BitReader r(wire.message);
        std::vector<double> out(m);
        for (auto& v : out) {
            const std::uint64_t u = r.getBits(64);
            std::memcpy(&v, &u, sizeof v);
        }
        return out;
    }
};

}  // namespace

const std::vector<std::string>& compressorKinds() {
    static const std::vector<std::string> kinds = {"uveqfed-l1", "uveqfed-l2", "uveqfed", "qsgd",
                                                   "rotated",    "masked",     "none"};
    return kinds;
}

std::unique_ptr<Compressor> makeCompressor(const CompressorSpec& spec) {
    if (spec.kind == "none") return std::make_unique<IdentityCompressor>();
    if (!(spec.rate > 0.0) || !std::isfinite(spec.rate)) {
        throw InvalidInputError("compressor rate must be positive and finite");
    }
    if (spec.kind == "qsgd") return std::make_unique<QsgdCompressor>(spec.rate, spec.seed);
    if (spec.kind == "rotated") return std::make_unique<RotatedCompressor>(spec.rate, spec.seed);
    if (spec.kind == "masked") return std::make_unique<MaskedCompressor>(spec.rate, spec.seed);
    if (spec.kind == "uveqfed-l1" || spec.kind == "uveqfed-l2" || spec.kind == "uveqfed") {
        std::string lattice = spec.lattice;
        if (lattice.empty()) lattice = spec.kind == "uveqfed-l1" ? "scalar" : "hex";
        UVeQFedConfig cfg;
        cfg.lattice = Lattice::preset(lattice);
        cfg.zetaRule = spec.zetaRule;
        cfg.zetaValue = spec.zetaValue;
        cfg.rate = spec.rate;
        cfg.masterSeed = spec.seed;
        std::string name = spec.kind;
        if (spec.kind == "uveqfed") name += "-" + lattice;
        return std::make_unique<UVeQFedCompressor>(std::move(cfg), std::move(name));
    }
    throw InvalidInputError("unknown compressor '" + spec.kind + "'");
}

}  // namespace uveqfed
