#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uveqfed/codec.hpp"
#include "uveqfed/entropy.hpp"

namespace uveqfed {

// One user's uplink message.
struct WireUpdate {
    BitString message;         // full serialized update
    std::size_t budgetBits = 0; // bits counted against floor(m * R)
};

// Common face of UVeQFed and the baselines so the simulator and the sweeps
// can treat them alike. Implementations are immutable and thread-safe.
class Compressor {
public:
    virtual ~Compressor() = default;
    virtual std::string name() const = 0;
    virtual WireUpdate encode(std::span<const double> h, std::uint64_t user, std::uint64_t round) const = 0;
    virtual std::vector<double> decode(const WireUpdate& wire, std::size_t m, std::uint64_t user,
                                       std::uint64_t round) const = 0;
    // Expected squared error given the message, when the scheme has a closed form.
    virtual std::optional<double> conditionalErrorEnergy(const WireUpdate&, std::size_t) const {
        return std::nullopt;
    }
};

struct CompressorSpec {
    // uveqfed-l1 | uveqfed-l2 | uveqfed | qsgd | rotated | masked | none
    std::string kind = "uveqfed-l2";
    double rate = 4.0;
    std::string lattice;  // overrides the preset of a uveqfed kind when set
    ZetaRule zetaRule = ZetaRule::RateDependent;
    double zetaValue = 1.0;
    std::uint64_t seed = 0;
};

std::unique_ptr<Compressor> makeCompressor(const CompressorSpec& spec);

// Kinds accepted by makeCompressor.
const std::vector<std::string>& compressorKinds();

}  // namespace uveqfed
