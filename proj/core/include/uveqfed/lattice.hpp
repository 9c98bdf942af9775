#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "uveqfed/random.hpp"

namespace uveqfed {

inline constexpr std::size_t kMaxLatticeDim = 4;

struct LatticePoint {
    std::vector<std::int64_t> integerCoords;
    std::vector<double> realCoords;  // scale * G * integerCoords
};

struct SecondMoment {
    double value = 0.0;
    std::size_t sampleCount = 0;
    double standardError = 0.0;
};

// A lattice {s * G * l : l integer} of dimension L <= 4. The basis vectors are
// the columns of G. Immutable once built; copies are cheap.
//
// Nearest-point search rounds in an LLL-reduced basis and scans the 3^L
// neighbourhood of the rounded point. Exact ties resolve to the candidate with
// the lexicographically smallest integer coordinates (in G's basis), which keeps
// the encoder and decoder in agreement on cell boundaries.
class Lattice {
public:
    static Lattice scalar(double scale = 1.0);

    // Hexagonal lattice spanned by (2, 0) and (1, 1/sqrt(3)).
    static Lattice hexagonal(double scale = 1.0);

    // `generator` is an L x L row-major matrix whose columns are the basis.
    static Lattice fromGenerator(std::size_t dim, std::span<const double> generator,
                                 double scale = 1.0);

    // "scalar" or "hex".
    static Lattice preset(std::string_view name, double scale = 1.0);

    std::size_t dimension() const noexcept { return dim_; }
    double scale() const noexcept { return scale_; }

    // Unscaled generator entry G(row, col).
    double generator(std::size_t row, std::size_t col) const noexcept {
        return gen_[row * kMaxLatticeDim + col];
    }
    double scaledGenerator(std::size_t row, std::size_t col) const noexcept {
        return scale_ * generator(row, col);
    }

    // Volume of the basic cell, |det(s G)|.
    double cellVolume() const noexcept { return volume_; }

    // Cached Monte-Carlo estimate of E||z||^2 for z uniform on the basic cell.
    double secondMoment() const noexcept { return moment_.value; }
    const SecondMoment& secondMomentEstimate() const noexcept { return moment_; }

    // Half widths of the axis-aligned box that contains the basic cell.
    std::span<const double> boxHalfWidths() const noexcept { return {box_.data(), dim_}; }

    // Same lattice with every length multiplied by `factor` (moment scales by factor^2).
    Lattice scaled(double factor) const;

    LatticePoint nearestPoint(std::span<const double> x) const;

    // Hot path for nearestPoint: x and l both hold dimension() entries.
    void nearestCoords(const double* x, std::int64_t* l) const noexcept;

    // x = s * G * l.
    void latticeVector(const std::int64_t* l, double* x) const noexcept;

    // True iff x quantizes to the origin under nearestCoords.
    bool inBasicCell(const double* x) const noexcept;

    // Uniform draw on the basic cell by rejection from boxHalfWidths().
    void sampleDither(CounterRng& rng, double* z) const noexcept;
    std::vector<double> sampleDither(CounterRng& rng) const;

private:
    Lattice() = default;
    void build(std::size_t dim, std::span<const double> generator, double scale);
    void computeBoundingBox();
    void setShape(bool hex) noexcept;
    bool nearestFast(const double* x, std::int64_t* l) const noexcept;

    using Vec = std::array<double, kMaxLatticeDim>;
    using IVec = std::array<std::int64_t, kMaxLatticeDim>;

    std::size_t dim_ = 0;
    double scale_ = 1.0;
    std::array<double, kMaxLatticeDim * kMaxLatticeDim> gen_{};      // G, row-major
    std::array<double, kMaxLatticeDim * kMaxLatticeDim> reducedInv_{};  // (s G U)^-1
    std::array<std::int64_t, kMaxLatticeDim * kMaxLatticeDim> unimod_{};  // U
    std::vector<IVec> offsetCoords_;  // U * delta, delta in {-1,0,1}^L (lexicographic)
    std::vector<Vec> offsetPoints_;   // s G U delta
    Vec box_{};
    double volume_ = 0.0;
    SecondMoment moment_;
    // Presets take a rounding shortcut: the scalar lattice rounds directly and
    // the hexagonal one rounds in its two rectangular cosets.
    enum class Shape : std::uint8_t { General, Scalar, Hex };
    Shape shape_ = Shape::General;
    std::array<double, 2> step_{};
    std::array<double, 2> stepInv_{};
};

// Monte-Carlo estimate of the normalized second moment with its standard error.
// Requires n >= 10^4.
SecondMoment estimateSecondMoment(const Lattice& lattice, std::size_t n, CounterRng& rng);

}  // namespace uveqfed
