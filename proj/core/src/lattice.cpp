#include "uveqfed/lattice.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "uveqfed/error.hpp"

namespace uveqfed {
namespace {

constexpr std::size_t kMomentSamples = std::size_t{1} << 20;
constexpr std::uint64_t kMomentSeed = 0x5ec0d0a11a77ULL;

using DynMat = Eigen::MatrixXd;

// LLL reduction (delta = 0.99) of the columns of `basis`, accumulating the
// integer column operations into `unimodular`.
void lllReduce(DynMat& basis, Eigen::MatrixXd& unimodular) {
    const auto n = basis.cols();
    unimodular = Eigen::MatrixXd::Identity(n, n);
    if (n < 2) return;

    auto gramSchmidt = [&](DynMat& ortho, DynMat& mu) {
        ortho = basis;
        mu = DynMat::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                mu(i, j) = basis.col(i).dot(ortho.col(j)) / ortho.col(j).squaredNorm();
                ortho.col(i) -= mu(i, j) * ortho.col(j);
            }
        }
    };

    DynMat ortho;
    DynMat mu;
    gramSchmidt(ortho, mu);
    Eigen::Index k = 1;
    int guard = 0;
    while (k < n && guard++ < 10000) {
        for (Eigen::Index j = k - 1; j >= 0; --j) {
            const double q = std::round(mu(k, j));
            if (q != 0.0) {
                basis.col(k) -= q * basis.col(j);
                unimodular.col(k) -= q * unimodular.col(j);
                gramSchmidt(ortho, mu);
            }
        }
        const double lhs = ortho.col(k).squaredNorm();
        const double rhs = (0.99 - mu(k, k - 1) * mu(k, k - 1)) * ortho.col(k - 1).squaredNorm();
        if (lhs >= rhs) {
            ++k;
        } else {
            basis.col(k).swap(basis.col(k - 1));
            unimodular.col(k).swap(unimodular.col(k - 1));
            gramSchmidt(ortho, mu);
            k = std::max<Eigen::Index>(k - 1, 1);
        }
    }
}

// Round to nearest (ties to even) without a libm call; needs |v| < 2^51.
inline double roundNearest(double v) noexcept {
    constexpr double kShift = 0x1.8p52;
    return (v + kShift) - kShift;
}

constexpr double kFastRange = 0x1.0p51;

bool lexLess(const std::int64_t* a, const std::int64_t* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] != b[i]) return a[i] < b[i];
    }
    return false;
}

}  // namespace

Lattice Lattice::scalar(double scale) {
    static const Lattice unit = [] {
        const double g[] = {1.0};
        Lattice lat = fromGenerator(1, g, 1.0);
        lat.setShape(false);
        return lat;
    }();
    return scale == 1.0 ? unit : unit.scaled(scale);
}

Lattice Lattice::hexagonal(double scale) {
    static const Lattice unit = [] {
        // Columns (2, 0) and (1, 1/sqrt(3)).
        const double g[] = {2.0, 1.0, 0.0, 1.0 / std::sqrt(3.0)};
        Lattice lat = fromGenerator(2, g, 1.0);
        lat.setShape(true);
        return lat;
    }();
    return scale == 1.0 ? unit : unit.scaled(scale);
}

Lattice Lattice::preset(std::string_view name, double scale) {
    if (name == "scalar") return scalar(scale);
    if (name == "hex" || name == "hexagonal") return hexagonal(scale);
    throw InvalidInputError("unknown lattice preset '" + std::string(name) + "'");
}

Lattice Lattice::fromGenerator(std::size_t dim, std::span<const double> generator, double scale) {
    Lattice lattice;
    lattice.build(dim, generator, scale);
    CounterRng rng{deriveKey(kMomentSeed, dim)};
    // Estimate on the unit-scale lattice so every scaled copy shares the same draw.
    const SecondMoment unit = estimateSecondMoment(lattice.scaled(1.0 / scale), kMomentSamples, rng);
    lattice.moment_ = {unit.value * scale * scale, unit.sampleCount,
                       unit.standardError * scale * scale};
    return lattice;
}

void Lattice::build(std::size_t dim, std::span<const double> generator, double scale) {
    if (dim == 0 || dim > kMaxLatticeDim) {
        throw InvalidInputError("lattice dimension must be in [1, 4], got " + std::to_string(dim));
    }
    if (generator.size() != dim * dim) {
        throw InvalidInputError("generator must hold L*L entries");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw InvalidInputError("lattice scale must be positive and finite");
    }
    for (double v : generator) {
        if (!std::isfinite(v)) throw InvalidInputError("generator entries must be finite");
    }
    dim_ = dim;
    scale_ = scale;
    DynMat g(dim, dim);
    for (std::size_t r = 0; r < dim; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            gen_[r * kMaxLatticeDim + c] = generator[r * dim + c];
            g(r, c) = generator[r * dim + c];
        }
    }
    const double det = std::abs(g.determinant());
    if (!(det > 1e-12 * std::pow(std::max(1e-300, g.norm()), static_cast<double>(dim)))) {
        throw InvalidInputError("generator matrix is singular");
    }

    DynMat reduced = scale * g;
    DynMat unimodular;
    lllReduce(reduced, unimodular);
    const DynMat inverse = reduced.inverse();
    for (std::size_t r = 0; r < dim; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            reducedInv_[r * kMaxLatticeDim + c] = inverse(r, c);
            unimod_[r * kMaxLatticeDim + c] = static_cast<std::int64_t>(std::llround(unimodular(r, c)));
        }
    }
    volume_ = std::abs(reduced.determinant());

    // Neighbour offsets in lexicographic order of delta.
    std::size_t count = 1;
    for (std::size_t i = 0; i < dim; ++i) count *= 3;
    offsetCoords_.assign(count, IVec{});
    offsetPoints_.assign(count, Vec{});
    for (std::size_t idx = 0; idx < count; ++idx) {
        IVec delta{};
        std::size_t rem = idx;
        for (std::size_t i = dim; i-- > 0;) {
            delta[i] = static_cast<std::int64_t>(rem % 3) - 1;
            rem /= 3;
        }
        IVec coords{};
        for (std::size_t r = 0; r < dim; ++r) {
            for (std::size_t c = 0; c < dim; ++c) coords[r] += unimod_[r * kMaxLatticeDim + c] * delta[c];
        }
        offsetCoords_[idx] = coords;
        latticeVector(coords.data(), offsetPoints_[idx].data());
    }
    computeBoundingBox();
}

void Lattice::computeBoundingBox() {
    // The basic cell is cut out by 2 x.v <= |v|^2 over the non-zero neighbour
    // vectors v; keeping only the 3^L - 1 reduced-basis neighbours yields a
    // superset of the cell, which is all rejection sampling needs. Its extent
    // along each axis is attained at a vertex of that polytope.
    std::vector<Vec> normals;
    for (const auto& p : offsetPoints_) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) n2 += p[i] * p[i];
        if (n2 > 0.0) normals.push_back(p);
    }
    box_.fill(0.0);
    const std::size_t nc = normals.size();
    std::vector<std::size_t> pick(dim_);
    for (std::size_t i = 0; i < dim_; ++i) pick[i] = i;
    auto rhs = [&](const Vec& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) s += v[i] * v[i];
        return s;
    };
    while (true) {
        Eigen::MatrixXd a(dim_, dim_);
        Eigen::VectorXd b(dim_);
        for (std::size_t r = 0; r < dim_; ++r) {
            for (std::size_t c = 0; c < dim_; ++c) a(r, c) = 2.0 * normals[pick[r]][c];
            b(r) = rhs(normals[pick[r]]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
        if (lu.isInvertible()) {
            const Eigen::VectorXd x = lu.solve(b);
            bool feasible = true;
            for (const auto& v : normals) {
                double dot = 0.0;
                for (std::size_t i = 0; i < dim_; ++i) dot += 2.0 * v[i] * x(i);
                if (dot > rhs(v) * (1.0 + 1e-9) + 1e-12) {
                    feasible = false;
                    break;
                }
            }
            if (feasible) {
                for (std::size_t i = 0; i < dim_; ++i) box_[i] = std::max(box_[i], std::abs(x(i)));
            }
        }
        // Next L-combination of constraint indices.
        std::size_t i = dim_;
        while (i > 0 && pick[i - 1] == nc - dim_ + i - 1) --i;
        if (i == 0) break;
        ++pick[i - 1];
        for (std::size_t j = i; j < dim_; ++j) pick[j] = pick[j - 1] + 1;
    }
    for (std::size_t i = 0; i < dim_; ++i) box_[i] *= 1.0 + 1e-9;
}

Lattice Lattice::scaled(double factor) const {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
        throw InvalidInputError("scale factor must be positive and finite");
    }
    Lattice out = *this;
    out.scale_ = scale_ * factor;
    for (std::size_t i = 0; i < kMaxLatticeDim * kMaxLatticeDim; ++i) out.reducedInv_[i] /= factor;
    for (auto& p : out.offsetPoints_) {
        for (std::size_t i = 0; i < dim_; ++i) p[i] = 0.0;
    }
    for (std::size_t idx = 0; idx < out.offsetPoints_.size(); ++idx) {
        out.latticeVector(out.offsetCoords_[idx].data(), out.offsetPoints_[idx].data());
    }
    for (std::size_t i = 0; i < dim_; ++i) out.box_[i] = box_[i] * factor;
    out.volume_ = volume_ * std::pow(factor, static_cast<double>(dim_));
    out.moment_.value = moment_.value * factor * factor;
    out.moment_.standardError = moment_.standardError * factor * factor;
    if (shape_ != Shape::General) out.setShape(shape_ == Shape::Hex);
    return out;
}

void Lattice::latticeVector(const std::int64_t* l, double* x) const noexcept {
    for (std::size_t r = 0; r < dim_; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) acc += gen_[r * kMaxLatticeDim + c] * static_cast<double>(l[c]);
        x[r] = scale_ * acc;
    }
}

void Lattice::setShape(bool hex) noexcept {
    shape_ = hex ? Shape::Hex : Shape::Scalar;
    step_ = hex ? std::array<double, 2>{2.0 * scale_, 2.0 * scale_ / std::sqrt(3.0)} : std::array<double, 2>{scale_, 0.0};
    stepInv_ = {1.0 / step_[0], hex ? 1.0 / step_[1] : 0.0};
}

bool Lattice::nearestFast(const double* x, std::int64_t* l) const noexcept {
    // Near-ties return false so the caller falls back to the exhaustive search
    // and its tie rule.
    constexpr double kTieSlack = 1e-9;
    constexpr double kEdge = 0.5 - kTieSlack;
    const double u0 = x[0] * stepInv_[0];
    if (!(std::abs(u0) < kFastRange)) return false;
    if (shape_ == Shape::Scalar) {
        const double p = roundNearest(u0);
        if (std::abs(u0 - p) > kEdge) return false;
        l[0] = static_cast<std::int64_t>(p);
        return true;
    }
    // Coset c holds the points (s (2 p + c), s (2 q + c) / sqrt 3), with
    // coordinates l = (p - q, 2 q + c).
    const double v0 = x[1] * stepInv_[1];
    if (!(std::abs(v0) < kFastRange)) return false;
    const double u1 = u0 - 0.5;
    const double v1 = v0 - 0.5;
    const double p0 = roundNearest(u0);
    const double q0 = roundNearest(v0);
    const double p1 = roundNearest(u1);
    const double q1 = roundNearest(v1);
    if (std::abs(u0 - p0) > kEdge || std::abs(v0 - q0) > kEdge || std::abs(u1 - p1) > kEdge ||
        std::abs(v1 - q1) > kEdge) {
        return false;
    }
    const double dx0 = (u0 - p0) * step_[0];
    const double dy0 = (v0 - q0) * step_[1];
    const double dx1 = (u1 - p1) * step_[0];
    const double dy1 = (v1 - q1) * step_[1];
    const double d0 = dx0 * dx0 + dy0 * dy0;
    const double d1 = dx1 * dx1 + dy1 * dy1;
    if (std::abs(d0 - d1) <= kTieSlack * (d0 + d1)) return false;
    // Branch-free coset choice; the comparison is a coin flip for random input.
    const std::int64_t odd = d1 < d0;
    const auto p = static_cast<std::int64_t>(p0) + odd * (static_cast<std::int64_t>(p1) - static_cast<std::int64_t>(p0));
    const auto q = static_cast<std::int64_t>(q0) + odd * (static_cast<std::int64_t>(q1) - static_cast<std::int64_t>(q0));
    l[0] = p - q;
    l[1] = 2 * q + odd;
    return true;
}

void Lattice::nearestCoords(const double* x, std::int64_t* l) const noexcept {
    if (shape_ != Shape::General && nearestFast(x, l)) return;
    // Babai rounding in the reduced basis, mapped back to G's coordinates.
    IVec rounded{};
    for (std::size_t r = 0; r < dim_; ++r) {
        double u = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) u += reducedInv_[r * kMaxLatticeDim + c] * x[c];
        rounded[r] = static_cast<std::int64_t>(std::floor(u + 0.5));
    }
    IVec base{};
    for (std::size_t r = 0; r < dim_; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) base[r] += unimod_[r * kMaxLatticeDim + c] * rounded[c];
    }
    Vec basePoint{};
    latticeVector(base.data(), basePoint.data());
    Vec residual{};
    for (std::size_t i = 0; i < dim_; ++i) residual[i] = x[i] - basePoint[i];

    double best = std::numeric_limits<double>::infinity();
    std::size_t bestIdx = 0;
    const std::size_t count = offsetPoints_.size();
    for (std::size_t idx = 0; idx < count; ++idx) {
        const Vec& off = offsetPoints_[idx];
        double d = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            const double e = residual[i] - off[i];
            d += e * e;
        }
        if (d < best) {
            best = d;
            bestIdx = idx;
        } else if (d == best) {
            IVec cand{};
            IVec cur{};
            for (std::size_t i = 0; i < dim_; ++i) {
                cand[i] = base[i] + offsetCoords_[idx][i];
                cur[i] = base[i] + offsetCoords_[bestIdx][i];
            }
            if (lexLess(cand.data(), cur.data(), dim_)) bestIdx = idx;
        }
    }
    for (std::size_t i = 0; i < dim_; ++i) l[i] = base[i] + offsetCoords_[bestIdx][i];
}

LatticePoint Lattice::nearestPoint(std::span<const double> x) const {
    if (x.size() != dim_) {
        throw InvalidInputError("point dimension " + std::to_string(x.size()) +
                                " does not match lattice dimension " + std::to_string(dim_));
    }
    for (std::size_t r = 0; r < dim_; ++r) {
        if (!std::isfinite(x[r])) throw InvalidInputError("nearestPoint: non-finite input");
        double u = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) u += reducedInv_[r * kMaxLatticeDim + c] * x[c];
        if (std::abs(u) > 0x1.0p52) throw InvalidInputError("nearestPoint: input out of range");
    }
    LatticePoint p;
    p.integerCoords.resize(dim_);
    p.realCoords.resize(dim_);
    nearestCoords(x.data(), p.integerCoords.data());
    latticeVector(p.integerCoords.data(), p.realCoords.data());
    return p;
}

bool Lattice::inBasicCell(const double* x) const noexcept {
    IVec l{};
    nearestCoords(x, l.data());
    for (std::size_t i = 0; i < dim_; ++i) {
        if (l[i] != 0) return false;
    }
    return true;
}

void Lattice::sampleDither(CounterRng& rng, double* z) const noexcept {
    if (shape_ == Shape::Scalar) {
        // The basic cell is (-s/2, s/2] under the tie rule.
        z[0] = step_[0] * (0.5 - rng.uniform());
        return;
    }
    if (shape_ == Shape::Hex) {
        // A uniform point of the fundamental parallelogram, reduced modulo
        // the lattice, is uniform on the basic cell. A clean (non-tie) fast
        // rounding leaves the remainder strictly inside the cell.
        IVec l{};
        while (true) {
            const double a = rng.uniform();
            const double b = rng.uniform();
            const double x[2] = {scale_ * (gen_[0] * a + gen_[1] * b),
                                 scale_ * (gen_[kMaxLatticeDim] * a + gen_[kMaxLatticeDim + 1] * b)};
            const bool clean = nearestFast(x, l.data());
            if (!clean) nearestCoords(x, l.data());
            Vec p{};
            latticeVector(l.data(), p.data());
            z[0] = x[0] - p[0];
            z[1] = x[1] - p[1];
            if (clean || inBasicCell(z)) return;
        }
    }
    do {
        for (std::size_t i = 0; i < dim_; ++i) z[i] = rng.uniform(-box_[i], box_[i]);
    } while (!inBasicCell(z));
}

std::vector<double> Lattice::sampleDither(CounterRng& rng) const {
    std::vector<double> z(dim_);
    sampleDither(rng, z.data());
    return z;
}

SecondMoment estimateSecondMoment(const Lattice& lattice, std::size_t n, CounterRng& rng) {
    if (n < 10000) throw InvalidInputError("estimateSecondMoment needs at least 10^4 samples");
    const std::size_t dim = lattice.dimension();
    std::array<double, kMaxLatticeDim> z{};
    // Welford accumulation of ||z||^2.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        lattice.sampleDither(rng, z.data());
        double sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) sq += z[i] * z[i];
        const double delta = sq - mean;
        mean += delta / static_cast<double>(k + 1);
        m2 += delta * (sq - mean);
    }
    const double variance = m2 / static_cast<double>(n - 1);
    return {mean, n, std::sqrt(variance / static_cast<double>(n))};
}

}  // namespace uveqfed
