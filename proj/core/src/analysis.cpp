#include "uveqfed/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "uveqfed/compressor.hpp"
#include "uveqfed/datamodel.hpp"
#include "uveqfed/error.hpp"
#include "uveqfed/parallel.hpp"

namespace uveqfed {

namespace {

// Trials are split into fixed chunks so the reduction order, and with it the
// result, does not depend on the thread count.
constexpr std::size_t kTrialChunks = 16;

struct MomentAccumulator {
    double energy = 0.0;
    double energySq = 0.0;
    std::vector<double> sum;
    std::vector<double> sumSq;
};

double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double normalTwoSidedQuantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidInputError("tail probability must lie in (0, 1)");
    double lo = 0.0;
    double hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (std::erfc(mid / std::sqrt(2.0)) > p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double familyWiseThreshold(double perTest, std::size_t tests) {
    if (tests <= 1) return perTest;
    const double alpha = std::erfc(perTest / std::sqrt(2.0));
    return std::max(perTest, normalTwoSidedQuantile(alpha / static_cast<double>(tests)));
}

Theorem1Report checkTheorem1(const UVeQFedConfig& cfg, std::span<const std::vector<double>> hs,
                             const Theorem1Options& options) {
    if (options.trials < 2) throw InvalidInputError("need at least two trials");
    const UVeQFedCodec codec(cfg);
    const SecondMoment& moment = cfg.lattice.secondMomentEstimate();
    const double relMomentSe = moment.value > 0.0 ? moment.standardError / moment.value : 0.0;
    const double energyLimit = familyWiseThreshold(options.energySigmas, hs.size());

    Theorem1Report report;
    report.check.name = "error second moment";
    report.check.pass = !hs.empty();
    for (std::size_t c = 0; c < hs.size(); ++c) {
        const std::vector<double>& h = hs[c];
        const std::size_t m = h.size();
        // The rate search pins the scale; fresh dithers (one round index per
        // trial) then sample the conditional error at that scale.
        const EncodedUpdate pinned = codec.encode(h, c, 0);
        const double predicted = codec.conditionalErrorEnergy(pinned);

        std::vector<MomentAccumulator> parts(kTrialChunks);
        parallelFor(kTrialChunks, options.threads, [&](std::size_t chunk) {
            MomentAccumulator& acc = parts[chunk];
            acc.sum.assign(m, 0.0);
            acc.sumSq.assign(m, 0.0);
            for (std::size_t j = chunk; j < options.trials; j += kTrialChunks) {
                const std::vector<double> q = codec.quantizeAtScale(h, c, j + 1, pinned.scaleCode);
                double e2 = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double e = q[i] - h[i];
                    e2 += e * e;
                    acc.sum[i] += e;
                    acc.sumSq[i] += e * e;
                }
                acc.energy += e2;
                acc.energySq += e2 * e2;
            }
        });
        MomentAccumulator total;
        total.sum.assign(m, 0.0);
        total.sumSq.assign(m, 0.0);
        for (const auto& p : parts) {
            total.energy += p.energy;
            total.energySq += p.energySq;
            for (std::size_t i = 0; i < m; ++i) {
                total.sum[i] += p.sum[i];
                total.sumSq[i] += p.sumSq[i];
            }
        }

        const auto n = static_cast<double>(options.trials);
        ErrorMomentCase r;
        r.index = c;
        for (double v : h) r.normSq += v * v;
        r.predicted = predicted;
        r.measured = total.energy / n;
        const double energyVar = std::max(0.0, (total.energySq - n * r.measured * r.measured) / (n - 1.0));
        const double trialSe = std::sqrt(energyVar / n);
        r.standardError = std::hypot(trialSe, predicted * relMomentSe);
        r.ratio = predicted > 0.0 ? r.measured / predicted : std::numeric_limits<double>::quiet_NaN();
        r.z = r.standardError > 0.0 ? (r.measured - predicted) / r.standardError : 0.0;

        double grand = 0.0;
        double grandVar = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double mu = total.sum[i] / n;
            const double var = std::max(0.0, (total.sumSq[i] - n * mu * mu) / (n - 1.0));
            const double se = std::sqrt(var / n);
            if (se > 0.0) r.maxCoordZ = std::max(r.maxCoordZ, std::abs(mu) / se);
            grand += mu;
            grandVar += var / n;
        }
        r.meanZ = grandVar > 0.0 ? grand / std::sqrt(grandVar) : 0.0;

        const double coordLimit = familyWiseThreshold(options.coordinateSigmas, m);
        r.pass = predicted > 0.0 && std::abs(r.ratio - 1.0) <= options.ratioTolerance &&
                 std::abs(r.z) <= energyLimit && r.maxCoordZ <= coordLimit &&
                 std::abs(r.meanZ) <= options.coordinateSigmas;
        report.check.pass = report.check.pass && r.pass;
        report.check.details.push_back(fmt::format(
            "h[{}] m={} predicted={:.6g} measured={:.6g} ratio={:.5f} z={:+.2f} (limit {:.2f}) "
            "max|coord z|={:.2f} (limit {:.2f}) grand z={:+.2f} {}",
            c, m, predicted, r.measured, r.ratio, r.z, energyLimit, r.maxCoordZ, coordLimit, r.meanZ,
            r.pass ? "PASS" : "FAIL"));
        report.cases.push_back(r);
    }
    double worst = 0.0;
    for (const auto& r : report.cases) worst = std::max(worst, std::abs(r.ratio - 1.0));
    report.check.summary = fmt::format("{} vectors, {} trials each, worst |ratio - 1| = {:.4f}", hs.size(),
                                       options.trials, worst);
    return report;
}

Theorem2Report checkTheorem2(std::span<const RunLog> runs, double requiredFraction) {
    if (runs.empty()) throw InvalidInputError("need at least one run");
    const std::size_t n = runs.front().records.size();
    for (const auto& run : runs) {
        if (run.records.size() != n) throw InvalidInputError("runs log different rounds");
    }
    Theorem2Report report;
    report.check.name = "aggregation error bound";
    std::size_t held = 0;
    std::size_t checked = 0;
    double errSum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t round = runs.front().records[i].round;
        if (round == 0) continue;
        double err = 0.0;
        double bound = 0.0;
        for (const auto& run : runs) {
            const RoundRecord& rec = run.records[i];
            if (rec.round != round) throw InvalidInputError("runs log different rounds");
            if (!rec.boundRHS) throw InvalidInputError("runs were made without bound tracking");
            err += rec.aggErrorSq;
            bound += *rec.boundRHS;
        }
        err /= static_cast<double>(runs.size());
        bound /= static_cast<double>(runs.size());
        report.rounds.push_back(round);
        report.meanError.push_back(err);
        report.meanBound.push_back(bound);
        ++checked;
        errSum += err;
        if (err <= bound) {
            ++held;
        } else {
            report.check.details.push_back(
                fmt::format("round {}: mean error {:.6g} exceeds bound {:.6g}", round, err, bound));
        }
    }
    if (checked == 0) throw InvalidInputError("runs contain no aggregation rounds");
    report.passFraction = static_cast<double>(held) / static_cast<double>(checked);
    report.overallMeanError = errSum / static_cast<double>(checked);
    report.check.pass = report.passFraction >= requiredFraction;
    report.check.summary = fmt::format("{} runs, bound held in {}/{} rounds ({:.2f}%), mean error {:.6g}",
                                       runs.size(), held, checked, 100.0 * report.passFraction,
                                       report.overallMeanError);
    return report;
}

double theorem3B(const TheoryConstants& c) {
    if (c.xiSq.size() != c.alpha.size()) throw InvalidInputError("xi and alpha need one entry per user");
    double sq = 0.0;
    double lin = 0.0;
    for (std::size_t k = 0; k < c.alpha.size(); ++k) {
        sq += c.alpha[k] * c.alpha[k] * c.xiSq[k];
        lin += c.alpha[k] * c.xiSq[k];
    }
    const auto tau = static_cast<double>(c.tau);
    return (1.0 + 4.0 * c.errorFactor * tau * tau) * sq + 6.0 * c.smooth * c.psi +
           8.0 * (tau - 1.0) * (tau - 1.0) * lin;
}

void TheoryConstants::finalize() {
    gamma = theorem3Gamma(strong, smooth, tau);
    b = theorem3B(*this);
}

double theorem3Bound(const TheoryConstants& c, std::uint64_t t, double initDistSq) {
    const auto tau = static_cast<double>(c.tau);
    const double first = (c.strong * c.strong + tau * tau * c.b) / (tau * c.strong);
    const double second = c.gamma * initDistSq;
    return c.smooth / (2.0 * (static_cast<double>(t) + c.gamma)) * std::max(first, second);
}

TheoryConstants theoryConstantsFromRuns(std::span<const RunLog> runs, double smooth, double strong, std::size_t tau,
                                        double psi, std::size_t blocks, double sigma2) {
    if (runs.empty()) throw InvalidInputError("need at least one run");
    TheoryConstants c;
    c.smooth = smooth;
    c.strong = strong;
    c.tau = tau;
    c.psi = psi;
    c.blocks = blocks;
    c.sigma2 = sigma2;
    c.alpha = runs.front().alpha;
    c.xiSq.assign(c.alpha.size(), 0.0);
    for (const auto& run : runs) {
        if (run.xiSq.size() != c.xiSq.size()) throw InvalidInputError("runs have different user counts");
        for (std::size_t k = 0; k < c.xiSq.size(); ++k) c.xiSq[k] = std::max(c.xiSq[k], run.xiSq[k]);
        c.errorFactor = std::max(c.errorFactor, run.maxErrorFactor);
    }
    if (blocks > 0 && sigma2 > 0.0) c.zeta = std::sqrt(c.errorFactor / (static_cast<double>(blocks) * sigma2));
    c.finalize();
    return c;
}

double logLogSlope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidInputError("need at least two matching points");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidInputError("log-log fit needs positive values");
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const auto n = static_cast<double>(x.size());
    const double den = n * sxx - sx * sx;
    if (!(den > 0.0)) throw InvalidInputError("log-log fit needs distinct x values");
    return (n * sxy - sx * sy) / den;
}

Theorem3Report checkTheorem3(std::span<const RunLog> runs, const TheoryConstants& c, double optimalLoss,
                             double initDistSq, double maxSlope) {
    if (runs.empty()) throw InvalidInputError("need at least one run");
    const std::size_t n = runs.front().records.size();
    Theorem3Report report;
    report.check.name = "strongly convex convergence";
    bool within = true;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t t = runs.front().records[i].t;
        double sub = 0.0;
        for (const auto& run : runs) {
            if (run.records.size() != n || run.records[i].t != t) throw InvalidInputError("runs log different rounds");
            sub += run.records[i].loss - optimalLoss;
        }
        sub /= static_cast<double>(runs.size());
        const double bound = theorem3Bound(c, t, initDistSq);
        report.t.push_back(t);
        report.meanSuboptimality.push_back(sub);
        report.bound.push_back(bound);
        if (sub > bound) {
            within = false;
            report.check.details.push_back(
                fmt::format("t={}: mean suboptimality {:.6g} exceeds bound {:.6g}", t, sub, bound));
        }
    }
    // Fit over the final decade of t, skipping points that are not positive.
    const double tMax = report.t.empty() ? 0.0 : static_cast<double>(report.t.back());
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < report.t.size(); ++i) {
        const auto t = static_cast<double>(report.t[i]);
        if (t >= tMax / 10.0 && t > 0.0 && report.meanSuboptimality[i] > 0.0) {
            xs.push_back(t);
            ys.push_back(report.meanSuboptimality[i]);
        }
    }
    bool slopeOk = false;
    if (xs.size() >= 2) {
        report.slope = logLogSlope(xs, ys);
        slopeOk = report.slope <= maxSlope;
    } else {
        report.slope = std::numeric_limits<double>::quiet_NaN();
        report.check.details.push_back("too few positive points in the final decade for a slope fit");
    }
    report.check.pass = within && slopeOk;
    double worst = 0.0;
    for (std::size_t i = 0; i < report.t.size(); ++i) {
        worst = std::max(worst, report.meanSuboptimality[i] / report.bound[i]);
    }
    report.check.summary =
        fmt::format("{} runs, {} logged rounds, max suboptimality/bound = {:.3g}, final-decade slope = {:.3f} "
                    "(need <= {:.2f}), b = {:.4g}, gamma = {:.4g}",
                    runs.size(), report.t.size(), worst, report.slope, maxSlope, c.b, c.gamma);
    return report;
}

std::vector<SweepRow> distortionSweep(const SweepConfig& cfg) {
    if (cfg.realizations == 0 || cfg.rows == 0 || cfg.cols == 0) throw InvalidInputError("empty sweep");
    const std::size_t m = cfg.rows * cfg.cols;
    // Realizations are shared by every compressor and rate.
    std::vector<std::vector<double>> inputs(cfg.realizations);
    parallelFor(cfg.realizations, cfg.threads, [&](std::size_t r) {
        Eigen::MatrixXd h = genGaussianMatrix(cfg.rows, cfg.cols, deriveKey(cfg.seed, r));
        if (cfg.correlated) {
            if (cfg.rows != cfg.cols) throw InvalidInputError("correlated sweep needs square matrices");
            h = genCorrelated(h);
        }
        std::vector<double>& v = inputs[r];
        v.resize(m);
        for (std::size_t i = 0; i < cfg.rows; ++i) {
            for (std::size_t j = 0; j < cfg.cols; ++j) {
                v[i * cfg.cols + j] = h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
    });

    std::vector<SweepRow> rows;
    for (double rate : cfg.rates) {
        for (const auto& kind : cfg.compressors) {
            CompressorSpec spec;
            spec.kind = kind;
            spec.rate = rate;
            spec.seed = cfg.seed;
            const auto comp = makeCompressor(spec);
            std::vector<double> mse(cfg.realizations);
            std::vector<std::size_t> bits(cfg.realizations);
            parallelFor(cfg.realizations, cfg.threads, [&](std::size_t r) {
                const std::vector<double>& h = inputs[r];
                const WireUpdate wire = comp->encode(h, r, 0);
                const std::vector<double> d = comp->decode(wire, m, r, 0);
                double e = 0.0;
                for (std::size_t i = 0; i < m; ++i) e += (d[i] - h[i]) * (d[i] - h[i]);
                mse[r] = e / static_cast<double>(m);
                bits[r] = wire.budgetBits;
            });
            SweepRow row;
            row.data = cfg.correlated ? "correlated" : "iid";
            row.compressor = comp->name();
            row.rate = rate;
            row.mse = mean(mse);
            double var = 0.0;
            for (double v : mse) var += (v - row.mse) * (v - row.mse);
            const auto n = static_cast<double>(mse.size());
            row.standardError = n > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
            row.maxBits = *std::max_element(bits.begin(), bits.end());
            row.budgetBits = bitBudget(m, rate);
            rows.push_back(row);
        }
    }
    return rows;
}

void writeSweepCsv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "data,compressor,rate,mse,mseStdErr,maxBits,budgetBits\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{:.8g},{:.4g},{},{}\n", r.data, r.compressor, r.rate, r.mse, r.standardError,
                           r.maxBits, r.budgetBits);
    }
}

CheckReport checkSweepOrdering(std::span<const SweepRow> rows) {
    CheckReport report;
    report.name = "distortion ordering";
    report.pass = true;
    std::map<std::tuple<std::string, double, std::string>, double> mse;
    std::map<std::string, std::map<double, std::vector<std::string>>> seen;
    for (const auto& r : rows) {
        mse[{r.data, r.rate, r.compressor}] = r.mse;
        seen[r.data][r.rate].push_back(r.compressor);
        if (r.maxBits > r.budgetBits) {
            report.pass = false;
            report.details.push_back(fmt::format("{} {} R={}: {} bits exceed the budget {}", r.data, r.compressor,
                                                 r.rate, r.maxBits, r.budgetBits));
        }
    }
    auto get = [&](const std::string& data, double rate, const std::string& kind) -> double {
        const auto it = mse.find({data, rate, kind});
        if (it == mse.end()) throw InvalidInputError("sweep lacks " + kind + " at rate " + std::to_string(rate));
        return it->second;
    };
    auto fail = [&](std::string line) {
        report.pass = false;
        report.details.push_back(std::move(line));
    };
    for (const auto& [data, byRate] : seen) {
        for (const auto& [rate, kinds] : byRate) {
            const double l2 = get(data, rate, "uveqfed-l2");
            const double l1 = get(data, rate, "uveqfed-l1");
            const double qsgd = get(data, rate, "qsgd");
            const double rotated = get(data, rate, "rotated");
            const double masked = get(data, rate, "masked");
            if (!(l2 < l1)) fail(fmt::format("{} R={}: l2 {:.4g} not below l1 {:.4g}", data, rate, l2, l1));
            if (!(l1 < qsgd)) fail(fmt::format("{} R={}: l1 {:.4g} not below qsgd {:.4g}", data, rate, l1, qsgd));
            if (!(qsgd < std::min(rotated, masked))) {
                fail(fmt::format("{} R={}: qsgd {:.4g} not below rotated {:.4g} and masked {:.4g}", data, rate, qsgd,
                                 rotated, masked));
            }
        }
        // Monotone in the rate for every compressor.
        std::map<std::string, std::vector<std::pair<double, double>>> curves;
        for (const auto& r : rows) {
            if (r.data == data) curves[r.compressor].emplace_back(r.rate, r.mse);
        }
        for (auto& [kind, pts] : curves) {
            std::sort(pts.begin(), pts.end());
            for (std::size_t i = 1; i < pts.size(); ++i) {
                if (pts[i].second > pts[i - 1].second) {
                    fail(fmt::format("{} {}: MSE rises from R={} to R={}", data, kind, pts[i - 1].first,
                                     pts[i].first));
                }
            }
        }
    }
    if (seen.count("iid") && seen.count("correlated")) {
        for (const auto& [rate, kinds] : seen["iid"]) {
            if (!seen["correlated"].count(rate)) continue;
            const double iidRatio = get("iid", rate, "uveqfed-l2") / get("iid", rate, "uveqfed-l1");
            const double corRatio = get("correlated", rate, "uveqfed-l2") / get("correlated", rate, "uveqfed-l1");
            report.details.push_back(
                fmt::format("R={}: l2/l1 ratio iid {:.4f}, correlated {:.4f}", rate, iidRatio, corRatio));
            if (!(corRatio < iidRatio)) fail(fmt::format("R={}: no extra gain on correlated data", rate));
        }
    }
    report.summary = report.pass ? "ordering, monotonicity and correlation gain hold at every rate"
                                 : "ordering violated (see details)";
    return report;
}

void writeReport(std::ostream& out, const CheckReport& report) {
    out << (report.pass ? "PASS " : "FAIL ") << report.name << ": " << report.summary << '\n';
    for (const auto& line : report.details) out << "  " << line << '\n';
}

}  // namespace uveqfed
