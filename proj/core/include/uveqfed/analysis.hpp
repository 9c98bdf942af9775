#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uveqfed/codec.hpp"
#include "uveqfed/flsim.hpp"

namespace uveqfed {

struct CheckReport {
    std::string name;
    bool pass = false;
    std::string summary;               // one line with the headline numbers
    std::vector<std::string> details;  // one line per case or violation
};

// Upper two-sided normal quantile: P(|Z| > z) = p.
double normalTwoSidedQuantile(double p);

// Threshold that keeps the family-wise two-sided error of `tests` z-tests at
// the level of a single test at `perTest` standard errors.
double familyWiseThreshold(double perTest, std::size_t tests);

// Monte-Carlo check of E{||eps||^2 | h} = normHat^2 M sigma^2 of the applied
// lattice, at the scale the rate search picks for each h.
struct ErrorMomentCase {
    std::size_t index = 0;
    double normSq = 0.0;
    double predicted = 0.0;
    double measured = 0.0;
    double standardError = 0.0;  // combined: trials and the second-moment estimate
    double ratio = 0.0;          // measured / predicted
    double z = 0.0;              // (measured - predicted) / standardError
    double maxCoordZ = 0.0;      // largest |mean| / SE over coordinates
    double meanZ = 0.0;          // grand mean error over coordinates, in SEs
    bool pass = false;
};

struct Theorem1Options {
    std::size_t trials = 10000;
    double ratioTolerance = 0.02;
    double energySigmas = 3.0;      // per case, corrected for the number of cases
    double coordinateSigmas = 4.0;  // per coordinate, corrected for the number of coordinates
    unsigned threads = 1;
};

struct Theorem1Report {
    CheckReport check;
    std::vector<ErrorMomentCase> cases;
};

Theorem1Report checkTheorem1(const UVeQFedConfig& cfg, std::span<const std::vector<double>> hs,
                             const Theorem1Options& options = {});

// Measured aggregation error against the per-round bound, both averaged over
// runs (seeds) of the same configuration. Needs runs with trackBound.
struct Theorem2Report {
    CheckReport check;
    std::vector<std::size_t> rounds;
    std::vector<double> meanError;
    std::vector<double> meanBound;
    double passFraction = 0.0;
    double overallMeanError = 0.0;  // over rounds >= 1
};

Theorem2Report checkTheorem2(std::span<const RunLog> runs, double requiredFraction = 0.99);

struct TheoryConstants {
    double smooth = 0.0;       // rho_s
    double strong = 0.0;       // rho_c
    double gamma = 0.0;        // tau max(1, 4 rho_s / rho_c)
    std::size_t tau = 1;
    double zeta = 0.0;
    std::size_t blocks = 0;    // M
    double sigma2 = 0.0;       // second moment of the lattice
    double errorFactor = 0.0;  // M zeta^2 sigma^2; larger effective values come from the run
    double psi = 0.0;
    std::vector<double> xiSq;
    std::vector<double> alpha;
    double b = 0.0;

    // Fills gamma and b from the other fields.
    void finalize();
};

// b = (1 + 4 errorFactor tau^2) sum alpha^2 xi^2 + 6 rho_s psi + 8 (tau - 1)^2 sum alpha xi^2.
double theorem3B(const TheoryConstants& c);

// rho_s / (2 (t + gamma)) max((rho_c^2 + tau^2 b) / (tau rho_c), gamma ||w_0 - w°||^2).
double theorem3Bound(const TheoryConstants& c, std::uint64_t t, double initDistSq);

// Constants gathered from a batch of runs: per-user xi^2 and the error factor
// take their maxima over runs.
TheoryConstants theoryConstantsFromRuns(std::span<const RunLog> runs, double smooth, double strong, std::size_t tau,
                                        double psi, std::size_t blocks, double sigma2);

struct Theorem3Report {
    CheckReport check;
    std::vector<std::uint64_t> t;
    std::vector<double> meanSuboptimality;
    std::vector<double> bound;
    double slope = 0.0;  // log-log over the final decade of t
};

Theorem3Report checkTheorem3(std::span<const RunLog> runs, const TheoryConstants& c, double optimalLoss,
                             double initDistSq, double maxSlope = -0.8);

// Least-squares slope of log y against log x.
double logLogSlope(std::span<const double> x, std::span<const double> y);

// Per-entry squared error of each compressor on rows x cols Gaussian matrices.
struct SweepConfig {
    std::size_t rows = 128;
    std::size_t cols = 128;
    std::vector<std::string> compressors{"uveqfed-l2", "uveqfed-l1", "qsgd", "rotated", "masked"};
    std::vector<double> rates{2, 3, 4, 5, 6};
    std::size_t realizations = 100;
    bool correlated = false;  // Sigma H Sigma^T instead of H
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct SweepRow {
    std::string data;  // "iid" or "correlated"
    std::string compressor;
    double rate = 0.0;
    double mse = 0.0;
    double standardError = 0.0;
    std::size_t maxBits = 0;
    std::size_t budgetBits = 0;
};

std::vector<SweepRow> distortionSweep(const SweepConfig& cfg);

void writeSweepCsv(std::ostream& out, std::span<const SweepRow> rows);

// Ordering l2 < l1 < qsgd < {rotated, masked} at every rate and data kind,
// MSE non-increasing in the rate, the budget respected, and a smaller l2/l1
// ratio on correlated data at every rate.
CheckReport checkSweepOrdering(std::span<const SweepRow> rows);

void writeReport(std::ostream& out, const CheckReport& report);

}  // namespace uveqfed
