#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uveqfed/compressor.hpp"
#include "uveqfed/datamodel.hpp"
#include "uveqfed/random.hpp"

namespace uveqfed {

using ParamVector = std::vector<double>;

struct RoundState {
    ParamVector global;              // w_t
    std::vector<ParamVector> local;  // w_t^(k)
    std::uint64_t t = 0;
    std::size_t tau = 1;
};

// gamma = tau * max(1, 4 rho_s / rho_c).
double theorem3Gamma(double strong, double smooth, std::size_t tau);

// eta_t = tau / (rho_c (t + gamma)).
double theorem3StepSize(std::uint64_t t, double strong, double smooth, std::size_t tau);

struct StepSchedule {
    enum class Kind { Constant, Theorem3, Table };
    Kind kind = Kind::Constant;
    double eta = 1e-2;         // Constant
    double strong = 0.0;       // Theorem3: rho_c
    double smooth = 0.0;       // Theorem3: rho_s
    std::vector<double> table; // Table: eta_t = table[min(t, size - 1)]

    static StepSchedule constant(double eta);
    static StepSchedule theorem3(double strong, double smooth);
    static StepSchedule fromTable(std::vector<double> table);

    double at(std::uint64_t t, std::size_t tau) const;
};

// One local SGD step of user k on `data`: a batch of `batchSize` indices drawn
// uniformly with replacement (0 means the full local dataset). Returns the
// squared norm of the stochastic gradient. Throws DivergedError on non-finite
// gradients.
double localStep(RoundState& state, std::size_t k, const Model& model, const Dataset& data, std::size_t batchSize,
                 double eta, CounterRng& rng);

// w <- w + sum_k alpha_k decoded_k, then every local copy <- w. Throws
// InvalidInputError unless there is exactly one update of the right length per user.
void aggregate(RoundState& state, std::span<const ParamVector> decoded, std::span<const double> alpha);

struct FederationConfig {
    std::size_t users = 0;            // must match the number of datasets
    std::vector<double> alpha;        // empty: n_k / sum n_j
    std::size_t tau = 1;
    StepSchedule schedule;
    CompressorSpec compressor;        // kind "none" disables quantization
    std::size_t rounds = 1;
    std::size_t batchSize = 1;        // 0: full local batch
    double initStd = 0.0;             // w_0 ~ N(0, initStd^2)
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::size_t logEvery = 1;         // log rounds that are multiples of this
    bool logSpaced = false;           // log about 20 rounds per decade instead
    bool trackBound = false;          // fill boundRHS with the aggregation-error bound
};

struct RoundRecord {
    std::size_t round = 0;                  // aggregations performed so far
    std::uint64_t t = 0;                    // local steps performed so far
    double loss = 0.0;                      // sum_k alpha_k F_k(w_t)
    std::vector<double> userLoss;
    double accuracy = 0.0;                  // on the test set, NaN without one
    double aggErrorSq = 0.0;                // ||w_t - w_t^des||^2 of the last aggregation
    double bitsPerUser = 0.0;               // mean message size of the last aggregation
    std::optional<double> boundRHS;         // aggregation-error bound for the last aggregation
    double wallSeconds = 0.0;
};

struct RunLog {
    std::string compressor;
    std::vector<RoundRecord> records;
    ParamVector finalWeights;
    std::vector<double> alpha;
    std::vector<double> xiSq;            // per-user running max squared gradient norm, with margin
    double maxErrorFactor = 0.0;         // max over users and rounds of E||eps_k||^2 / ||h_k||^2
    double initialLoss = 0.0;
};

// Relative margin applied to the running max of squared gradient norms.
inline constexpr double kXiMargin = 1.1;

// Runs `rounds` aggregations of tau local steps per user. Aggregation-error
// bounds need a compressor that reports its conditional error energy. Throws
// DivergedError when the loss exceeds 1e6 times its initial value.
RunLog runFederation(const FederationConfig& cfg, const Model& model, std::span<const Dataset> users,
                     const Dataset* test = nullptr);

// Columns: round,t,loss,accuracy,aggErrorSq,bitsPerUser[,boundRHS].
void writeCsv(std::ostream& out, const RunLog& log);

// Rounds logged by runFederation for a given config, in increasing order.
std::vector<std::size_t> loggedRounds(const FederationConfig& cfg);

}  // namespace uveqfed
