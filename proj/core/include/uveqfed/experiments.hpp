#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uveqfed/analysis.hpp"
#include "uveqfed/datamodel.hpp"
#include "uveqfed/flsim.hpp"

namespace uveqfed {

// Linear-regression users: x ~ N(0, I), y = x'(w + shift_k) + noise with
// w ~ N(0, I) shared and shift_k ~ heterogeneity * N(0, I) per user.
struct SyntheticRegressionSpec {
    std::size_t users = 10;
    std::size_t samplesPerUser = 200;
    std::size_t dim = 32;
    double noise = 0.5;
    double heterogeneity = 0.0;
    std::uint64_t seed = 0;
};

std::vector<Dataset> makeSyntheticRegression(const SyntheticRegressionSpec& spec);

// Fixed test vectors: N(0, (c + 1)^2 I) draws of length m.
std::vector<std::vector<double>> errorMomentVectors(std::size_t count, std::size_t m, std::uint64_t seed);

struct Theorem1Experiment {
    std::vector<std::string> lattices{"scalar", "hex"};
    std::vector<ZetaRule> zetaRules{ZetaRule::ThreeOverSqrtM, ZetaRule::RateDependent};
    std::vector<std::size_t> lengths{128, 4096};
    std::size_t vectors = 10;
    double rate = 4.0;
    Theorem1Options options;
    std::uint64_t seed = 0;
};

struct Theorem1Entry {
    std::string lattice;
    ZetaRule zetaRule = ZetaRule::RateDependent;
    std::size_t length = 0;
    Theorem1Report report;
};

std::vector<Theorem1Entry> runTheorem1Experiment(const Theorem1Experiment& exp);

struct Theorem2Experiment {
    std::vector<std::size_t> userCounts{5, 10, 20, 40};
    std::size_t seeds = 20;
    std::size_t tau = 4;
    double rate = 4.0;
    std::string compressor = "uveqfed-l2";
    std::size_t rounds = 50;
    double eta = 0.02;
    SyntheticRegressionSpec data{0, 100, 64, 0.5, 0.0, 0};
    double lambda = 0.01;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    double requiredFraction = 0.99;
    double maxDecayRatio = 1.0 / 6.0;  // ceiling on error(K_max) / error(K_min)
};

struct Theorem2Result {
    std::map<std::size_t, Theorem2Report> byUsers;
    std::map<std::size_t, std::vector<RunLog>> runs;
    CheckReport bound;  // every user count meets the fraction
    CheckReport decay;  // 1/K law between the smallest and largest K
};

Theorem2Result runTheorem2Experiment(const Theorem2Experiment& exp);

struct Theorem3Experiment {
    std::size_t seeds = 20;
    std::size_t tau = 4;
    double rate = 4.0;
    std::string compressor = "uveqfed-l2";
    std::size_t rounds = 5000;
    SyntheticRegressionSpec data{10, 400, 64, 0.5, 0.5, 0};
    double lambda = 0.1;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    double maxSlope = -0.8;
};

struct Theorem3Result {
    Theorem3Report report;
    TheoryConstants constants;
    double optimalLoss = 0.0;
    double initDistSq = 0.0;
    std::vector<RunLog> runs;
};

Theorem3Result runTheorem3Experiment(const Theorem3Experiment& exp);

struct SweepExperiment {
    SweepConfig config;  // `correlated` is ignored: both kinds are run
};

struct SweepResult {
    std::vector<SweepRow> rows;
    CheckReport ordering;
};

SweepResult runSweepExperiment(const SweepExperiment& exp);

// MLP training on MNIST shards; accuracy is measured on the test split.
struct MnistExperiment {
    std::filesystem::path mnistDir;
    std::vector<std::string> compressors{"uveqfed-l2", "uveqfed-l1", "qsgd", "none"};
    std::size_t users = 15;
    std::size_t samplesPerUser = 1000;
    PartitionSpec partition{PartitionMode::Sequential, 0.25, 1000};
    double rate = 4.0;
    double eta = 1e-2;
    bool stepOnSum = true;  // eta applies to the summed local loss, i.e. eta * n_k on the mean
    std::size_t tau = 1;
    std::size_t rounds = 200;
    std::size_t batchSize = 0;
    std::size_t hidden = 50;
    double initStd = 0.01;
    std::size_t logEvery = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    double maxGapToUncompressed = 0.03;
};

struct MnistResult {
    std::map<std::string, RunLog> runs;
    CheckReport ordering;  // l2 >= qsgd and within the gap of "none", at the final round
};

MnistResult runMnistExperiment(const MnistExperiment& exp);

}  // namespace uveqfed
