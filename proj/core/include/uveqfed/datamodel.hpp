#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace uveqfed {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One sample per row. Targets are reals for regression and class indices
// (stored as doubles) for classification.
struct Dataset {
    RowMatrix features;
    Eigen::VectorXd targets;
    std::string name;

    std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
    std::size_t dimension() const noexcept { return static_cast<std::size_t>(features.cols()); }
    int label(std::size_t i) const { return static_cast<int>(targets(static_cast<Eigen::Index>(i))); }

    // Rows `indices` in order.
    Dataset subset(std::span<const std::size_t> indices, std::string subsetName = {}) const;
};

enum class ModelKind {
    LinearRegression,    // 1/2 (x'w - y)^2 + lambda/2 ||w||^2
    LogisticRegression,  // softplus(x'w) - y x'w + lambda/2 ||w||^2, y in {0, 1}
    Mlp,                 // sigmoid hidden layer, softmax cross-entropy, + lambda/2 ||w||^2
};

ModelKind parseModelKind(const std::string& text);
std::string toString(ModelKind kind);

struct Model {
    ModelKind kind = ModelKind::LinearRegression;
    std::size_t inputDim = 0;
    std::size_t hidden = 50;   // Mlp only
    std::size_t classes = 10;  // Mlp only
    double lambda = 0.0;

    // Mlp parameters are laid out as W1 (hidden x input, row-major), b1,
    // W2 (classes x hidden, row-major), b2.
    std::size_t parameterCount() const noexcept;
    bool convex() const noexcept { return kind != ModelKind::Mlp; }
};

// Mean loss over `indices` (all samples when empty); writes the exact gradient
// into `grad` (parameterCount() entries). Throws DivergedError when the loss or
// gradient is not finite.
double lossAndGradient(const Model& model, std::span<const double> w, const Dataset& data,
                       std::span<const std::size_t> indices, std::span<double> grad);

double loss(const Model& model, std::span<const double> w, const Dataset& data);

// Fraction of correctly classified samples (Mlp: argmax, logistic: threshold 0.5).
double accuracy(const Model& model, std::span<const double> w, const Dataset& data);

// Seeded N(0, 1) entries.
Eigen::MatrixXd genGaussianMatrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

// Sigma_ij = exp(-0.2 |i - j|).
const Eigen::MatrixXd& correlationMatrix(std::size_t n);

// Sigma H Sigma^T with Sigma of matching size (H must be square).
Eigen::MatrixXd genCorrelated(const Eigen::MatrixXd& h);

// Throws FormatError naming the byte offset on a bad magic number or truncation.
Dataset loadMnistIdx(const std::filesystem::path& imagesPath, const std::filesystem::path& labelsPath);

// Train and test splits from the standard file names in `dir`.
struct MnistSplits {
    Dataset train;
    Dataset test;
};
MnistSplits loadMnistDirectory(const std::filesystem::path& dir);

enum class PartitionMode { Iid, Sequential, LabelSkew };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::Iid;
    double skewFraction = 0.25;  // LabelSkew only
    std::size_t perUser = 0;     // samples per user; 0 splits the whole dataset
};

// "iid", "sequential" or "label-skew:<fraction>".
PartitionSpec parsePartition(const std::string& text);
std::string toString(const PartitionSpec& spec);

// Index sets into `data`, one per user. Iid keeps every user's label counts
// balanced; Sequential takes contiguous blocks in file order; LabelSkew draws
// the given fraction of user k's quota from label k mod (number of labels) and
// the rest like Iid.
std::vector<std::vector<std::size_t>> partitionIndices(const Dataset& data, std::size_t users,
                                                       const PartitionSpec& spec, std::uint64_t seed);
std::vector<Dataset> partition(const Dataset& data, std::size_t users, const PartitionSpec& spec,
                               std::uint64_t seed);

// Minimizer of the full-batch loss of a convex model (closed form for linear
// regression, Newton's method for logistic regression).
std::vector<double> solveConvex(const Model& model, const Dataset& data);

// Minimizer of sum_k alpha_k F_k.
std::vector<double> solveWeighted(const Model& model, std::span<const Dataset> users, std::span<const double> alpha);

// F(w°) - sum_k alpha_k min F_k, with F = sum_k alpha_k F_k.
double heterogeneityGap(const Model& model, std::span<const Dataset> users, std::span<const double> alpha);

struct ConvexityConstants {
    double smooth = 0.0;  // rho_s
    double strong = 0.0;  // rho_c
};

// Linear regression: extreme eigenvalues of X'X/n + lambda I per user, max of
// the largest and min of the smallest. Logistic: 1/4 lambda_max + lambda and
// lambda. Throws UnsupportedError for the Mlp.
ConvexityConstants smoothStrongConvexConstants(const Model& model, std::span<const Dataset> users);

}  // namespace uveqfed
