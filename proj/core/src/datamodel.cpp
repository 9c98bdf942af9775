#include "uveqfed/datamodel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>

#include "uveqfed/error.hpp"
#include "uveqfed/random.hpp"

namespace uveqfed {
namespace {

using ConstMap = Eigen::Map<const Eigen::VectorXd>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void requireSize(const Model& model, std::span<const double> w) {
    if (w.size() != model.parameterCount()) {
        throw InvalidInputError("weight vector has " + std::to_string(w.size()) + " entries, model expects " +
                                std::to_string(model.parameterCount()));
    }
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Gathers the batch rows, or aliases the whole dataset when `indices` is empty.
struct Batch {
    RowMatrix storedX;
    Eigen::VectorXd storedY;
    const RowMatrix* x = nullptr;
    const Eigen::VectorXd* y = nullptr;

    Batch(const Dataset& data, std::span<const std::size_t> indices) {
        if (indices.empty()) {
            x = &data.features;
            y = &data.targets;
            return;
        }
        storedX.resize(static_cast<Eigen::Index>(indices.size()), data.features.cols());
        storedY.resize(static_cast<Eigen::Index>(indices.size()));
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= data.size()) throw InvalidInputError("sample index out of range");
            storedX.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(indices[i]));
            storedY(static_cast<Eigen::Index>(i)) = data.targets(static_cast<Eigen::Index>(indices[i]));
        }
        x = &storedX;
        y = &storedY;
    }
};

struct MlpShape {
    Eigen::Index in, hid, out;
    std::size_t w1() const { return static_cast<std::size_t>(hid * in); }
    std::size_t b1() const { return w1(); }
    std::size_t w2() const { return b1() + static_cast<std::size_t>(hid); }
    std::size_t b2() const { return w2() + static_cast<std::size_t>(out * hid); }
};

double mlpLossAndGradient(const Model& model, const double* w, const RowMatrix& x, const Eigen::VectorXd& y,
                          double* grad) {
    const MlpShape s{static_cast<Eigen::Index>(model.inputDim), static_cast<Eigen::Index>(model.hidden),
                     static_cast<Eigen::Index>(model.classes)};
    const ConstRowMap w1(w, s.hid, s.in);
    const ConstMap b1(w + s.b1(), s.hid);
    const ConstRowMap w2(w + s.w2(), s.out, s.hid);
    const ConstMap b2(w + s.b2(), s.out);
    const Eigen::Index n = x.rows();

    RowMatrix act = x * w1.transpose();
    act.rowwise() += b1.transpose();
    act = act.unaryExpr([](double v) { return sigmoid(v); });
    RowMatrix logits = act * w2.transpose();
    logits.rowwise() += b2.transpose();

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const double mx = row.maxCoeff();
        row.array() -= mx;
        const double logSum = std::log(row.array().exp().sum());
        const auto label = static_cast<Eigen::Index>(y(i));
        if (label < 0 || label >= s.out) throw InvalidInputError("class label out of range for the model");
        total += logSum - row(label);
        row = (row.array() - logSum).exp();  // softmax probabilities
        row(label) -= 1.0;
    }
    const double inv = 1.0 / static_cast<double>(n);
    logits *= inv;  // d loss / d logits

    RowMap g1(grad, s.hid, s.in);
    Eigen::Map<Eigen::VectorXd> gb1(grad + s.b1(), s.hid);
    RowMap g2(grad + s.w2(), s.out, s.hid);
    Eigen::Map<Eigen::VectorXd> gb2(grad + s.b2(), s.out);
    g2.noalias() = logits.transpose() * act;
    gb2 = logits.colwise().sum().transpose();
    RowMatrix dAct = logits * w2;
    dAct.array() *= act.array() * (1.0 - act.array());
    g1.noalias() = dAct.transpose() * x;
    gb1 = dAct.colwise().sum().transpose();
    return total * inv;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string subsetName) const {
    Dataset out;
    out.name = subsetName.empty() ? name : std::move(subsetName);
    out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
    out.targets.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw InvalidInputError("subset index out of range");
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(indices[i]));
        out.targets(static_cast<Eigen::Index>(i)) = targets(static_cast<Eigen::Index>(indices[i]));
    }
    return out;
}

ModelKind parseModelKind(const std::string& text) {
    if (text == "linear" || text == "linear-regression") return ModelKind::LinearRegression;
    if (text == "logistic" || text == "logistic-regression") return ModelKind::LogisticRegression;
    if (text == "mlp") return ModelKind::Mlp;
    throw InvalidInputError("unknown model kind '" + text + "' (expected linear, logistic or mlp)");
}

std::string toString(ModelKind kind) {
    switch (kind) {
        case ModelKind::LinearRegression: return "linear";
        case ModelKind::LogisticRegression: return "logistic";
        case ModelKind::Mlp: return "mlp";
    }
    return "?";
}

std::size_t Model::parameterCount() const noexcept {
    if (kind == ModelKind::Mlp) return hidden * inputDim + hidden + classes * hidden + classes;
    return inputDim;
}

double lossAndGradient(const Model& model, std::span<const double> w, const Dataset& data,
                       std::span<const std::size_t> indices, std::span<double> grad) {
    requireSize(model, w);
    if (grad.size() != w.size()) throw InvalidInputError("gradient buffer size mismatch");
    if (data.dimension() != model.inputDim) throw InvalidInputError("dataset dimension does not match the model");
    if (data.size() == 0) throw InvalidInputError("empty dataset");
    const Batch batch(data, indices);
    const RowMatrix& x = *batch.x;
    const Eigen::VectorXd& y = *batch.y;
    const double inv = 1.0 / static_cast<double>(x.rows());
    const ConstMap wv(w.data(), static_cast<Eigen::Index>(w.size()));
    Eigen::Map<Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(grad.size()));

    double value = 0.0;
    switch (model.kind) {
        case ModelKind::LinearRegression: {
            const Eigen::VectorXd r = x * wv - y;
            value = 0.5 * r.squaredNorm() * inv;
            g.noalias() = x.transpose() * r * inv;
            break;
        }
        case ModelKind::LogisticRegression: {
            const Eigen::VectorXd z = x * wv;
            Eigen::VectorXd d(z.size());
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                value += softplus(z(i)) - y(i) * z(i);
                d(i) = sigmoid(z(i)) - y(i);
            }
            value *= inv;
            g.noalias() = x.transpose() * d * inv;
            break;
        }
        case ModelKind::Mlp:
            value = mlpLossAndGradient(model, w.data(), x, y, grad.data());
            break;
    }
    if (model.lambda > 0.0) {
        value += 0.5 * model.lambda * wv.squaredNorm();
        g += model.lambda * wv;
    }
    if (!std::isfinite(value) || !g.allFinite()) {
        throw DivergedError("non-finite loss or gradient (loss = " + std::to_string(value) +
                            ", |w| = " + std::to_string(wv.norm()) + ")");
    }
    return value;
}

double loss(const Model& model, std::span<const double> w, const Dataset& data) {
    std::vector<double> grad(w.size());
    return lossAndGradient(model, w, data, {}, grad);
}

double accuracy(const Model& model, std::span<const double> w, const Dataset& data) {
    requireSize(model, w);
    if (data.size() == 0) return 0.0;
    const ConstMap wv(w.data(), static_cast<Eigen::Index>(w.size()));
    std::size_t correct = 0;
    switch (model.kind) {
        case ModelKind::LinearRegression:
            throw UnsupportedError("accuracy is undefined for linear regression");
        case ModelKind::LogisticRegression: {
            const Eigen::VectorXd z = data.features * wv;
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                if ((z(i) > 0.0 ? 1.0 : 0.0) == data.targets(i)) ++correct;
            }
            break;
        }
        case ModelKind::Mlp: {
            const MlpShape s{static_cast<Eigen::Index>(model.inputDim), static_cast<Eigen::Index>(model.hidden),
                             static_cast<Eigen::Index>(model.classes)};
            const ConstRowMap w1(w.data(), s.hid, s.in);
            const ConstMap b1(w.data() + s.b1(), s.hid);
            const ConstRowMap w2(w.data() + s.w2(), s.out, s.hid);
            const ConstMap b2(w.data() + s.b2(), s.out);
            RowMatrix act = data.features * w1.transpose();
            act.rowwise() += b1.transpose();
            act = act.unaryExpr([](double v) { return sigmoid(v); });
            RowMatrix logits = act * w2.transpose();
            logits.rowwise() += b2.transpose();
            for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                Eigen::Index arg = 0;
                logits.row(i).maxCoeff(&arg);
                if (arg == static_cast<Eigen::Index>(data.targets(i))) ++correct;
            }
            break;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

Eigen::MatrixXd genGaussianMatrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    CounterRng rng{deriveKey(seed, rows, cols)};
    Eigen::MatrixXd h(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.gaussian();
    }
    return h;
}

const Eigen::MatrixXd& correlationMatrix(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, Eigen::MatrixXd> cache;
    const std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
        Eigen::MatrixXd sigma(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
                sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(-0.2 * d);
            }
        }
        it = cache.emplace(n, std::move(sigma)).first;
    }
    return it->second;
}

Eigen::MatrixXd genCorrelated(const Eigen::MatrixXd& h) {
    if (h.rows() != h.cols()) throw InvalidInputError("correlated construction needs a square matrix");
    const Eigen::MatrixXd& sigma = correlationMatrix(static_cast<std::size_t>(h.rows()));
    return sigma * h * sigma.transpose();
}

namespace {

std::vector<unsigned char> readFile(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t readBigEndian(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& file) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(file + ": truncated header at byte offset " + std::to_string(offset));
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset loadMnistIdx(const std::filesystem::path& imagesPath, const std::filesystem::path& labelsPath) {
    const auto images = readFile(imagesPath);
    const auto labels = readFile(labelsPath);
    const std::string imgName = imagesPath.filename().string();
    const std::string lblName = labelsPath.filename().string();
    if (const auto magic = readBigEndian(images, 0, imgName); magic != 0x00000803) {
        throw FormatError(imgName + ": bad magic number at byte offset 0");
    }
    if (const auto magic = readBigEndian(labels, 0, lblName); magic != 0x00000801) {
        throw FormatError(lblName + ": bad magic number at byte offset 0");
    }
    const std::size_t count = readBigEndian(images, 4, imgName);
    const std::size_t rows = readBigEndian(images, 8, imgName);
    const std::size_t cols = readBigEndian(images, 12, imgName);
    const std::size_t labelCount = readBigEndian(labels, 4, lblName);
    if (labelCount != count) {
        throw FormatError(lblName + ": label count at byte offset 4 does not match the image count");
    }
    const std::size_t pixels = rows * cols;
    if (images.size() < 16 + count * pixels) {
        throw FormatError(imgName + ": truncated at byte offset " + std::to_string(images.size()));
    }
    if (labels.size() < 8 + count) {
        throw FormatError(lblName + ": truncated at byte offset " + std::to_string(labels.size()));
    }
    Dataset data;
    data.name = imgName;
    data.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
    data.targets.resize(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t p = 0; p < pixels; ++p) {
            data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
                images[16 + i * pixels + p] / 255.0;
        }
        const unsigned label = labels[8 + i];
        if (label > 9) {
            throw FormatError(lblName + ": label out of range at byte offset " + std::to_string(8 + i));
        }
        data.targets(static_cast<Eigen::Index>(i)) = label;
    }
    if (count > 0) {
        std::uint32_t checksum = 0;
        for (std::size_t p = 0; p < pixels; ++p) checksum = checksum * 31 + images[16 + p];
        spdlog::info("loaded {} ({} x {}), first image checksum {:08x}, first label {}", imgName, count, pixels,
                     checksum, labels[8]);
    }
    return data;
}

MnistSplits loadMnistDirectory(const std::filesystem::path& dir) {
    MnistSplits s;
    s.train = loadMnistIdx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    s.test = loadMnistIdx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    return s;
}

PartitionSpec parsePartition(const std::string& text) {
    PartitionSpec spec;
    if (text == "iid") {
        spec.mode = PartitionMode::Iid;
    } else if (text == "sequential") {
        spec.mode = PartitionMode::Sequential;
    } else if (text.rfind("label-skew", 0) == 0) {
        spec.mode = PartitionMode::LabelSkew;
        if (text.size() > 10) {
            if (text[10] != ':') throw InvalidInputError("partition '" + text + "': expected label-skew:<fraction>");
            try {
                spec.skewFraction = std::stod(text.substr(11));
            } catch (const std::exception&) {
                throw InvalidInputError("partition '" + text + "': fraction is not a number");
            }
        }
        if (!(spec.skewFraction >= 0.0 && spec.skewFraction <= 1.0)) {
            throw InvalidInputError("label-skew fraction must lie in [0, 1]");
        }
    } else {
        throw InvalidInputError("unknown partition '" + text + "' (expected iid, sequential or label-skew:<f>)");
    }
    return spec;
}

std::string toString(const PartitionSpec& spec) {
    switch (spec.mode) {
        case PartitionMode::Iid: return "iid";
        case PartitionMode::Sequential: return "sequential";
        case PartitionMode::LabelSkew: {
            std::string f = std::to_string(spec.skewFraction);
            f.erase(f.find_last_not_of('0') + 1);
            if (!f.empty() && f.back() == '.') f.pop_back();
            return "label-skew:" + f;
        }
    }
    return "?";
}

namespace {

void shuffle(std::vector<std::size_t>& v, CounterRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

std::vector<std::vector<std::size_t>> labelPools(const Dataset& data, CounterRng& rng) {
    int maxLabel = -1;
    for (std::size_t i = 0; i < data.size(); ++i) maxLabel = std::max(maxLabel, data.label(i));
    if (maxLabel < 0) throw InvalidInputError("partition needs non-negative class labels");
    std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(maxLabel) + 1);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int l = data.label(i);
        if (l < 0) throw InvalidInputError("partition needs non-negative class labels");
        pools[static_cast<std::size_t>(l)].push_back(i);
    }
    for (auto& p : pools) shuffle(p, rng);
    return pools;
}

// Deals the pooled indices to users label by label, continuing the rotation
// across labels so per-user totals differ by at most one. `quota` caps each
// user's total (0 = no cap).
void dealBalanced(const std::vector<std::vector<std::size_t>>& pools, std::vector<std::vector<std::size_t>>& out,
                  std::size_t quota) {
    const std::size_t users = out.size();
    std::size_t next = 0;
    if (quota == 0) {
        for (const auto& pool : pools) {
            for (std::size_t idx : pool) {
                out[next].push_back(idx);
                next = (next + 1) % users;
            }
        }
        return;
    }
    // Per-label targets for a capped quota: split quota evenly over labels.
    const std::size_t labels = pools.size();
    std::vector<std::size_t> cursor(labels, 0);
    for (std::size_t u = 0; u < users; ++u) {
        for (std::size_t j = 0; j < quota; ++j) {
            const std::size_t l = (u + j) % labels;
            if (cursor[l] >= pools[l].size()) {
                throw InvalidInputError("not enough samples of label " + std::to_string(l) +
                                        " for a balanced split");
            }
            out[u].push_back(pools[l][cursor[l]++]);
        }
    }
}

}  // namespace

std::vector<std::vector<std::size_t>> partitionIndices(const Dataset& data, std::size_t users,
                                                       const PartitionSpec& spec, std::uint64_t seed) {
    if (users == 0) throw InvalidInputError("partition needs at least one user");
    const std::size_t n = data.size();
    if (spec.perUser > 0 && spec.perUser * users > n) {
        throw InvalidInputError("partition asks for " + std::to_string(spec.perUser * users) + " samples but only " +
                                std::to_string(n) + " exist");
    }
    if (spec.perUser == 0 && n < users) throw InvalidInputError("fewer samples than users");
    std::vector<std::vector<std::size_t>> out(users);
    CounterRng rng{deriveKey(seed, 0x9a27, users)};

    switch (spec.mode) {
        case PartitionMode::Sequential: {
            std::size_t pos = 0;
            for (std::size_t u = 0; u < users; ++u) {
                const std::size_t take = spec.perUser > 0 ? spec.perUser : n / users + (u < n % users ? 1 : 0);
                for (std::size_t j = 0; j < take; ++j) out[u].push_back(pos++);
            }
            break;
        }
        case PartitionMode::Iid: {
            dealBalanced(labelPools(data, rng), out, spec.perUser);
            break;
        }
        case PartitionMode::LabelSkew: {
            auto pools = labelPools(data, rng);
            const std::size_t labels = pools.size();
            std::vector<std::size_t> quota(users);
            for (std::size_t u = 0; u < users; ++u) {
                quota[u] = spec.perUser > 0 ? spec.perUser : n / users + (u < n % users ? 1 : 0);
            }
            std::vector<std::size_t> cursor(labels, 0);
            for (std::size_t u = 0; u < users; ++u) {
                const std::size_t l = u % labels;
                const auto want = static_cast<std::size_t>(std::ceil(spec.skewFraction * static_cast<double>(quota[u])));
                if (cursor[l] + want > pools[l].size()) {
                    throw InvalidInputError("label " + std::to_string(l) + " has too few samples for the skew");
                }
                for (std::size_t j = 0; j < want; ++j) out[u].push_back(pools[l][cursor[l]++]);
            }
            std::vector<std::size_t> rest;
            for (std::size_t l = 0; l < labels; ++l) {
                rest.insert(rest.end(), pools[l].begin() + static_cast<std::ptrdiff_t>(cursor[l]), pools[l].end());
            }
            shuffle(rest, rng);
            std::size_t pos = 0;
            for (std::size_t u = 0; u < users; ++u) {
                while (out[u].size() < quota[u]) out[u].push_back(rest[pos++]);
            }
            break;
        }
    }
    for (auto& idx : out) std::sort(idx.begin(), idx.end());
    return out;
}

std::vector<Dataset> partition(const Dataset& data, std::size_t users, const PartitionSpec& spec,
                               std::uint64_t seed) {
    const auto idx = partitionIndices(data, users, spec, seed);
    std::vector<Dataset> out;
    out.reserve(users);
    for (std::size_t u = 0; u < users; ++u) out.push_back(data.subset(idx[u], data.name + "/user" + std::to_string(u)));
    return out;
}

std::vector<double> solveWeighted(const Model& model, std::span<const Dataset> users, std::span<const double> alpha) {
    if (!model.convex()) throw UnsupportedError("closed-form and Newton solvers need a convex model");
    if (users.size() != alpha.size() || users.empty()) throw InvalidInputError("need one weight per user");
    const auto d = static_cast<Eigen::Index>(model.inputDim);
    if (model.kind == ModelKind::LinearRegression) {
        Eigen::MatrixXd a = model.lambda * Eigen::MatrixXd::Identity(d, d);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
        for (std::size_t k = 0; k < users.size(); ++k) {
            const double s = alpha[k] / static_cast<double>(users[k].size());
            a.noalias() += s * users[k].features.transpose() * users[k].features;
            b.noalias() += s * users[k].features.transpose() * users[k].targets;
        }
        const Eigen::VectorXd w = a.ldlt().solve(b);
        return {w.data(), w.data() + w.size()};
    }
    // Damped Newton on the weighted logistic objective.
    std::vector<double> w(static_cast<std::size_t>(d), 0.0);
    const auto objective = [&](const std::vector<double>& v, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
        double f = 0.0;
        if (grad) grad->setZero(d);
        if (hess) *hess = model.lambda * Eigen::MatrixXd::Identity(d, d);
        std::vector<double> g(v.size());
        for (std::size_t k = 0; k < users.size(); ++k) {
            f += alpha[k] * lossAndGradient(model, v, users[k], {}, g);
            if (grad) *grad += alpha[k] * Eigen::Map<const Eigen::VectorXd>(g.data(), d);
            if (hess) {
                const Eigen::VectorXd z = users[k].features * Eigen::Map<const Eigen::VectorXd>(v.data(), d);
                Eigen::VectorXd curv(z.size());
                for (Eigen::Index i = 0; i < z.size(); ++i) {
                    const double p = sigmoid(z(i));
                    curv(i) = p * (1.0 - p);
                }
                const double s = alpha[k] / static_cast<double>(users[k].size());
                hess->noalias() += s * users[k].features.transpose() * curv.asDiagonal() * users[k].features;
            }
        }
        return f;
    };
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    double f = objective(w, &g, &h);
    for (int iter = 0; iter < 200 && g.norm() > 1e-12; ++iter) {
        const Eigen::VectorXd step = h.ldlt().solve(g);
        double t = 1.0;
        std::vector<double> cand(w.size());
        double fc = f;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < w.size(); ++i) cand[i] = w[i] - t * step(static_cast<Eigen::Index>(i));
            fc = objective(cand, nullptr, nullptr);
            if (fc <= f - 1e-4 * t * g.dot(step)) break;
            t *= 0.5;
        }
        if (fc > f) break;
        w = cand;
        f = objective(w, &g, &h);
    }
    return w;
}

std::vector<double> solveConvex(const Model& model, const Dataset& data) {
    const std::array<double, 1> one{1.0};
    return solveWeighted(model, std::span<const Dataset>(&data, 1), one);
}

double heterogeneityGap(const Model& model, std::span<const Dataset> users, std::span<const double> alpha) {
    const std::vector<double> wStar = solveWeighted(model, users, alpha);
    const Eigen::Map<const Eigen::VectorXd> ws(wStar.data(), static_cast<Eigen::Index>(wStar.size()));
    double gap = 0.0;
    for (std::size_t k = 0; k < users.size(); ++k) {
        const std::vector<double> wk = solveConvex(model, users[k]);
        if (model.kind == ModelKind::LinearRegression) {
            // F_k is quadratic, so F_k(w) - F_k(w_k) is the Hessian form of w - w_k.
            const Eigen::VectorXd d = ws - Eigen::Map<const Eigen::VectorXd>(wk.data(), ws.size());
            const Eigen::VectorXd xd = users[k].features * d;
            gap += alpha[k] * 0.5 * (xd.squaredNorm() / static_cast<double>(users[k].size()) +
                                     model.lambda * d.squaredNorm());
        } else {
            gap += alpha[k] * (loss(model, wStar, users[k]) - loss(model, wk, users[k]));
        }
    }
    return gap;
}

ConvexityConstants smoothStrongConvexConstants(const Model& model, std::span<const Dataset> users) {
    if (!model.convex()) throw UnsupportedError("smoothness and strong convexity constants need a convex model");
    if (users.empty()) throw InvalidInputError("need at least one user dataset");
    double maxEig = 0.0;
    double minEig = std::numeric_limits<double>::infinity();
    for (const auto& u : users) {
        const Eigen::MatrixXd gram =
            (u.features.transpose() * u.features) / static_cast<double>(u.size());
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
        maxEig = std::max(maxEig, eig.eigenvalues().maxCoeff());
        minEig = std::min(minEig, eig.eigenvalues().minCoeff());
    }
    if (model.kind == ModelKind::LinearRegression) return {maxEig + model.lambda, std::max(0.0, minEig) + model.lambda};
    return {0.25 * maxEig + model.lambda, model.lambda};
}

}  // namespace uveqfed
