#include "uveqfed/flsim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "uveqfed/error.hpp"
#include "uveqfed/parallel.hpp"

namespace uveqfed {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kStepStream = 0x5a;
constexpr double kDivergenceFactor = 1e6;

double squaredNorm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

std::vector<double> resolveAlpha(const FederationConfig& cfg, std::span<const Dataset> users) {
    std::vector<double> alpha = cfg.alpha;
    if (alpha.empty()) {
        double total = 0.0;
        for (const auto& u : users) total += static_cast<double>(u.size());
        if (total <= 0.0) throw InvalidInputError("user datasets are empty");
        for (const auto& u : users) alpha.push_back(static_cast<double>(u.size()) / total);
    }
    if (alpha.size() != users.size()) throw InvalidInputError("alpha needs one weight per user");
    double sum = 0.0;
    for (double a : alpha) {
        if (!(a >= 0.0)) throw InvalidInputError("alpha weights must be non-negative");
        sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidInputError("alpha weights must sum to 1");
    return alpha;
}

}  // namespace

double theorem3Gamma(double strong, double smooth, std::size_t tau) {
    if (!(strong > 0.0) || !(smooth >= strong)) throw InvalidInputError("need rho_s >= rho_c > 0");
    if (tau == 0) throw InvalidInputError("tau must be positive");
    return static_cast<double>(tau) * std::max(1.0, 4.0 * smooth / strong);
}

double theorem3StepSize(std::uint64_t t, double strong, double smooth, std::size_t tau) {
    const double gamma = theorem3Gamma(strong, smooth, tau);
    return static_cast<double>(tau) / (strong * (static_cast<double>(t) + gamma));
}

StepSchedule StepSchedule::constant(double eta) {
    if (!(eta > 0.0)) throw InvalidInputError("step size must be positive");
    StepSchedule s;
    s.eta = eta;
    return s;
}

StepSchedule StepSchedule::theorem3(double strong, double smooth) {
    theorem3Gamma(strong, smooth, 1);
    StepSchedule s;
    s.kind = Kind::Theorem3;
    s.strong = strong;
    s.smooth = smooth;
    return s;
}

StepSchedule StepSchedule::fromTable(std::vector<double> table) {
    if (table.empty()) throw InvalidInputError("step size table is empty");
    for (double e : table) {
        if (!(e > 0.0)) throw InvalidInputError("step sizes must be positive");
    }
    StepSchedule s;
    s.kind = Kind::Table;
    s.table = std::move(table);
    return s;
}

double StepSchedule::at(std::uint64_t t, std::size_t tau) const {
    switch (kind) {
        case Kind::Constant: return eta;
        case Kind::Theorem3: return theorem3StepSize(t, strong, smooth, tau);
        case Kind::Table: return table[std::min<std::size_t>(t, table.size() - 1)];
    }
    return eta;
}

double localStep(RoundState& state, std::size_t k, const Model& model, const Dataset& data, std::size_t batchSize,
                 double eta, CounterRng& rng) {
    if (k >= state.local.size()) throw InvalidInputError("user index out of range");
    ParamVector& w = state.local[k];
    std::vector<std::size_t> batch;
    if (batchSize > 0) {
        batch.resize(batchSize);
        for (auto& i : batch) i = static_cast<std::size_t>(rng.below(data.size()));
    }
    std::vector<double> grad(w.size());
    try {
        lossAndGradient(model, w, data, batch, grad);
    } catch (const DivergedError& e) {
        throw DivergedError("user " + std::to_string(k) + " at step " + std::to_string(state.t) + ": " + e.what());
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * grad[i];
    return squaredNorm(grad);
}

void aggregate(RoundState& state, std::span<const ParamVector> decoded, std::span<const double> alpha) {
    const std::size_t users = state.local.size();
    if (decoded.size() != users || alpha.size() != users) {
        throw InvalidInputError("aggregation needs exactly one update per user (got " +
                                std::to_string(decoded.size()) + " for " + std::to_string(users) + " users)");
    }
    const std::size_t m = state.global.size();
    for (std::size_t k = 0; k < users; ++k) {
        if (decoded[k].size() != m) throw InvalidInputError("missing or malformed update from user " + std::to_string(k));
    }
    ParamVector next = state.global;
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < users; ++k) acc += alpha[k] * decoded[k][i];
        next[i] += acc;
    }
    state.global = std::move(next);
    for (auto& w : state.local) w = state.global;
}

std::vector<std::size_t> loggedRounds(const FederationConfig& cfg) {
    std::set<std::size_t> rounds{0, cfg.rounds};
    if (cfg.logSpaced) {
        for (int j = 0;; ++j) {
            const auto r = static_cast<std::size_t>(std::llround(std::pow(10.0, j / 20.0)));
            if (r > cfg.rounds) break;
            rounds.insert(r);
        }
    } else {
        const std::size_t every = std::max<std::size_t>(1, cfg.logEvery);
        for (std::size_t r = every; r <= cfg.rounds; r += every) rounds.insert(r);
    }
    return {rounds.begin(), rounds.end()};
}

RunLog runFederation(const FederationConfig& cfg, const Model& model, std::span<const Dataset> users,
                     const Dataset* test) {
    const std::size_t K = users.size();
    if (K == 0) throw InvalidInputError("need at least one user");
    if (cfg.users != 0 && cfg.users != K) throw InvalidInputError("config user count does not match the datasets");
    if (cfg.tau == 0) throw InvalidInputError("tau must be positive");
    for (const auto& u : users) {
        if (u.size() == 0) throw InvalidInputError("every user needs at least one sample");
    }
    const std::size_t m = model.parameterCount();
    const auto compressor = makeCompressor(cfg.compressor);
    const bool quantized = cfg.compressor.kind != "none";
    const auto start = std::chrono::steady_clock::now();

    RunLog log;
    log.compressor = compressor->name();
    log.alpha = resolveAlpha(cfg, users);
    log.xiSq.assign(K, 0.0);
    const auto& alpha = log.alpha;

    RoundState state;
    state.tau = cfg.tau;
    state.global.assign(m, 0.0);
    if (cfg.initStd > 0.0) {
        CounterRng rng{deriveKey(cfg.seed, kInitStream)};
        for (auto& v : state.global) v = cfg.initStd * rng.gaussian();
    }
    state.local.assign(K, state.global);

    const std::vector<std::size_t> logAt = loggedRounds(cfg);
    auto nextLog = logAt.begin();
    std::vector<double> maxGradSq(K, 0.0);

    auto record = [&](std::size_t round, double aggErr, double bits, std::optional<double> rhs) {
        RoundRecord rec;
        rec.round = round;
        rec.t = state.t;
        rec.userLoss.resize(K);
        parallelFor(K, cfg.threads, [&](std::size_t k) { rec.userLoss[k] = loss(model, state.global, users[k]); });
        for (std::size_t k = 0; k < K; ++k) rec.loss += alpha[k] * rec.userLoss[k];
        rec.accuracy = test ? accuracy(model, state.global, *test) : std::numeric_limits<double>::quiet_NaN();
        rec.aggErrorSq = aggErr;
        rec.bitsPerUser = bits;
        rec.boundRHS = rhs;
        rec.wallSeconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (round == 0) {
            log.initialLoss = rec.loss;
        } else if (log.initialLoss > 0.0 && rec.loss > kDivergenceFactor * log.initialLoss) {
            throw DivergedError(log.compressor + ": loss " + std::to_string(rec.loss) + " at round " +
                                std::to_string(round) + " exceeds 1e6 times the initial loss " +
                                std::to_string(log.initialLoss));
        }
        spdlog::debug("{} round {} t {} loss {:.6g} acc {:.4f} aggErr {:.3g}", log.compressor, round, state.t,
                      rec.loss, rec.accuracy, aggErr);
        log.records.push_back(std::move(rec));
    };

    if (*nextLog == 0) {
        record(0, 0.0, 0.0, cfg.trackBound ? std::optional<double>{0.0} : std::nullopt);
        ++nextLog;
    }

    std::vector<ParamVector> exact(K), decoded(K);
    std::vector<double> bits(K), errFactor(K);
    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        const std::uint64_t t0 = state.t;
        double etaSqSum = 0.0;
        for (std::size_t s = 0; s < cfg.tau; ++s) {
            const double eta = cfg.schedule.at(t0 + s, cfg.tau);
            etaSqSum += eta * eta;
        }
        const std::uint64_t wireRound = round - 1;

        parallelFor(K, cfg.threads, [&](std::size_t k) {
            for (std::size_t s = 0; s < cfg.tau; ++s) {
                const std::uint64_t t = t0 + s;
                CounterRng rng{deriveKey(cfg.seed, k, t, kStepStream)};
                const double g = localStep(state, k, model, users[k], cfg.batchSize, cfg.schedule.at(t, cfg.tau), rng);
                maxGradSq[k] = std::max(maxGradSq[k], g);
            }
            ParamVector h(m);
            for (std::size_t i = 0; i < m; ++i) h[i] = state.local[k][i] - state.global[i];
            if (quantized) {
                const WireUpdate wire = compressor->encode(h, k, wireRound);
                decoded[k] = compressor->decode(wire, m, k, wireRound);
                bits[k] = static_cast<double>(wire.budgetBits);
                const auto energy = compressor->conditionalErrorEnergy(wire, m);
                const double hn = squaredNorm(h);
                if (!energy) {
                    errFactor[k] = std::numeric_limits<double>::quiet_NaN();
                } else {
                    errFactor[k] = hn > 0.0 ? *energy / hn : 0.0;
                }
                exact[k] = std::move(h);
            } else {
                bits[k] = 64.0 * static_cast<double>(m);
                decoded[k] = h;
                exact[k] = std::move(h);
                errFactor[k] = 0.0;
            }
        });
        state.t = t0 + cfg.tau;

        RoundState shadow;
        shadow.global = state.global;
        shadow.local.resize(K);
        aggregate(shadow, exact, alpha);
        aggregate(state, decoded, alpha);

        double aggErr = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (!std::isfinite(state.global[i])) {
                throw DivergedError(log.compressor + ": non-finite weight after aggregation " + std::to_string(round));
            }
            const double d = state.global[i] - shadow.global[i];
            aggErr += d * d;
        }

        double rhs = 0.0;
        bool rhsKnown = true;
        for (std::size_t k = 0; k < K; ++k) {
            log.xiSq[k] = kXiMargin * maxGradSq[k];
            if (std::isnan(errFactor[k])) {
                rhsKnown = false;
                continue;
            }
            log.maxErrorFactor = std::max(log.maxErrorFactor, errFactor[k]);
            rhs += alpha[k] * alpha[k] * errFactor[k] * log.xiSq[k];
        }
        rhs *= static_cast<double>(cfg.tau) * etaSqSum;

        if (nextLog != logAt.end() && *nextLog == round) {
            const double meanBits = std::accumulate(bits.begin(), bits.end(), 0.0) / static_cast<double>(K);
            std::optional<double> bound;
            if (cfg.trackBound && rhsKnown) bound = rhs;
            record(round, aggErr, meanBits, bound);
            ++nextLog;
        }
    }
    log.finalWeights = state.global;
    return log;
}

void writeCsv(std::ostream& out, const RunLog& log) {
    const bool withBound =
        std::any_of(log.records.begin(), log.records.end(), [](const RoundRecord& r) { return r.boundRHS.has_value(); });
    out << "round,t,loss,accuracy,aggErrorSq,bitsPerUser";
    if (withBound) out << ",boundRHS";
    out << '\n';
    const auto old = out.precision(10);
    for (const auto& r : log.records) {
        out << r.round << ',' << r.t << ',' << r.loss << ',';
        if (std::isnan(r.accuracy)) {
            out << "nan";
        } else {
            out << r.accuracy;
        }
        out << ',' << r.aggErrorSq << ',' << r.bitsPerUser;
        if (withBound) {
            out << ',';
            if (r.boundRHS) out << *r.boundRHS;
        }
        out << '\n';
    }
    out.precision(old);
}

}  // namespace uveqfed
