#pragma once

// Learned safety critic: a delta-form dynamics surrogate, a safe-state
// classifier, the -lambda log p penalty chained through both frozen networks,
// and the softened projected-gradient safety filter.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cabc/autolabel.hpp"
#include "cabc/core.hpp"
#include "cabc/nn.hpp"
#include "cabc/random.hpp"

namespace cabc {

inline std::vector<int> mlp_sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
}

inline constexpr int kDynInputDim = static_cast<int>(kEmbeddedDim) + Action::kDim;

/// f_hat(x, u) = x + delta_mean + delta_std * net([normalize(x), u]).
struct DynModel {
    Mlp net;
    NormStats norm;
    Vec delta_mean = Vec::Zero(VehicleState::kDim);
    Vec delta_std = Vec::Ones(VehicleState::kDim);

    DynModel() = default;
    DynModel(const std::vector<int>& hidden, NormStats n, std::uint64_t seed)
        : net(mlp_sizes(kDynInputDim, hidden, VehicleState::kDim), Head::Identity, seed), norm(std::move(n)) {}

    Vec input(const VehicleState& x, const Action& u) const {
        Vec in(kDynInputDim);
        in.head(kEmbeddedDim) = norm.normalize(x);
        in[kEmbeddedDim] = u.u_a;
        in[kEmbeddedDim + 1] = u.u_steer;
        return in;
    }

    static Vec delta(const VehicleState& x, const VehicleState& x_next) {
        const auto a = x.to_array(), b = x_next.to_array();
        Vec d(VehicleState::kDim);
        for (std::size_t i = 0; i < VehicleState::kDim; ++i) d[static_cast<Eigen::Index>(i)] = b[i] - a[i];
        return d;
    }

    Vec target(const VehicleState& x, const VehicleState& x_next) const {
        return (delta(x, x_next) - delta_mean).cwiseQuotient(delta_std);
    }

    VehicleState apply_output(const VehicleState& x, const Vec& out) const {
        const Vec d = delta_mean + delta_std.cwiseProduct(out);
        auto a = x.to_array();
        for (std::size_t i = 0; i < VehicleState::kDim; ++i) a[i] += d[static_cast<Eigen::Index>(i)];
        return VehicleState::from_array(a);
    }

    VehicleState predict(const VehicleState& x, const Action& u) const { return apply_output(x, net.forward(input(x, u))); }

    /// Delta statistics over transitions; frozen afterwards by the trainer.
    template <class Range>
    void fit_delta_stats(const Range& samples) {
        std::vector<Vec> d;
        for (const Sample& s : samples) d.push_back(delta(s.x, s.x_next));
        if (d.size() < 2) return;
        const NormStats st = NormStats::fit_points(d);
        delta_mean = st.mean;
        delta_std = st.stddev;
    }
};

/// p_hat(x) = sigmoid(net(normalize(x))).
struct SafetyClf {
    Mlp net;
    NormStats norm;
    double lambda = 1.0;

    SafetyClf() = default;
    SafetyClf(const std::vector<int>& hidden, NormStats n, double lam, std::uint64_t seed)
        : net(mlp_sizes(static_cast<int>(kEmbeddedDim), hidden, 1), Head::Sigmoid, seed), norm(std::move(n)), lambda(lam) {}

    double prob(const VehicleState& x) const { return net.forward(norm.normalize(x))[0]; }
    bool is_safe(const VehicleState& x) const { return prob(x) >= 0.5; }
};

struct LossGrad {
    double loss = 0.0;
    LayerSet grads;
};

/// Mean over the batch of ||net(in) - target||^2 in normalized delta space.
inline LossGrad dyn_loss_and_grad(const DynModel& model, const std::vector<VehicleState>& x,
                                  const std::vector<Action>& u, const std::vector<VehicleState>& x_next) {
    const std::size_t B = x.size();
    if (B == 0) throw Error("dyn_loss_and_grad: empty batch");
    if (u.size() != B || x_next.size() != B) throw Error("dyn_loss_and_grad: batch fields differ in length");
    Mat X(kDynInputDim, static_cast<Eigen::Index>(B));
    Mat T(VehicleState::kDim, static_cast<Eigen::Index>(B));
    for (std::size_t b = 0; b < B; ++b) {
        X.col(static_cast<Eigen::Index>(b)) = model.input(x[b], u[b]);
        T.col(static_cast<Eigen::Index>(b)) = model.target(x[b], x_next[b]);
    }
    ForwardCache cache;
    const Mat out = model.net.forward(X, &cache);
    const Mat err = out - T;
    LossGrad r;
    r.loss = err.squaredNorm() / static_cast<double>(B);
    r.grads = model.net.backward(cache, (2.0 / static_cast<double>(B)) * err);
    return r;
}

/// Weighted binary cross-entropy for a single-output sigmoid net. With
/// `balanced`, each class carries total weight 1/2 (or 1 if only one class is
/// present); otherwise every sample has weight 1/B. Weights sum to one.
inline LossGrad bce_loss_and_grad(const Mlp& net, const Mat& X, const std::vector<int>& labels, bool balanced = true) {
    const std::size_t B = labels.size();
    if (B == 0) throw Error("bce_loss_and_grad: empty batch");
    if (static_cast<std::size_t>(X.cols()) != B) throw Error("bce_loss_and_grad: inputs and labels differ in length");
    if (net.head() != Head::Sigmoid || net.output_size() != 1) throw Error("bce_loss_and_grad: need a 1-output sigmoid net");
    std::size_t n_pos = 0;
    for (int s : labels) {
        if (s != 0 && s != 1) throw Error("bce_loss_and_grad: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(s);
    }
    const std::size_t n_neg = B - n_pos;
    const int classes = (n_pos > 0) + (n_neg > 0);
    auto weight = [&](int s) {
        if (!balanced) return 1.0 / static_cast<double>(B);
        return 1.0 / (classes * static_cast<double>(s ? n_pos : n_neg));
    };
    ForwardCache cache;
    const Mat p = net.forward(X, &cache);
    Mat up(1, static_cast<Eigen::Index>(B));
    LossGrad r;
    for (std::size_t b = 0; b < B; ++b) {
        const double pb = p(0, static_cast<Eigen::Index>(b));
        const double w = weight(labels[b]);
        if (labels[b]) {
            r.loss -= w * std::log(pb);
            up(0, static_cast<Eigen::Index>(b)) = -w / pb;
        } else {
            r.loss -= w * std::log1p(-pb);
            up(0, static_cast<Eigen::Index>(b)) = w / (1.0 - pb);
        }
    }
    r.grads = net.backward(cache, up);
    return r;
}

inline Mat embedded_batch(const NormStats& norm, const std::vector<VehicleState>& xs) {
    Mat X(kEmbeddedDim, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t b = 0; b < xs.size(); ++b) X.col(static_cast<Eigen::Index>(b)) = norm.normalize(xs[b]);
    return X;
}

inline LossGrad clf_loss_and_grad(const SafetyClf& clf, const std::vector<VehicleState>& x, const std::vector<int>& s) {
    return bce_loss_and_grad(clf.net, embedded_batch(clf.norm, x), s, true);
}

struct PenaltyBatch {
    Vec penalty;  // per sample
    Mat grad_u;   // 2 x B
};

/// -lambda log p_hat(f_hat(x, u)) per column and its gradient with respect to
/// u. Only input gradients flow; neither network is modified.
inline PenaltyBatch safety_penalty_batch(const SafetyClf& clf, const DynModel& dyn, const std::vector<VehicleState>& xs,
                                         const Mat& U) {
    const auto B = static_cast<Eigen::Index>(xs.size());
    if (U.rows() != Action::kDim || U.cols() != B) throw Error("safety_penalty: action batch has wrong shape");
    PenaltyBatch r{Vec::Zero(B), Mat::Zero(Action::kDim, B)};
    if (B == 0 || clf.lambda == 0.0) return r;

    Mat Xin(kDynInputDim, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        Xin.col(b).head(kEmbeddedDim) = dyn.norm.normalize(xs[static_cast<std::size_t>(b)]);
        Xin.col(b).tail(Action::kDim) = U.col(b);
    }
    ForwardCache dyn_cache;
    const Mat out = dyn.net.forward(Xin, &dyn_cache);
    std::vector<VehicleState> pred(static_cast<std::size_t>(B));
    Mat Z(kEmbeddedDim, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        pred[static_cast<std::size_t>(b)] = dyn.apply_output(xs[static_cast<std::size_t>(b)], out.col(b));
        Z.col(b) = clf.norm.normalize(pred[static_cast<std::size_t>(b)]);
    }
    ForwardCache clf_cache;
    const Mat p = clf.net.forward(Z, &clf_cache);
    Mat up(1, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        r.penalty[b] = -clf.lambda * std::log(p(0, b));
        up(0, b) = -clf.lambda / p(0, b);
    }
    Mat gz;
    clf.net.backward(clf_cache, up, &gz);
    Mat gout(VehicleState::kDim, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const Mat J = embed_jacobian(pred[static_cast<std::size_t>(b)], clf.norm.lap_length);
        const Vec gx = J.transpose() * gz.col(b).cwiseQuotient(clf.norm.stddev);
        gout.col(b) = gx.cwiseProduct(dyn.delta_std);
    }
    Mat gin;
    dyn.net.backward(dyn_cache, gout, &gin);
    r.grad_u = gin.bottomRows(Action::kDim);
    return r;
}

struct PenaltyGrad {
    double value = 0.0;
    double grad_a = 0.0;
    double grad_steer = 0.0;
};

inline PenaltyGrad safety_penalty_and_input_grad(const SafetyClf& clf, const DynModel& dyn, const VehicleState& x,
                                                 const Action& u) {
    Mat U(Action::kDim, 1);
    U << u.u_a, u.u_steer;
    const auto r = safety_penalty_batch(clf, dyn, {x}, U);
    return {r.penalty[0], r.grad_u(0, 0), r.grad_u(1, 0)};
}

template <class C>
concept SafetyCritic = requires(const C& c, const VehicleState& x, const Action& u) {
    { c.penalty_and_grad(x, u) } -> std::convertible_to<PenaltyGrad>;
};

struct LearnedCritic {
    const SafetyClf* clf;
    const DynModel* dyn;
    PenaltyGrad penalty_and_grad(const VehicleState& x, const Action& u) const {
        return safety_penalty_and_input_grad(*clf, *dyn, x, u);
    }
};

struct SoftFilterOptions {
    int steps = 50;
    double step_size = 0.05;
};

/// Projected gradient descent on J(u) = ||u - u_hat||^2 + penalty(x, u) over
/// the action box, starting at u_hat; returns the best iterate by J.
template <SafetyCritic C>
Action soft_filter(const C& critic, const VehicleState& x, const Action& u_hat, const SoftFilterOptions& opt = {}) {
    const Action u0 = u_hat.clamped();
    Action u = u0;
    Action best = u0;
    double best_j = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= opt.steps; ++it) {
        const PenaltyGrad pg = critic.penalty_and_grad(x, u);
        const double da = u.u_a - u0.u_a, ds = u.u_steer - u0.u_steer;
        const double j = da * da + ds * ds + pg.value;
        if (j < best_j) {
            best_j = j;
            best = u;
        }
        if (it == opt.steps) break;
        const double ga = 2.0 * da + pg.grad_a, gs = 2.0 * ds + pg.grad_steer;
        if (ga == 0.0 && gs == 0.0) break;
        u = Action{u.u_a - opt.step_size * ga, u.u_steer - opt.step_size * gs}.clamped();
    }
    return best;
}

inline Action soft_filter_pi_xi(const SafetyClf& clf, const DynModel& dyn, const VehicleState& x, const Action& u_hat,
                                int steps = 50, double step_size = 0.05) {
    return soft_filter(LearnedCritic{&clf, &dyn}, x, u_hat, {steps, step_size});
}

// ---------------------------------------------------------------------------
// Minibatch training helpers shared by the trainer and the benchmarks.

/// Stratified minibatches: half positives, half negatives. Returns the mean
/// loss over the steps; skips (returns 0) when either class is empty.
inline double train_bce(Mlp& net, AdamState& opt, const Mat& X, const std::vector<int>& labels, int steps,
                        int batch, Rng& rng) {
    std::vector<Eigen::Index> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(static_cast<Eigen::Index>(i));
    if (pos.empty() || neg.empty() || steps <= 0) return 0.0;
    std::uniform_int_distribution<std::size_t> dp(0, pos.size() - 1), dn(0, neg.size() - 1);
    const int half = std::max(1, batch / 2);
    double total = 0.0;
    Mat Xb(X.rows(), 2 * half);
    std::vector<int> yb(static_cast<std::size_t>(2 * half));
    for (int st = 0; st < steps; ++st) {
        for (int k = 0; k < half; ++k) {
            Xb.col(k) = X.col(pos[dp(rng)]);
            yb[static_cast<std::size_t>(k)] = 1;
            Xb.col(half + k) = X.col(neg[dn(rng)]);
            yb[static_cast<std::size_t>(half + k)] = 0;
        }
        const LossGrad lg = bce_loss_and_grad(net, Xb, yb, true);
        if (!std::isfinite(lg.loss)) return lg.loss;
        adam_step(net, lg.grads, opt);
        total += lg.loss;
    }
    return total / steps;
}

inline double train_dyn(DynModel& model, AdamState& opt, const std::vector<const Sample*>& data, int steps, int batch,
                        Rng& rng) {
    if (data.empty() || steps <= 0) return 0.0;
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<VehicleState> x(static_cast<std::size_t>(batch)), xn(static_cast<std::size_t>(batch));
    std::vector<Action> u(static_cast<std::size_t>(batch));
    double total = 0.0;
    for (int st = 0; st < steps; ++st) {
        for (int b = 0; b < batch; ++b) {
            const Sample& s = *data[pick(rng)];
            x[static_cast<std::size_t>(b)] = s.x;
            u[static_cast<std::size_t>(b)] = s.u_applied;
            xn[static_cast<std::size_t>(b)] = s.x_next;
        }
        const LossGrad lg = dyn_loss_and_grad(model, x, u, xn);
        if (!std::isfinite(lg.loss)) return lg.loss;
        adam_step(model.net, lg.grads, opt);
        total += lg.loss;
    }
    return total / steps;
}

// ---------------------------------------------------------------------------
// Checkpoints: dyn.json and clf.json hold weights, norm.json the statistics.

inline nlohmann::json norm_to_json(const DynModel& dyn, const SafetyClf& clf) {
    auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"mean", vec(clf.norm.mean)},       {"std", vec(clf.norm.stddev)},         {"lap_length", clf.norm.lap_length},
            {"delta_mean", vec(dyn.delta_mean)}, {"delta_std", vec(dyn.delta_std)}, {"lambda", clf.lambda}};
}

inline void save_critic(const DynModel& dyn, const SafetyClf& clf, const std::string& dir) {
    save_weights(dyn.net, dir + "/dyn.json");
    save_weights(clf.net, dir + "/clf.json");
    std::ofstream os(dir + "/norm.json");
    if (!os) throw Error("cannot write '" + dir + "/norm.json'");
    os << norm_to_json(dyn, clf).dump() << '\n';
}

inline void load_critic(const std::string& dir, DynModel& dyn, SafetyClf& clf) {
    dyn.net = load_weights(dir + "/dyn.json");
    clf.net = load_weights(dir + "/clf.json");
    std::ifstream is(dir + "/norm.json");
    if (!is) throw Error("cannot read '" + dir + "/norm.json'");
    try {
        nlohmann::json j;
        is >> j;
        auto vec = [&](const char* k) {
            const auto v = j.at(k).get<std::vector<double>>();
            return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        NormStats n{vec("mean"), vec("std"), j.at("lap_length").get<double>()};
        dyn.norm = n;
        clf.norm = n;
        dyn.delta_mean = vec("delta_mean");
        dyn.delta_std = vec("delta_std");
        clf.lambda = j.at("lambda").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("norm.json: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Safe-set estimation on the synthetic 2-D sets.

struct SyntheticClfOptions {
    std::vector<int> hidden{32, 32};
    int steps = 3000;
    int batch = 256;
    double lr = 3e-3;
    std::uint64_t seed = 0;
};

/// Classifier on d_plus (label 1) against the queries the sweep entry kept
/// (label 0); removed queries carry no label.
inline Mlp train_synthetic_classifier(const LabelBenchmark& b, const LabelSweepEntry& e,
                                      const SyntheticClfOptions& opt = {}) {
    std::vector<int> labels;
    std::vector<const Vec*> pts;
    for (const auto& p : b.d_plus) {
        pts.push_back(&p);
        labels.push_back(1);
    }
    for (std::size_t i = 0; i < b.d_query.size(); ++i)
        if (!e.removed[i]) {
            pts.push_back(&b.d_query[i]);
            labels.push_back(0);
        }
    Mat X(2, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = *pts[i];
    Mlp net(mlp_sizes(2, opt.hidden, 1), Head::Sigmoid, derive_seed(opt.seed, {0x636c66}));
    AdamState adam(net, opt.lr);
    Rng rng(derive_seed(opt.seed, {0x626174}));
    const double loss = train_bce(net, adam, X, labels, opt.steps, opt.batch, rng);
    if (!std::isfinite(loss)) throw Error("synthetic classifier: non-finite loss");
    return net;
}

/// Mean of the true-positive and true-negative rates of p >= 0.5 against
/// membership, over an n x n grid of cell centers covering the ambient box.
inline double balanced_grid_accuracy(const Mlp& net, const SyntheticSet& set, int n = 200) {
    long tp = 0, pos = 0, tn = 0, neg = 0;
    Mat G(2, n);
    for (int i = 0; i < n; ++i) {
        const double x = -set.box + (i + 0.5) * 2.0 * set.box / n;
        for (int j = 0; j < n; ++j) G.col(j) << x, -set.box + (j + 0.5) * 2.0 * set.box / n;
        const Mat p = net.forward(G);
        for (int j = 0; j < n; ++j) {
            const bool truth = set.contains(G.col(j));
            const bool pred = p(0, j) >= 0.5;
            if (truth) {
                ++pos;
                tp += pred;
            } else {
                ++neg;
                tn += !pred;
            }
        }
    }
    if (pos == 0 || neg == 0) throw Error("balanced_grid_accuracy: grid misses a class");
    return 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
}

}  // namespace cabc
