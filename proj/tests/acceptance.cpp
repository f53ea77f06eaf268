// Acceptance gate: one PASS/FAIL line per criterion. Set
// CABC_ACCEPTANCE_LONG=1 for the full gp comparison in criterion 7.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cabc/critic.hpp"
#include "cabc/trainer.hpp"

using namespace cabc;

namespace {

// Tolerances.
constexpr double kFdRel = 1e-4;
constexpr double kFdAbs = 1e-6;
constexpr double kHullTol = 1e-7;
constexpr double kProp1Slack = 1e-9;
constexpr double kMinBalancedAccuracy = 0.90;
constexpr double kMinBaselineViolation = 0.20;
constexpr double kPhysicsRel = 1e-3;
constexpr double kCorneringRel = 0.05;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const Track& track(const std::string& name) {
    static std::map<std::string, Track> cache;
    auto it = cache.find(name);
    if (it == cache.end()) it = cache.emplace(name, load_track(name)).first;
    return it->second;
}

VehicleState random_state(Rng& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    return {2.0 + u(rng), 0.2 * u(rng), 0.5 * u(rng), 10 + 5 * u(rng), 0.3 * u(rng), 0.3 * u(rng)};
}

Action random_action(Rng& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    return {u(rng), u(rng)};
}

std::vector<int> random_hidden(Rng& rng) {
    std::uniform_int_distribution<int> depth(1, 3), width(3, 12);
    std::vector<int> h(static_cast<std::size_t>(depth(rng)));
    for (auto& w : h) w = width(rng);
    return h;
}

void jitter_biases(Mlp& net, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& l : net.params())
        for (auto& b : l.b) b = u(rng);
}

/// Worst central-difference error over every parameter of `net`.
double param_fd_error(Mlp& net, const LayerSet& analytic, const std::function<double()>& loss, double h = 1e-5) {
    double worst = 0;
    for (std::size_t l = 0; l < net.params().size(); ++l) {
        auto& layer = net.params()[l];
        auto check = [&](double& w, double a) {
            const double orig = w;
            w = orig + h;
            const double fp = loss();
            w = orig - h;
            const double fm = loss();
            w = orig;
            worst = std::max(worst, fd_error(a, (fp - fm) / (2 * h), kFdRel, kFdAbs));
        };
        for (Eigen::Index i = 0; i < layer.W.size(); ++i) check(layer.W.data()[i], analytic[l].W.data()[i]);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) check(layer.b[i], analytic[l].b[i]);
    }
    return worst;
}

NormStats racing_norm() {
    NormStats n = NormStats::identity(kEmbeddedDim);
    n.lap_length = track("gp").lap_length();
    n.mean << 2, 0, 0, 0, 0, 0, 0;
    n.stddev << 1, 0.3, 0.5, 0.8, 0.8, 0.2, 0.2;
    return n;
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
    Rng rng(101);
    const SimConfig sim;
    const Track& gp = track("gp");
    std::uniform_real_distribution<double> lam(0.5, 10.0);
    double policy = 0, dyn = 0, clf = 0, agent = 0, agent_u = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int in_dim =
            policy_input_dim(trial % 2 ? ObsMode::Output : ObsMode::FullState, sim);
        const int B = 6;

        // Policy: clone loss and input gradient.
        Mlp pi(mlp_sizes(in_dim, random_hidden(rng), Action::kDim), Head::Tanh, rng());
        jitter_biases(pi, rng);
        PolicyBatch pb{Mat::Random(in_dim, B), Mat::Random(Action::kDim, B), {}};
        for (int b = 0; b < B; ++b) pb.xs.push_back(random_state(rng));
        const AgentLoss clone = agent_loss_and_grad(pi, pb, nullptr, nullptr);
        policy = std::max(policy, param_fd_error(pi, clone.grad_theta,
                                                 [&] { return agent_loss_and_grad(pi, pb, nullptr, nullptr).clone; }));
        policy = std::max(policy, grad_check(pi, pb.inputs.col(0), kFdRel).max_error());

        // Dynamics surrogate on simulator transitions.
        DynModel f(random_hidden(rng), racing_norm(), rng());
        jitter_biases(f.net, rng);
        f.delta_mean << 0.05, 0, 0, 0.2, 0, 0;
        f.delta_std << 0.1, 0.05, 0.2, 0.05, 0.02, 0.05;
        std::vector<VehicleState> xs, xn;
        std::vector<Action> us;
        for (int b = 0; b < B; ++b) {
            xs.push_back(random_state(rng));
            us.push_back(random_action(rng));
            xn.push_back(step(sim, gp, xs.back(), us.back()));
        }
        const LossGrad dl = dyn_loss_and_grad(f, xs, us, xn);
        dyn = std::max(dyn, param_fd_error(f.net, dl.grads, [&] { return dyn_loss_and_grad(f, xs, us, xn).loss; }));

        // Classifier, balanced and plain BCE.
        SafetyClf p(random_hidden(rng), racing_norm(), lam(rng), rng());
        jitter_biases(p.net, rng);
        std::vector<int> labels;
        for (int b = 0; b < B; ++b) labels.push_back(static_cast<int>(rng() % 2));
        labels[0] = 1;
        labels[1] = 0;
        const Mat X = embedded_batch(p.norm, xs);
        for (bool balanced : {true, false}) {
            const LossGrad cl = bce_loss_and_grad(p.net, X, labels, balanced);
            clf = std::max(clf, param_fd_error(p.net, cl.grads,
                                               [&] { return bce_loss_and_grad(p.net, X, labels, balanced).loss; }));
        }

        // Composed path: policy -> frozen dyn -> frozen clf.
        Mlp pi_full(mlp_sizes(static_cast<int>(kEmbeddedDim), random_hidden(rng), Action::kDim), Head::Tanh, rng());
        jitter_biases(pi_full, rng);
        PolicyBatch fb{embedded_batch(p.norm, xs), Mat::Random(Action::kDim, B), xs};
        const AgentLoss al = agent_loss_and_grad(pi_full, fb, &f, &p);
        agent = std::max(agent, param_fd_error(pi_full, al.grad_theta, [&] {
                             const AgentLoss a = agent_loss_and_grad(pi_full, fb, &f, &p);
                             return a.clone + a.safety;
                         }));
        const Action u = random_action(rng);
        const auto pg = safety_penalty_and_input_grad(p, f, xs[0], u);
        auto pen = [&](Action v) { return safety_penalty_and_input_grad(p, f, xs[0], v).value; };
        const double h = 1e-6;
        agent_u = std::max({agent_u,
                            fd_error(pg.grad_a, (pen({u.u_a + h, u.u_steer}) - pen({u.u_a - h, u.u_steer})) / (2 * h),
                                     kFdRel, kFdAbs),
                            fd_error(pg.grad_steer,
                                     (pen({u.u_a, u.u_steer + h}) - pen({u.u_a, u.u_steer - h})) / (2 * h), kFdRel,
                                     kFdAbs)});
    }
    const double worst = std::max({policy, dyn, clf, agent, agent_u});
    return {worst <= kFdRel, fmt("max normalized error policy %.2e dyn %.2e clf %.2e agent %.2e penalty_u %.2e", policy,
                                 dyn, clf, agent, agent_u)};
}

// ---------------------------------------------------------------------------

/// x in conv(S) iff some affinely independent subset of at most d+1 points
/// has non-negative barycentric weights reproducing x: every basic feasible
/// solution of {w >= 0, sum w = 1, S w = x} is one of these.
bool simplex_basis_oracle(const Vec& x, const std::vector<Vec>& S) {
    const int n = static_cast<int>(S.size()), d = static_cast<int>(x.size());
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        const int k = __builtin_popcount(mask);
        if (k > d + 1) continue;
        Mat A(d + 1, k);
        int c = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) {
                A.col(c).head(d) = S[static_cast<std::size_t>(i)];
                A(d, c++) = 1.0;
            }
        Vec b(d + 1);
        b << x, 1.0;
        const auto qr = A.colPivHouseholderQr();
        if (qr.rank() < k) continue;
        const Vec w = qr.solve(b);
        if ((A * w - b).norm() <= 1e-9 && w.minCoeff() >= -1e-12) return true;
    }
    return false;
}

Verdict hull_oracle_equivalence() {
    Rng rng(77);
    std::uniform_int_distribution<int> dim(2, 7), size(1, 9), kind(0, 3);
    std::gamma_distribution<double> g(1.0);
    std::normal_distribution<double> n01;
    auto gauss = [&](int d, double scale) {
        Vec p(d);
        for (auto& v : p) v = scale * n01(rng);
        return p;
    };
    auto combo = [&](const std::vector<Vec>& S, Vec w) {
        w /= w.sum();
        Vec x = Vec::Zero(S[0].size());
        for (std::size_t i = 0; i < S.size(); ++i) x += w[static_cast<Eigen::Index>(i)] * S[i];
        return x;
    };
    int agree = 0, inside = 0;
    const int total = 500;
    for (int trial = 0; trial < total; ++trial) {
        const int d = dim(rng), n = size(rng);
        std::vector<Vec> S;
        for (int i = 0; i < n; ++i) S.push_back(gauss(d, 1.0));
        Vec w(n);
        for (auto& v : w) v = g(rng);
        Vec x;
        switch (kind(rng)) {
            case 0: x = combo(S, w); break;
            case 1:
                w[0] = -0.05 * w.sum();
                x = combo(S, w);
                break;
            case 2:
                w[0] = 0.0;  // on a face when n > 1
                x = combo(S, n > 1 ? w : Vec::Ones(1));
                break;
            default: x = gauss(d, 0.7);
        }
        const bool want = simplex_basis_oracle(x, S);
        inside += want;
        agree += hull_membership(x, S, kHullTol) == want;
    }
    return {agree == total, fmt("%d/%d agree (%d inside)", agree, total, inside)};
}

// ---------------------------------------------------------------------------

/// Test-side geometry for the synthetic sets: membership and a signed
/// distance from dense boundary sampling.
struct Geometry {
    SyntheticSet set;
    std::vector<Vec> boundary;

    bool inside(const Vec& p) const {
        const double r = std::hypot(p[0], p[1]);
        if (r > set.outer_radius) return false;
        if (set.kind == SyntheticKind::Crescent) return std::hypot(p[0] - set.bite_offset, p[1]) > set.bite_radius;
        return std::abs(std::atan2(p[1], p[0])) >= set.wedge_half_angle;
    }

    explicit Geometry(const SyntheticSet& s) : set(s) {
        const int n = 40000;
        auto add_if_boundary = [&](double x, double y, bool want_inside_outer, bool want_outside_bite) {
            Vec p(2);
            p << x, y;
            const bool in_outer = std::hypot(x, y) <= set.outer_radius + 1e-12;
            bool keep = true;
            if (want_inside_outer) keep = keep && in_outer;
            if (set.kind == SyntheticKind::Crescent && want_outside_bite)
                keep = keep && std::hypot(x - set.bite_offset, y) >= set.bite_radius - 1e-12;
            if (set.kind == SyntheticKind::Sector && want_outside_bite)
                keep = keep && std::abs(std::atan2(y, x)) >= set.wedge_half_angle - 1e-12;
            if (keep) boundary.push_back(p);
        };
        for (int i = 0; i < n; ++i) {
            const double a = 2 * kPi * i / n;
            add_if_boundary(set.outer_radius * std::cos(a), set.outer_radius * std::sin(a), false, true);
            if (set.kind == SyntheticKind::Crescent)
                add_if_boundary(set.bite_offset + set.bite_radius * std::cos(a), set.bite_radius * std::sin(a), true,
                                false);
            else {
                const double t = set.outer_radius * i / n, c = std::cos(set.wedge_half_angle),
                             sn = std::sin(set.wedge_half_angle);
                add_if_boundary(t * c, t * sn, true, false);
                add_if_boundary(t * c, -t * sn, true, false);
            }
        }
    }

    double signed_distance(const Vec& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : boundary) best = std::min(best, (p - b).norm());
        return inside(p) ? best : -best;
    }

    bool concave(const Vec& p) const { return std::hypot(p[0], p[1]) <= set.outer_radius && !inside(p); }
};

Verdict prop1_soundness() {
    const std::vector<double> rhos{1.0, 0.5, 0.25};
    bool pass = true;
    std::string detail;
    for (auto kind : {SyntheticKind::Crescent, SyntheticKind::Sector}) {
        SyntheticSet set;
        set.kind = kind;
        const Geometry geo(set);
        const auto bench = run_label_benchmark(set, 2000, 2000, rhos, 0, kHullTol);
        std::size_t prev = std::numeric_limits<std::size_t>::max();
        detail += to_string(kind) + ":";
        for (const auto& e : bench.sweep) {
            std::size_t violations = 0, concave = 0;
            for (std::size_t i = 0; i < bench.d_query.size(); ++i) {
                if (!e.removed[i]) continue;
                const Vec& q = bench.d_query[i];
                // Sampled distance never underestimates, so this can only over-count.
                if (geo.signed_distance(q) < -e.rho - kProp1Slack) ++violations;
                concave += geo.concave(q);
            }
            pass = pass && violations == 0 && concave <= prev;
            prev = concave;
            detail += fmt(" rho=%.2f viol=%zu concave=%zu", e.rho, violations, concave);
        }
        detail += "; ";
    }
    detail.resize(detail.size() - 2);
    return {pass, detail};
}

// ---------------------------------------------------------------------------

Verdict safe_set_estimation() {
    SyntheticSet set;
    set.kind = SyntheticKind::Crescent;
    const Geometry geo(set);
    const auto bench = run_label_benchmark(set, 2000, 2000, {0.25}, 0, kHullTol);
    const Mlp net = train_synthetic_classifier(bench, bench.sweep[0]);
    const int n = 200;
    long tp = 0, pos = 0, tn = 0, neg = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Vec p(2);
            p << -set.box + (i + 0.5) * 2 * set.box / n, -set.box + (j + 0.5) * 2 * set.box / n;
            const bool truth = geo.inside(p), pred = net.forward(p)[0] >= 0.5;
            (truth ? pos : neg)++;
            if (truth && pred) ++tp;
            if (!truth && !pred) ++tn;
        }
    const double acc = 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
    return {acc >= kMinBalancedAccuracy, fmt("balanced accuracy %.4f (tpr %.4f tnr %.4f)", acc,
                                             static_cast<double>(tp) / pos, static_cast<double>(tn) / neg)};
}

// ---------------------------------------------------------------------------

bool same_weights(const Mlp& a, const Mlp& b) {
    if (a.params().size() != b.params().size()) return false;
    for (std::size_t l = 0; l < a.params().size(); ++l) {
        const auto &x = a.params()[l], &y = b.params()[l];
        if (x.W.size() != y.W.size() || x.b.size() != y.b.size()) return false;
        if (std::memcmp(x.W.data(), y.W.data(), sizeof(double) * x.W.size()) != 0) return false;
        if (std::memcmp(x.b.data(), y.b.data(), sizeof(double) * x.b.size()) != 0) return false;
    }
    return true;
}

TrainConfig short_config(std::uint64_t seed) {
    TrainConfig c;
    c.epochs = 5;
    c.seed = seed;
    c.policy_hidden = c.dyn_hidden = c.clf_hidden = {32, 32};
    c.policy_steps = c.dyn_steps = c.clf_steps = 60;
    c.batch_size = 64;
    c.actuation_noise_sigma = 0.3;
    c.eval_laps = 3;
    c.early_stop = false;
    c.k_f = 2;
    c.k_p = 2;
    return c;
}

Verdict degeneracies() {
    TrainConfig c = short_config(5);
    c.lambda = 0.0;
    const auto ca = train_ca(c, SimConfig{}, ExpertConfig{}, track("gp"));
    const auto bc = train_bc(c, SimConfig{}, ExpertConfig{}, track("gp"));
    std::size_t negatives = 0;
    for (const auto& r : ca.reports) negatives = std::max(negatives, r.n_minus);
    const bool trainer_ok = negatives > 0 && same_weights(ca.policy, bc.policy);

    Rng rng(55);
    int zero_ok = 0, sat_ok = 0, oracle_ok = 0;
    const int trials = 50;
    const SimConfig sim;
    for (int t = 0; t < trials; ++t) {
        const auto x = random_state(rng);
        const auto u = random_action(rng);
        DynModel dyn(random_hidden(rng), racing_norm(), rng());
        SafetyClf clf(random_hidden(rng), racing_norm(), 0.0, rng());
        zero_ok += soft_filter_pi_xi(clf, dyn, x, u) == u;
        clf.lambda = 10.0;
        clf.net.params().back().W.setZero();
        clf.net.params().back().b[0] = 40.0;
        const Action s = soft_filter_pi_xi(clf, dyn, x, u);
        sat_ok += std::abs(s.u_a - u.u_a) <= 1e-9 && std::abs(s.u_steer - u.u_steer) <= 1e-9;
        const auto r = predictive_filter_oracle(x, u, [](const VehicleState&) { return true; }, sim, track("gp"));
        oracle_ok += r.feasible && r.u == u;
    }
    const bool pass = trainer_ok && zero_ok == trials && sat_ok == trials && oracle_ok == trials;
    return {pass, fmt("lambda=0 CA==BC %s (max |D-| %zu); pi_xi lambda=0 %d/%d, saturated %d/%d; oracle %d/%d",
                      trainer_ok ? "bit-identical" : "DIFFERENT", negatives, zero_ok, trials, sat_ok, trials, oracle_ok,
                      trials)};
}

// ---------------------------------------------------------------------------

Policy noisy_racing(RacingExpert& ex, double sigma, Rng& act, const SafetyClf* clf = nullptr,
                    const DynModel* dyn = nullptr) {
    return [&ex, sigma, &act, clf, dyn](const Observation&, const VehicleState& x) {
        std::normal_distribution<double> n01;
        const Action u = ex(x);
        const double na = n01(act), ns = n01(act);
        const Action noisy = Action{u.u_a + sigma * na, u.u_steer + sigma * ns}.clamped();
        return clf ? soft_filter_pi_xi(*clf, *dyn, x, noisy) : noisy;
    };
}

Verdict filter_efficacy() {
    const SimConfig cfg;
    const Track& gp = track("gp");
    // Mixed pool: noisy expert rollouts at two noise levels.
    LabeledPool pool;
    std::vector<Sample> samples;
    for (int i = 0; i < 100; ++i) {
        RacingExpert ex(cfg, gp);
        Rng obs(derive_seed(1000 + i, {1})), act(derive_seed(1000 + i, {2}));
        const auto t = rollout(cfg, gp, noisy_racing(ex, i % 2 ? 0.3 : 0.2, act), standard_start(), cfg.max_steps, obs);
        for (const auto& s : t.samples) {
            samples.push_back(s);
            (t.outcome == Outcome::Success ? pool.d_plus : pool.d_query).push_back(s.x);
        }
    }
    const NormStats norm = fit_norm(pool.d_plus, gp.lap_length());
    const LabeledPool labeled = build_negatives(pool, norm, 1.0, kHullTol);

    DynModel dyn({128, 128, 128}, norm, 1);
    dyn.fit_delta_stats(samples);
    SafetyClf clf({128, 128, 128}, norm, 1.0, 2);
    AdamState dopt(dyn.net, 1e-3), copt(clf.net, 1e-3);
    std::vector<const Sample*> ptr;
    for (const auto& s : samples) ptr.push_back(&s);
    Rng r1(5), r2(6);
    train_dyn(dyn, dopt, ptr, 2000, 256, r1);
    Mat X(kEmbeddedDim, static_cast<Eigen::Index>(labeled.d_plus.size() + labeled.d_minus.size()));
    std::vector<int> lab;
    Eigen::Index col = 0;
    for (const auto& x : labeled.d_plus) {
        X.col(col++) = norm.normalize(x);
        lab.push_back(1);
    }
    for (const auto& x : labeled.d_minus) {
        X.col(col++) = norm.normalize(x);
        lab.push_back(0);
    }
    train_bce(clf.net, copt, X, lab, 2000, 256, r2);

    int base = 0, filtered = 0;
    const int seeds = 100;
    for (int seed = 0; seed < seeds; ++seed)
        for (int filt = 0; filt < 2; ++filt) {
            RacingExpert ex(cfg, gp);
            Rng obs(derive_seed(seed, {3})), act(derive_seed(seed, {4}));
            const auto t = rollout(cfg, gp, noisy_racing(ex, 0.2, act, filt ? &clf : nullptr, &dyn), standard_start(),
                                   cfg.max_steps, obs);
            (filt ? filtered : base) += t.outcome != Outcome::Success;
        }
    const double b = static_cast<double>(base) / seeds, f = static_cast<double>(filtered) / seeds;
    return {b >= kMinBaselineViolation && f < b,
            fmt("violation rate unfiltered %.2f filtered %.2f (D+ %zu, D? %zu, D- %zu)", b, f, pool.d_plus.size(),
                pool.d_query.size(), labeled.d_minus.size())};
}

// ---------------------------------------------------------------------------

int first_full(const std::vector<EpochReport>& r, int M) {
    const auto e = epochs_to_full_eval(r);
    return e ? *e : M + 1;
}

double median(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict comparative_smoke() {
    TrainConfig c;
    c.epochs = 30;
    c.seed = 0;
    ExpertConfig pid;
    pid.kind = ExpertKind::Pid;
    const auto ca = train_ca(c, SimConfig{}, pid, track("circle"));
    const auto bc = train_bc(c, SimConfig{}, pid, track("circle"));
    const int eca = first_full(ca.reports, c.epochs), ebc = first_full(bc.reports, c.epochs);
    return {eca <= c.epochs && ebc <= c.epochs,
            fmt("smoke circle/pid M=30: first 50-lap epoch CA %d BC %d", eca, ebc)};
}

Verdict comparative_long() {
    TrainConfig c;
    c.epochs = 300;
    c.obs = ObsMode::Output;
    const ExpertConfig racing;
    std::vector<int> eca, ebc;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        c.seed = seed;
        eca.push_back(first_full(train_ca(c, SimConfig{}, racing, track("gp")).reports, c.epochs));
        ebc.push_back(first_full(train_bc(c, SimConfig{}, racing, track("gp")).reports, c.epochs));
        per_seed += fmt(" s%d:%d/%d", static_cast<int>(seed), eca.back(), ebc.back());
        std::fprintf(stderr, "criterion 7 seed %d: CA %d BC %d\n", static_cast<int>(seed), eca.back(), ebc.back());
    }
    const int ok = static_cast<int>(std::count_if(eca.begin(), eca.end(), [&](int e) { return e <= c.epochs; }));
    const double mca = median(eca), mbc = median(ebc);
    const bool a = ok >= 4, b = mca < mbc;
    return {a && b, fmt("gp/racing/output M=300: (a) CA succeeded %d/5 %s; (b) median CA %.1f vs BC %.1f %s; CA/BC%s", ok,
                        a ? "ok" : "FAIL", mca, mbc, b ? "ok" : "FAIL", per_seed.c_str())};
}

// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Verdict determinism() {
    const auto root = std::filesystem::path(CABC_TEST_TMP) / "acceptance_determinism";
    std::filesystem::remove_all(root);
    const TrainConfig c = short_config(8);
    bool same = true;
    std::string detail;
    for (auto [name, expert] : {std::pair{"gp_racing", ExpertKind::Racing}, std::pair{"circle_pid", ExpertKind::Pid}}) {
        ExpertConfig e;
        e.kind = expert;
        const std::string tr = expert == ExpertKind::Racing ? "gp" : "circle";
        for (const char* run : {"a", "b"}) train(c, SimConfig{}, e, track(tr), (root / name / run).string());
        const std::string a = slurp(root / name / "a" / "reports.csv"), b = slurp(root / name / "b" / "reports.csv");
        const bool ok = !a.empty() && a == b;
        same = same && ok;
        detail += fmt("%s %s (%zu bytes) ", name, ok ? "identical" : "DIFFERENT", a.size());
    }
    detail.pop_back();
    return {same, detail};
}

// ---------------------------------------------------------------------------

Verdict physics_oracles() {
    const SimConfig cfg;
    const Track& straight = track("lshaped");  // starts on an 8 m straight
    double worst_straight = 0;
    for (double ua : {-0.1, 0.2, 0.5, 1.0}) {
        VehicleState x;
        x.v_long = 1.0;
        double v = 1.0, s = 0.0;
        const double h = cfg.dt / 100;
        for (int k = 0; k < 10; ++k) {
            x = step(cfg, straight, x, {ua, 0.0});
            for (int i = 0; i < 100; ++i) {
                s += h * v;
                v = std::clamp(v + h * (cfg.drive_gain * ua - cfg.drag * v), 0.0, cfg.v_max);
            }
        }
        worst_straight = std::max({worst_straight, std::abs(x.v_long - v) / v, std::abs(x.s - s) / s,
                                   std::abs(x.x_tran) + std::abs(x.e_psi)});
    }
    const Track& circle = track("circle");
    const double kappa = circle.curvature_at(0);
    double worst_corner = 0;
    for (double v : {1.0, 2.0, 3.0}) {
        VehicleState x;
        x.v_long = v;
        const double delta = kappa * (cfg.wheelbase() + cfg.understeer_gradient() * v * v);
        const Action u{cfg.drag * v / cfg.drive_gain, delta / cfg.max_steer};
        for (int k = 0; k < 100; ++k) x = step(cfg, circle, x, u);
        worst_corner = std::max(worst_corner, std::abs(x.omega_psi - x.v_long * kappa) / (x.v_long * kappa));
    }
    return {worst_straight <= kPhysicsRel && worst_corner <= kCorneringRel,
            fmt("straight max rel err %.2e, cornering max rel err %.2e", worst_straight, worst_corner)};
}

}  // namespace

int main() {
    const bool long_run = [] {
        const char* v = std::getenv("CABC_ACCEPTANCE_LONG");
        return v && std::string(v) != "0" && std::string(v) != "";
    }();
    const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
        {1, gradient_correctness},
        {2, hull_oracle_equivalence},
        {3, prop1_soundness},
        {4, safe_set_estimation},
        {5, degeneracies},
        {6, filter_efficacy},
        {7,
         [&] {
             Verdict v = comparative_smoke();
             if (long_run) {
                 const Verdict l = comparative_long();
                 v = {v.pass && l.pass, v.detail + "; " + l.detail};
             }
             return v;
         }},
        {8, determinism},
        {9, physics_oracles},
    };
    int failed = 0;
    for (const auto& [id, run] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d: %s  %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !v.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
