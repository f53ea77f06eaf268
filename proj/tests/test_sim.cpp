#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cabc/experts.hpp"
#include "cabc/sim.hpp"

using namespace cabc;

namespace {

const Track& circle() {
    static const Track t = load_track("circle");
    return t;
}
const Track& lshaped() {
    static const Track t = load_track("lshaped");
    return t;
}
const Track& gp() {
    static const Track t = load_track("gp");
    return t;
}

SimConfig noiseless() {
    SimConfig c;
    c.noise_sigma_v = 0;
    c.noise_sigma_kappa = 0;
    return c;
}

}  // namespace

TEST(Step, ZeroStateZeroInputIsAFixedPoint) {
    const SimConfig cfg;
    const VehicleState x{};
    EXPECT_EQ(step(cfg, gp(), x, Action{}), x);
}

TEST(Step, StraightLineMatchesRefinedIntegration) {
    // lshaped starts on an 8 m straight.
    const SimConfig cfg;
    ASSERT_EQ(lshaped().curvature_at(0.0), 0.0);
    for (double ua : {-0.1, 0.2, 0.5, 1.0}) {
        VehicleState x;
        x.v_long = 1.0;
        double v = 1.0, s = 0.0;
        const double h = cfg.dt / 100;
        for (int k = 0; k < 10; ++k) {
            x = step(cfg, lshaped(), x, {ua, 0.0});
            for (int i = 0; i < 100; ++i) {
                s += h * v;
                v = std::clamp(v + h * (cfg.drive_gain * ua - cfg.drag * v), 0.0, cfg.v_max);
            }
        }
        EXPECT_NEAR(x.v_long, v, 1e-3 * v) << "u_a=" << ua;
        EXPECT_NEAR(x.s, s, 1e-3 * s) << "u_a=" << ua;
        const double v_inf = cfg.drive_gain * ua / cfg.drag;
        const double exact = v_inf + (1.0 - v_inf) * std::exp(-cfg.drag * 1.0);
        EXPECT_NEAR(x.v_long, exact, 1e-3 * exact);
        EXPECT_EQ(x.x_tran, 0.0);
        EXPECT_EQ(x.e_psi, 0.0);
    }
}

TEST(Step, SteadyCorneringYawRateMatchesSpeedTimesCurvature) {
    const SimConfig cfg;
    const double kappa = circle().curvature_at(0);
    for (double v : {1.0, 2.0, 3.0}) {
        VehicleState x;
        x.v_long = v;
        const double delta = kappa * (cfg.wheelbase() + cfg.understeer_gradient() * v * v);
        const Action u{cfg.drag * v / cfg.drive_gain, delta / cfg.max_steer};
        for (int k = 0; k < 100; ++k) x = step(cfg, circle(), x, u);
        EXPECT_NEAR(x.omega_psi, x.v_long * kappa, 0.05 * x.v_long * kappa) << "v=" << v;
        EXPECT_NEAR(x.v_long, v, 0.05 * v);
        EXPECT_LT(std::abs(x.x_tran), 0.2);
    }
}

TEST(Step, ClampsSpeedAndDetectsSingularity) {
    const SimConfig cfg;
    VehicleState x;
    x.v_long = cfg.v_max;
    x = step(cfg, lshaped(), x, {1.0, 0.0});
    EXPECT_EQ(x.v_long, cfg.v_max);
    VehicleState y;
    y.v_long = 0.0;
    y = step(cfg, lshaped(), y, {-1.0, 0.0});
    EXPECT_EQ(y.v_long, 0.0);

    VehicleState bad;
    bad.v_long = 1.0;
    bad.x_tran = 1.0 / circle().curvature_at(0);
    EXPECT_THROW(step(cfg, circle(), bad, Action{}), SimSingularityError);
}

TEST(Step, FiniteDifferenceJacobianIsBoundedOnTrack) {
    const SimConfig cfg;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uv(0.5, 4.5), ux(-0.4, 0.4), ue(-0.3, 0.3), us(0, 40), uu(-1, 1);
    for (int i = 0; i < 50; ++i) {
        VehicleState x{uv(rng), 0.1 * ue(rng), ue(rng), us(rng), ux(rng), ue(rng)};
        const Action u{uu(rng), uu(rng)};
        const double h = 1e-6;
        for (std::size_t j = 0; j < VehicleState::kDim; ++j) {
            auto a = x.to_array(), b = x.to_array();
            a[j] += h;
            b[j] -= h;
            const auto fa = step(cfg, gp(), VehicleState::from_array(a), u).to_array();
            const auto fb = step(cfg, gp(), VehicleState::from_array(b), u).to_array();
            for (std::size_t k = 0; k < VehicleState::kDim; ++k) {
                const double d = (fa[k] - fb[k]) / (2 * h);
                EXPECT_TRUE(std::isfinite(d));
                EXPECT_LT(std::abs(d), 100.0);
            }
        }
    }
}

TEST(Observe, NoiselessMapIsDeterministicAndHasFixedLength) {
    const SimConfig cfg = noiseless();
    VehicleState x{1.5, 0.1, -0.2, 3.0, 0.1, 0.05};
    Rng rng(1);
    const auto y = observe(cfg, circle(), x, rng);
    EXPECT_EQ(y, observe_noiseless(cfg, circle(), x));
    ASSERT_EQ(y.values.size(), 3u + cfg.preview_k);
    EXPECT_EQ(y.values[0], 1.5);
    EXPECT_EQ(y.values[1], 0.1);
    EXPECT_EQ(y.values[2], -0.2);
}

TEST(Observe, PreviewIsLateralOffsetOfCenterlineAhead) {
    const SimConfig cfg = noiseless();
    const double R = 1.0 / circle().curvature_at(0);
    VehicleState x;
    x.s = 2.0;
    const auto y = observe_noiseless(cfg, circle(), x);
    for (int i = 1; i <= cfg.preview_k; ++i)
        EXPECT_NEAR(y.preview()[static_cast<std::size_t>(i - 1)], R * (1 - std::cos(i * cfg.preview_spacing / R)), 1e-12);
    // Straight ahead with a lateral offset: every preview point sits at -x_tran.
    VehicleState z;
    z.x_tran = 0.2;
    const auto yz = observe_noiseless(cfg, lshaped(), z);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(yz.preview()[static_cast<std::size_t>(i)], -0.2, 1e-12);
}

TEST(Observe, SeededNoiseIsReproducible) {
    const SimConfig cfg;
    const VehicleState x{1, 0, 0, 5, 0, 0};
    Rng a(42), b(42);
    EXPECT_EQ(observe(cfg, gp(), x, a), observe(cfg, gp(), x, b));
}

TEST(Observe, EmpiricalNoiseMatchesConfiguredSigma) {
    SimConfig cfg;
    cfg.noise_sigma_v = 0.05;
    cfg.noise_sigma_kappa = 0.02;
    const VehicleState x{1, 0, 0, 5, 0.1, 0};
    const auto clean = observe_noiseless(cfg, gp(), x);
    Rng rng(7);
    const int n = 100000;
    std::vector<double> sum(clean.values.size()), sq(clean.values.size());
    for (int i = 0; i < n; ++i) {
        const auto y = observe(cfg, gp(), x, rng);
        for (std::size_t c = 0; c < y.values.size(); ++c) {
            const double e = y.values[c] - clean.values[c];
            sum[c] += e;
            sq[c] += e * e;
        }
    }
    for (std::size_t c = 0; c < sum.size(); ++c) {
        const double mean = sum[c] / n;
        const double sd = std::sqrt(sq[c] / n - mean * mean);
        const double want = c < 3 ? cfg.noise_sigma_v : cfg.noise_sigma_kappa;
        EXPECT_NEAR(sd, want, 0.02 * want) << "channel " << c;
    }
}

TEST(Constraints, BoundsAreInclusiveWithMargin) {
    const SimConfig cfg;
    VehicleState x{2.0, 0, 0, 1, 0, 0};
    EXPECT_TRUE(in_constraints(cfg, gp(), x));
    x.x_tran = gp().half_width();
    EXPECT_FALSE(in_constraints(cfg, gp(), x));
    x.x_tran = gp().half_width() - cfg.half_width_margin;
    EXPECT_TRUE(in_constraints(cfg, gp(), x));
    x.x_tran = 0;
    x.v_long = cfg.v_max;
    EXPECT_TRUE(in_constraints(cfg, gp(), x));
    x.e_psi = cfg.e_psi_max + 1e-9;
    EXPECT_FALSE(in_constraints(cfg, gp(), x));
    x.e_psi = std::nan("");
    EXPECT_FALSE(in_constraints(cfg, gp(), x));
}

TEST(Target, RequiresFullLapOnTrack) {
    const SimConfig cfg;
    const double L = gp().lap_length();
    VehicleState x{2.0, 0, 0, 3.0 + L, 0, 0};
    EXPECT_TRUE(in_target(cfg, gp(), x, 3.0));
    EXPECT_EQ(stage_cost(cfg, gp(), x, Action{}, 3.0), 0.0);
    x.s = 3.0 + 0.99 * L;
    EXPECT_FALSE(in_target(cfg, gp(), x, 3.0));
    EXPECT_EQ(stage_cost(cfg, gp(), x, Action{}, 3.0), 1.0);
    x.s = 3.0 + L;
    x.x_tran = 0.55;
    EXPECT_FALSE(in_target(cfg, gp(), x, 3.0));
}

TEST(Rollout, ZeroActionFromRestTimesOut) {
    const SimConfig cfg = noiseless();
    Rng rng(0);
    const auto t = rollout(cfg, gp(), Policy([](const Observation&, const VehicleState&) { return Action{}; }),
                           VehicleState{}, 50, rng);
    EXPECT_EQ(t.outcome, Outcome::Failure);
    EXPECT_EQ(t.termination_reason, Termination::Timeout);
    ASSERT_EQ(t.samples.size(), 50u);
    for (const auto& s : t.samples) EXPECT_EQ(s.x_next, VehicleState{});
}

TEST(Rollout, PidCircleLapTimeMatchesKinematicEstimate) {
    const SimConfig cfg = noiseless();
    PidExpert pid(cfg, circle());
    Rng rng(0);
    const auto t = rollout(cfg, circle(), Policy([&](const Observation&, const VehicleState& x) { return pid(x); }),
                           standard_start(), cfg.max_steps, rng);
    ASSERT_EQ(t.outcome, Outcome::Success);
    const double lap_time = t.samples.size() * cfg.dt;
    EXPECT_NEAR(lap_time, circle().lap_length() / 1.0, 0.1 * circle().lap_length());
    double cost = 0;
    for (const auto& s : t.samples) cost += stage_cost(cfg, circle(), s.x, s.u_applied, 0.0);
    EXPECT_EQ(cost, static_cast<double>(t.samples.size()));
}

TEST(Rollout, FullThrottleFullSteerViolatesConstraints) {
    const SimConfig cfg;
    Rng rng(0);
    const auto t = rollout(cfg, gp(), Policy([](const Observation&, const VehicleState&) { return Action{1, 1}; }),
                           standard_start(), cfg.max_steps, rng);
    EXPECT_EQ(t.outcome, Outcome::Failure);
    EXPECT_EQ(t.termination_reason, Termination::ConstraintViolation);
    EXPECT_LT(t.samples.size(), 100u);
}

TEST(Rollout, ActionsAreClampedAndSamplesChain) {
    const SimConfig cfg;
    Rng rng(3);
    const auto t = rollout(cfg, gp(), Policy([](const Observation&, const VehicleState&) { return Action{3.0, -0.05}; }),
                           standard_start(), 30, rng);
    ASSERT_FALSE(t.samples.empty());
    EXPECT_TRUE(t.chained());
    EXPECT_TRUE(t.consistent());
    for (const auto& s : t.samples) {
        EXPECT_EQ(s.u_applied.u_a, 1.0);
        EXPECT_EQ(s.x_next, step(cfg, gp(), s.x, s.u_applied));
    }
}

TEST(Rollout, SeededRunsAreBitIdenticalAndSuccessfulRunsStayFeasible) {
    const SimConfig cfg;
    for (const Track* tr : {&circle(), &lshaped(), &gp()}) {
        auto run = [&](std::uint64_t seed) {
            PidExpert pid(cfg, *tr);
            Rng rng(seed);
            return rollout(cfg, *tr, Policy([&](const Observation&, const VehicleState& x) { return pid(x); }),
                           standard_start(), cfg.max_steps, rng);
        };
        const auto a = run(9), b = run(9);
        EXPECT_EQ(a, b);
        ASSERT_EQ(a.outcome, Outcome::Success) << tr->name();
        for (const auto& s : a.samples) EXPECT_TRUE(in_constraints(cfg, *tr, s.x));
        EXPECT_TRUE(a.chained());
    }
}

TEST(Rollout, SingularityEndsAsDistinctFailure) {
    const SimConfig cfg;
    VehicleState x0;
    x0.v_long = 2.0;
    x0.x_tran = 1.0 / circle().curvature_at(0);
    Rng rng(0);
    const auto t = rollout(cfg, circle(), Policy([](const Observation&, const VehicleState&) { return Action{}; }),
                           x0, 200, rng);
    EXPECT_EQ(t.outcome, Outcome::Failure);
    EXPECT_EQ(t.termination_reason, Termination::Singularity);
}

TEST(SimConfig, ValidatesAndAppliesKeys) {
    std::istringstream is("dt = 0.05\nv_max = 4\npreview_k = 5\nseed = 3\nlap_target = 2\n");
    const auto kv = KeyValues::parse(is);
    SimConfig c;
    c.apply(kv);
    EXPECT_EQ(c.dt, 0.05);
    EXPECT_EQ(c.v_max, 4.0);
    EXPECT_EQ(c.preview_k, 5);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.lap_target, 2);
    std::istringstream bad("dt = -1\n");
    SimConfig d;
    EXPECT_THROW(d.apply(KeyValues::parse(bad)), Error);
}
