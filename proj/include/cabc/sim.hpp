#pragma once

// Vehicle plant: dynamic bicycle with linear tires in Frenet coordinates,
// noisy output map, constraint / target membership and the rollout engine.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cabc/config.hpp"
#include "cabc/core.hpp"
#include "cabc/random.hpp"
#include "cabc/track.hpp"

namespace cabc {

struct SimConfig {
    double dt = 0.1;
    int substeps = 40;  // explicit Euler sub-steps per dt

    // Mass-normalized parameters.
    double drive_gain = 2.5;    // m/s^2 per unit u_a
    double drag = 0.3;          // 1/s, linear in v_long
    double c_front = 10.0;      // cornering stiffness, m/s^2 per rad
    double c_rear = 30.0;
    double l_front = 0.15;      // m
    double l_rear = 0.15;
    double yaw_inertia = 0.0225;  // I_z / m, m^2
    double max_steer = 0.35;      // rad at |u_steer| = 1
    double v_low = 0.5;           // below this speed tire forces fade out

    double v_max = 5.0;
    double half_width_margin = 0.1;
    double e_psi_max = kPi / 2.0;

    double noise_sigma_v = 0.02;      // v_long, v_tran, omega channels
    double noise_sigma_kappa = 0.01;  // preview channels
    int preview_k = 10;
    double preview_spacing = 1.0;  // d_i = i * spacing

    std::uint64_t seed = 0;
    int max_steps = 1000;
    int lap_target = 1;

    double wheelbase() const { return l_front + l_rear; }

    /// Steady-state understeer gradient, rad per (m/s^2) of lateral acceleration.
    double understeer_gradient() const { return (l_rear / c_front - l_front / c_rear) / wheelbase(); }

    void validate() const {
        if (!(dt > 0.0)) throw Error("SimConfig: dt must be positive");
        if (substeps < 1) throw Error("SimConfig: substeps must be >= 1");
        if (!(v_max > 0.0)) throw Error("SimConfig: v_max must be positive");
        if (drag < 0 || c_front < 0 || c_rear < 0 || drive_gain < 0)
            throw Error("SimConfig: stiffness, drag and drive coefficients must be non-negative");
        if (preview_k < 0) throw Error("SimConfig: preview_k must be >= 0");
        if (max_steps < 1) throw Error("SimConfig: max_steps must be >= 1");
        if (lap_target < 1) throw Error("SimConfig: lap_target must be >= 1");
    }

    void apply(const KeyValues& kv) {
        kv.get("dt", dt);
        kv.get("substeps", substeps);
        kv.get("drive_gain", drive_gain);
        kv.get("drag", drag);
        kv.get("c_front", c_front);
        kv.get("c_rear", c_rear);
        kv.get("l_front", l_front);
        kv.get("l_rear", l_rear);
        kv.get("yaw_inertia", yaw_inertia);
        kv.get("max_steer", max_steer);
        kv.get("v_low", v_low);
        kv.get("v_max", v_max);
        kv.get("half_width_margin", half_width_margin);
        kv.get("e_psi_max", e_psi_max);
        kv.get("noise_sigma_v", noise_sigma_v);
        kv.get("noise_sigma_kappa", noise_sigma_kappa);
        kv.get("preview_k", preview_k);
        kv.get("preview_spacing", preview_spacing);
        kv.get("seed", seed);
        kv.get("max_steps", max_steps);
        kv.get("lap_target", lap_target);
        validate();
    }
};

class SimSingularityError : public Error {
public:
    using Error::Error;
};

namespace detail {

struct StateRate {
    double v_long, v_tran, omega, s, x_tran, e_psi;
};

inline StateRate vehicle_rates(const SimConfig& cfg, double kappa, const VehicleState& x, const Action& u) {
    const double delta = cfg.max_steer * u.u_steer;
    const double vx = x.v_long;
    const double vx_eff = std::max(vx, cfg.v_low);
    const double grip = std::min(1.0, vx / cfg.v_low);

    const double alpha_f = delta - (x.v_tran + cfg.l_front * x.omega_psi) / vx_eff;
    const double alpha_r = -(x.v_tran - cfg.l_rear * x.omega_psi) / vx_eff;
    const double fy_f = grip * cfg.c_front * alpha_f;
    const double fy_r = grip * cfg.c_rear * alpha_r;
    // Lateral motion relaxes to rest when the tires lose authority at crawl speed.
    const double settle = (1.0 - grip) / 0.1;

    const double denom = 1.0 - x.x_tran * kappa;
    if (std::abs(denom) < 1e-6) throw SimSingularityError("Frenet singularity: |1 - x_tran * kappa| < 1e-6");

    StateRate r{};
    r.v_long = cfg.drive_gain * u.u_a - cfg.drag * vx + x.omega_psi * x.v_tran;
    r.v_tran = fy_f * std::cos(delta) + fy_r - x.omega_psi * vx - settle * x.v_tran;
    r.omega = (cfg.l_front * fy_f * std::cos(delta) - cfg.l_rear * fy_r) / cfg.yaw_inertia - settle * x.omega_psi;
    r.s = (vx * std::cos(x.e_psi) - x.v_tran * std::sin(x.e_psi)) / denom;
    r.x_tran = vx * std::sin(x.e_psi) + x.v_tran * std::cos(x.e_psi);
    r.e_psi = x.omega_psi - kappa * r.s;
    return r;
}

}  // namespace detail

/// One control period: `substeps` explicit Euler updates of length dt / substeps.
inline VehicleState step(const SimConfig& cfg, const Track& track, const VehicleState& x0, const Action& u) {
    const double h = cfg.dt / cfg.substeps;
    VehicleState x = x0;
    for (int i = 0; i < cfg.substeps; ++i) {
        const auto r = detail::vehicle_rates(cfg, track.curvature_at(x.s), x, u);
        x.v_long = std::clamp(x.v_long + h * r.v_long, 0.0, cfg.v_max);
        x.v_tran += h * r.v_tran;
        x.omega_psi += h * r.omega;
        x.s += h * r.s;
        x.x_tran += h * r.x_tran;
        x.e_psi += h * r.e_psi;
    }
    return x;
}

inline double lateral_bound(const SimConfig& cfg, const Track& track) { return track.half_width() - cfg.half_width_margin; }

inline bool in_constraints(const SimConfig& cfg, const Track& track, const VehicleState& x) {
    return x.finite() && std::abs(x.x_tran) <= lateral_bound(cfg, track) && x.v_long >= 0.0 && x.v_long <= cfg.v_max &&
           std::abs(x.e_psi) <= cfg.e_psi_max;
}

/// Signed distance-like margin to the constraint set, positive inside.
inline double safety_margin(const SimConfig& cfg, const Track& track, const VehicleState& x) {
    if (!x.finite()) return -1e9;
    const double lat = (lateral_bound(cfg, track) - std::abs(x.x_tran)) / lateral_bound(cfg, track);
    const double head = (cfg.e_psi_max - std::abs(x.e_psi)) / cfg.e_psi_max;
    const double speed = std::min(x.v_long, cfg.v_max - x.v_long) / cfg.v_max;
    return std::min({lat, head, speed + 1.0});
}

inline bool in_target(const SimConfig& cfg, const Track& track, const VehicleState& x, double s_start) {
    return x.s >= s_start + cfg.lap_target * track.lap_length() && in_constraints(cfg, track, x);
}

/// Time-to-target stage cost: 1 per step until the target set is reached.
inline double stage_cost(const SimConfig& cfg, const Track& track, const VehicleState& x, const Action&, double s_start) {
    return in_target(cfg, track, x, s_start) ? 0.0 : 1.0;
}

/// Output map h(x) + n: velocities, then the lateral offset (in the vehicle
/// frame) of the centerline at arc distances d_i ahead.
inline Observation observe_noiseless(const SimConfig& cfg, const Track& track, const VehicleState& x) {
    Observation y;
    y.values.reserve(Observation::kVelocityChannels + cfg.preview_k);
    y.values.push_back(x.v_long);
    y.values.push_back(x.v_tran);
    y.values.push_back(x.omega_psi);
    const Pose2 ego = track.frenet_to_cartesian(x.s, x.x_tran, x.e_psi);
    const double c = std::cos(ego.psi), s = std::sin(ego.psi);
    for (int i = 1; i <= cfg.preview_k; ++i) {
        const Pose2 p = track.centerline_pose(x.s + i * cfg.preview_spacing);
        y.values.push_back(-s * (p.x - ego.x) + c * (p.y - ego.y));
    }
    return y;
}

inline Observation observe(const SimConfig& cfg, const Track& track, const VehicleState& x, Rng& rng) {
    Observation y = observe_noiseless(cfg, track, x);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < y.values.size(); ++i) {
        const double sigma = i < Observation::kVelocityChannels ? cfg.noise_sigma_v : cfg.noise_sigma_kappa;
        if (sigma > 0.0) y.values[i] += sigma * n01(rng);
    }
    return y;
}

struct StepResult {
    VehicleState x_next;
    bool in_constraints = false;
    bool in_target = false;
};

inline StepResult step_checked(const SimConfig& cfg, const Track& track, const VehicleState& x, const Action& u,
                               double s_start) {
    StepResult r;
    r.x_next = step(cfg, track, x, u);
    r.in_constraints = in_constraints(cfg, track, r.x_next);
    r.in_target = in_target(cfg, track, r.x_next, s_start);
    return r;
}

/// What a controller decided at one step: the action to apply and the expert
/// label to store alongside it.
struct Decision {
    Action applied;
    Action label;
};

using Policy = std::function<Action(const Observation&, const VehicleState&)>;
using DecisionPolicy = std::function<Decision(const Observation&, const VehicleState&)>;

inline DecisionPolicy as_decision(Policy p) {
    return [p = std::move(p)](const Observation& y, const VehicleState& x) {
        Action a = p(y, x);
        return Decision{a, a};
    };
}

/// Runs one iteration from x0 until the target set (one lap past s_start by
/// default), a constraint violation, or max_steps.
inline Trajectory rollout(const SimConfig& cfg, const Track& track, const DecisionPolicy& policy, const VehicleState& x0,
                          int max_steps, Rng& rng) {
    if (max_steps < 1) throw Error("rollout: max_steps must be >= 1");
    Trajectory traj;
    traj.outcome = Outcome::Failure;
    traj.termination_reason = Termination::Timeout;
    const double s_start = x0.s;
    VehicleState x = x0;
    for (int k = 0; k < max_steps; ++k) {
        Sample smp;
        smp.x = x;
        smp.y = observe(cfg, track, x, rng);
        Decision d = policy(smp.y, x);
        smp.u_applied = d.applied.clamped();
        smp.u_expert = d.label.clamped();
        try {
            smp.x_next = step(cfg, track, x, smp.u_applied);
        } catch (const SimSingularityError&) {
            traj.termination_reason = Termination::Singularity;
            return traj;
        }
        x = smp.x_next;
        traj.samples.push_back(std::move(smp));
        if (in_target(cfg, track, x, s_start)) {
            traj.outcome = Outcome::Success;
            traj.termination_reason = Termination::ReachedTarget;
            return traj;
        }
        if (!in_constraints(cfg, track, x)) {
            traj.termination_reason = Termination::ConstraintViolation;
            return traj;
        }
    }
    return traj;
}

inline Trajectory rollout(const SimConfig& cfg, const Track& track, const Policy& policy, const VehicleState& x0,
                          int max_steps, Rng& rng) {
    return rollout(cfg, track, as_decision(policy), x0, max_steps, rng);
}

/// Standard start: centerline at s = 0 rolling at 1 m/s.
inline VehicleState standard_start() {
    VehicleState x;
    x.v_long = 1.0;
    return x;
}

}  // namespace cabc
