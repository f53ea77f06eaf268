#pragma once

// Full-state teachers and the grid-search predictive safety filter used as a
// test oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "cabc/config.hpp"
#include "cabc/core.hpp"
#include "cabc/sim.hpp"
#include "cabc/track.hpp"

namespace cabc {

struct PidGains {
    double kp_v = 1.0;
    double ki_v = 0.5;
    double kp_lat = 1.2;  // rad per m of lateral offset
    double kd_lat = 1.0;  // rad per rad of heading error
    double v_ref = 1.0;

    void apply(const KeyValues& kv) {
        kv.get("pid_kp_v", kp_v);
        kv.get("pid_ki_v", ki_v);
        kv.get("pid_kp_lat", kp_lat);
        kv.get("pid_kd_lat", kd_lat);
        kv.get("pid_v_ref", v_ref);
    }
};

/// PI speed control plus PD lateral control with curvature feedforward.
/// Holds the speed integrator, so use one instance per rollout.
class PidExpert {
public:
    PidExpert(const SimConfig& cfg, const Track& track, PidGains gains = {}) : cfg_(cfg), track_(&track), gains_(gains) {}

    Action operator()(const VehicleState& x) {
        const double err = gains_.v_ref - x.v_long;
        const double ff_a = cfg_.drag * gains_.v_ref / cfg_.drive_gain;
        double u_a = ff_a + gains_.kp_v * err + gains_.ki_v * integral_;
        if (std::abs(u_a) < 1.0) integral_ += err * cfg_.dt;
        const double kappa = track_->curvature_at(x.s);
        const double v = std::max(x.v_long, 0.0);
        const double ff_steer = kappa * (cfg_.wheelbase() + cfg_.understeer_gradient() * v * v);
        const double steer = ff_steer - gains_.kp_lat * x.x_tran - gains_.kd_lat * x.e_psi;
        return Action{u_a, steer / cfg_.max_steer}.clamped();
    }

    void reset() { integral_ = 0.0; }

private:
    SimConfig cfg_;
    const Track* track_;
    PidGains gains_;
    double integral_ = 0.0;
};

inline Action pid_centerline(const SimConfig& cfg, const Track& track, const VehicleState& x, const PidGains& gains) {
    PidExpert pid(cfg, track, gains);
    return pid(x);
}

struct RacingParams {
    double a_lat_max = 4.5;     // m/s^2 used for corner speeds
    double a_brake = 3.0;       // m/s^2 assumed when planning braking
    double lookahead = 2.0;     // m, offset reference lookahead L
    double offset_gain = 0.6;   // m per 1/m of curvature
    double offset_max = 0.3;    // m
    double kp_v = 2.0;
    double ki_v = 0.2;
    double pursuit_min = 1.0;   // m
    double pursuit_gain = 0.5;  // s
    double curvature_eps = 1e-3;

    void apply(const KeyValues& kv) {
        kv.get("race_alat_max", a_lat_max);
        kv.get("race_abrake", a_brake);
        kv.get("race_lookahead", lookahead);
        kv.get("race_offset_gain", offset_gain);
        kv.get("race_offset_max", offset_max);
        kv.get("race_kp_v", kp_v);
        kv.get("race_ki_v", ki_v);
    }
};

/// Geometric racing policy: brake-aware curvature speed profile, PI throttle and
/// pure pursuit toward an apex-cutting lateral reference. No hard constraint
/// handling, so it runs close to the grip and width limits.
class RacingExpert {
public:
    RacingExpert(const SimConfig& cfg, const Track& track, RacingParams params = {})
        : cfg_(cfg), track_(&track), p_(params) {}

    double corner_speed(double kappa_abs) const {
        return std::min(cfg_.v_max, std::sqrt(p_.a_lat_max / std::max(kappa_abs, p_.curvature_eps)));
    }

    /// Speed that still allows braking to every corner speed within the horizon.
    double target_speed(double s) const {
        const double horizon = cfg_.v_max * cfg_.v_max / (2.0 * p_.a_brake);
        double v = corner_speed(std::abs(track_->curvature_at(s)));
        for (double d = 0.25; d <= horizon + 1e-12; d += 0.25) {
            const double vc = corner_speed(std::abs(track_->curvature_at(s + d)));
            v = std::min(v, std::sqrt(vc * vc + 2.0 * p_.a_brake * d));
        }
        return v;
    }

    /// Lateral reference, toward the inside of upcoming corners.
    double reference_offset(double s) const {
        return std::clamp(p_.offset_gain * track_->curvature_at(s + p_.lookahead), -p_.offset_max, p_.offset_max);
    }

    Action operator()(const VehicleState& x) {
        const double v = std::max(x.v_long, 0.0);
        const double err = target_speed(x.s) - v;
        double u_a = cfg_.drag * v / cfg_.drive_gain + p_.kp_v * err + p_.ki_v * integral_;
        if (std::abs(u_a) < 1.0) integral_ += err * cfg_.dt;

        const double ld = std::max(p_.pursuit_min, p_.pursuit_gain * v);
        const Pose2 ego = track_->frenet_to_cartesian(x.s, x.x_tran, x.e_psi);
        const Pose2 tgt = track_->frenet_to_cartesian(x.s + ld, reference_offset(x.s + ld), 0.0);
        const double dx = tgt.x - ego.x, dy = tgt.y - ego.y;
        const double fwd = std::cos(ego.psi) * dx + std::sin(ego.psi) * dy;
        const double lat = -std::sin(ego.psi) * dx + std::cos(ego.psi) * dy;
        const double dist2 = fwd * fwd + lat * lat;
        const double kappa_pp = 2.0 * lat / std::max(dist2, 1e-9);
        const double steer = std::atan(cfg_.wheelbase() * kappa_pp) + cfg_.understeer_gradient() * v * v * kappa_pp;
        return Action{u_a, steer / cfg_.max_steer}.clamped();
    }

    void reset() { integral_ = 0.0; }

private:
    SimConfig cfg_;
    const Track* track_;
    RacingParams p_;
    double integral_ = 0.0;
};

enum class ExpertKind { Pid, Racing };

inline ExpertKind expert_from_string(const std::string& s) {
    if (s == "pid") return ExpertKind::Pid;
    if (s == "racing") return ExpertKind::Racing;
    throw Error("unknown expert '" + s + "' (expected pid or racing)");
}

inline std::string to_string(ExpertKind k) { return k == ExpertKind::Pid ? "pid" : "racing"; }

struct ExpertConfig {
    ExpertKind kind = ExpertKind::Racing;
    PidGains pid;
    RacingParams racing;

    void apply(const KeyValues& kv) {
        pid.apply(kv);
        racing.apply(kv);
    }
};

/// A fresh stateful expert controller for one rollout.
inline std::function<Action(const VehicleState&)> make_expert(const ExpertConfig& ec, const SimConfig& cfg,
                                                              const Track& track) {
    if (ec.kind == ExpertKind::Pid) return PidExpert(cfg, track, ec.pid);
    return RacingExpert(cfg, track, ec.racing);
}

struct FilterResult {
    Action u;
    bool feasible = true;
};

/// One-step minimum-effort predictive safety filter solved over a grid.
/// Candidates are u_hat followed by an n x n grid on [-1, 1]^2; the passing
/// candidate closest to u_hat wins (earliest on ties). If none passes, the
/// candidate whose successor has the largest safety_margin is returned and
/// the result is flagged infeasible.
inline FilterResult predictive_filter_oracle(const VehicleState& x, const Action& u_hat,
                                             const std::function<bool(const VehicleState&)>& safe_test,
                                             const SimConfig& cfg, const Track& track, int n_candidates = 21) {
    const Action u0 = u_hat.clamped();
    auto consider = [&](auto&& visit) {
        visit(u0);
        for (int i = 0; i < n_candidates; ++i)
            for (int j = 0; j < n_candidates; ++j) {
                const double a = n_candidates == 1 ? 0.0 : -1.0 + 2.0 * i / (n_candidates - 1);
                const double b = n_candidates == 1 ? 0.0 : -1.0 + 2.0 * j / (n_candidates - 1);
                visit(Action{a, b});
            }
    };
    FilterResult best{u0, false};
    double best_cost = std::numeric_limits<double>::infinity();
    Action fallback = u0;
    double fallback_score = -std::numeric_limits<double>::infinity();
    consider([&](const Action& u) {
        VehicleState xn;
        try {
            xn = step(cfg, track, x, u);
        } catch (const SimSingularityError&) {
            return;
        }
        if (safe_test(xn)) {
            const double c = (u.u_a - u0.u_a) * (u.u_a - u0.u_a) + (u.u_steer - u0.u_steer) * (u.u_steer - u0.u_steer);
            if (c < best_cost) {
                best_cost = c;
                best = {u, true};
            }
        } else {
            const double score = safety_margin(cfg, track, xn);
            if (score > fallback_score) {
                fallback_score = score;
                fallback = u;
            }
        }
    });
    if (!best.feasible) return {fallback, false};
    return best;
}

}  // namespace cabc
