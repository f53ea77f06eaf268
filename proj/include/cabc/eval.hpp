#pragma once

// Policy inputs for both observation modes, the chained-lap evaluation
// protocol and the early-stopping rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cabc/autolabel.hpp"
#include "cabc/core.hpp"
#include "cabc/nn.hpp"
#include "cabc/random.hpp"
#include "cabc/sim.hpp"
#include "cabc/track.hpp"

namespace cabc {

enum class ObsMode { FullState, Output };

inline ObsMode obs_mode_from_string(const std::string& s) {
    if (s == "full" || s == "full_state") return ObsMode::FullState;
    if (s == "output") return ObsMode::Output;
    throw Error("unknown observation mode '" + s + "' (expected full or output)");
}

inline std::string to_string(ObsMode m) { return m == ObsMode::FullState ? "full" : "output"; }

inline int policy_input_dim(ObsMode mode, const SimConfig& cfg) {
    return mode == ObsMode::FullState ? static_cast<int>(kEmbeddedDim)
                                      : static_cast<int>(Observation::kVelocityChannels) + cfg.preview_k;
}

/// Fixed, data-independent scaling so that inputs are O(1) from the first
/// epoch. Full state uses the circular s-embedding; output mode divides each
/// preview offset by its look-ahead distance.
inline void write_policy_input(ObsMode mode, const SimConfig& cfg, const Track& track, const Observation& y,
                               const VehicleState& x, Eigen::Ref<Vec> out) {
    if (mode == ObsMode::FullState) {
        const double phase = 2.0 * kPi * x.s / track.lap_length();
        out << x.v_long / cfg.v_max, x.v_tran, x.omega_psi, std::cos(phase), std::sin(phase),
            x.x_tran / lateral_bound(cfg, track), x.e_psi;
        return;
    }
    const auto k = static_cast<Eigen::Index>(Observation::kVelocityChannels);
    if (static_cast<Eigen::Index>(y.values.size()) != out.size()) throw Error("policy input: observation has wrong size");
    out[0] = y.values[0] / cfg.v_max;
    out[1] = y.values[1];
    out[2] = y.values[2];
    for (Eigen::Index i = k; i < out.size(); ++i)
        out[i] = y.values[static_cast<std::size_t>(i)] / (static_cast<double>(i - k + 1) * cfg.preview_spacing);
}

inline Vec policy_input(ObsMode mode, const SimConfig& cfg, const Track& track, const Observation& y,
                        const VehicleState& x) {
    Vec in(policy_input_dim(mode, cfg));
    write_policy_input(mode, cfg, track, y, x, in);
    return in;
}

inline Action action_from(const Vec& out) { return Action{out[0], out[1]}.clamped(); }

/// pi_theta: tanh-headed MLP over the mode's input.
struct LearnedPolicy {
    const Mlp* net;
    ObsMode mode;
    SimConfig cfg;
    const Track* track;

    Action operator()(const Observation& y, const VehicleState& x) const {
        return action_from(net->forward(policy_input(mode, cfg, *track, y, x)));
    }
};

enum class EvalTermination { FiftyLaps, ConstraintViolation, Timeout };

inline std::string to_string(EvalTermination t) {
    switch (t) {
        case EvalTermination::FiftyLaps: return "fifty_laps";
        case EvalTermination::ConstraintViolation: return "constraint_violation";
        case EvalTermination::Timeout: return "timeout";
    }
    return "unknown";
}

struct EvalResult {
    int laps_completed = 0;
    std::vector<double> lap_times;
    EvalTermination terminated_by = EvalTermination::Timeout;
    double mean_lap_time = 0.0;
    double std_lap_time = 0.0;
    double min_lap_time = 0.0;
    double max_lap_time = 0.0;
    std::vector<VehicleState> states;  // only filled when requested

    void finalize() {
        laps_completed = static_cast<int>(lap_times.size());
        if (lap_times.empty()) {
            mean_lap_time = std_lap_time = min_lap_time = max_lap_time = 0.0;
            return;
        }
        double sum = 0.0;
        for (double t : lap_times) sum += t;
        mean_lap_time = sum / static_cast<double>(lap_times.size());
        double var = 0.0;
        for (double t : lap_times) var += (t - mean_lap_time) * (t - mean_lap_time);
        std_lap_time = std::sqrt(var / static_cast<double>(lap_times.size()));
        min_lap_time = *std::min_element(lap_times.begin(), lap_times.end());
        max_lap_time = *std::max_element(lap_times.begin(), lap_times.end());
    }
};

inline constexpr int kEvalLaps = 50;

/// Chained one-lap iterations from the standard start. Each lap starts where
/// the previous one crossed the line, so the overshoot carries over. Uses
/// the configured observation noise; no actuation noise.
inline EvalResult evaluate(const Policy& policy, const SimConfig& cfg, const Track& track, std::uint64_t seed,
                           int laps = kEvalLaps, bool record_states = false) {
    SimConfig one = cfg;
    one.lap_target = 1;
    Rng rng(derive_seed(seed, {0xe7a1}));
    EvalResult r;
    VehicleState x = standard_start();
    if (record_states) r.states.push_back(x);
    r.terminated_by = EvalTermination::FiftyLaps;
    for (int lap = 0; lap < laps; ++lap) {
        const Trajectory t = rollout(one, track, policy, x, cfg.max_steps, rng);
        if (record_states)
            for (const auto& s : t.samples) r.states.push_back(s.x_next);
        if (t.outcome != Outcome::Success) {
            r.terminated_by = t.termination_reason == Termination::Timeout ? EvalTermination::Timeout
                                                                           : EvalTermination::ConstraintViolation;
            break;
        }
        r.lap_times.push_back(static_cast<double>(t.samples.size()) * cfg.dt);
        x = t.samples.back().x_next;
    }
    r.finalize();
    return r;
}

struct EarlyStopState {
    int count = 0;
    bool triggered = false;
};

/// Stops at the second evaluation that reaches the full lap count.
inline EarlyStopState early_stop_update(EarlyStopState st, const EvalResult& r, int laps = kEvalLaps) {
    if (r.laps_completed >= laps) ++st.count;
    st.triggered = st.count >= 2;
    return st;
}

}  // namespace cabc
