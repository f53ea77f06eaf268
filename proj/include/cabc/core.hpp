#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cabc {

inline constexpr double kPi = 3.14159265358979323846;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frenet-frame vehicle state. `s` is unwrapped: it keeps growing across laps.
struct VehicleState {
    double v_long = 0.0;
    double v_tran = 0.0;
    double omega_psi = 0.0;
    double s = 0.0;
    double x_tran = 0.0;
    double e_psi = 0.0;

    static constexpr std::size_t kDim = 6;

    std::array<double, kDim> to_array() const { return {v_long, v_tran, omega_psi, s, x_tran, e_psi}; }

    static VehicleState from_array(std::span<const double> a) {
        if (a.size() != kDim) throw Error("VehicleState expects 6 components");
        return {a[0], a[1], a[2], a[3], a[4], a[5]};
    }

    double wrapped_s(double lap_length) const {
        double w = std::fmod(s, lap_length);
        return w < 0.0 ? w + lap_length : w;
    }

    bool finite() const {
        for (double v : to_array())
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const VehicleState&) const = default;
};

/// Normalized throttle/brake and steering, both in [-1, 1].
struct Action {
    double u_a = 0.0;
    double u_steer = 0.0;

    static constexpr double kMin = -1.0;
    static constexpr double kMax = 1.0;
    static constexpr std::size_t kDim = 2;

    Action clamped() const {
        return {std::clamp(u_a, kMin, kMax), std::clamp(u_steer, kMin, kMax)};
    }
    bool in_bounds() const { return u_a >= kMin && u_a <= kMax && u_steer >= kMin && u_steer <= kMax; }

    bool operator==(const Action&) const = default;
};

/// Noisy measurement: [v_long, v_tran, omega_psi, preview_1..preview_K].
struct Observation {
    std::vector<double> values;

    static constexpr std::size_t kVelocityChannels = 3;

    std::size_t preview_size() const {
        return values.size() >= kVelocityChannels ? values.size() - kVelocityChannels : 0;
    }
    std::span<const double> preview() const {
        return std::span<const double>(values).subspan(std::min(values.size(), kVelocityChannels));
    }

    bool operator==(const Observation&) const = default;
};

struct Sample {
    VehicleState x;
    Observation y;
    Action u_expert;   // expert relabel at x
    Action u_applied;  // action that actually drove the plant
    VehicleState x_next;
    std::optional<int> safe_label;

    bool operator==(const Sample&) const = default;
};

enum class Outcome { Success, Failure };
enum class Termination { ReachedTarget, ConstraintViolation, Timeout, Singularity };

inline std::string to_string(Outcome o) { return o == Outcome::Success ? "success" : "failure"; }

inline std::string to_string(Termination t) {
    switch (t) {
        case Termination::ReachedTarget: return "reached_target";
        case Termination::ConstraintViolation: return "constraint_violation";
        case Termination::Timeout: return "timeout";
        case Termination::Singularity: return "singularity";
    }
    return "unknown";
}

inline Outcome outcome_from_string(const std::string& s) {
    if (s == "success") return Outcome::Success;
    if (s == "failure") return Outcome::Failure;
    throw Error("unknown outcome '" + s + "'");
}

inline Termination termination_from_string(const std::string& s) {
    if (s == "reached_target") return Termination::ReachedTarget;
    if (s == "constraint_violation") return Termination::ConstraintViolation;
    if (s == "timeout") return Termination::Timeout;
    if (s == "singularity") return Termination::Singularity;
    throw Error("unknown termination reason '" + s + "'");
}

struct Trajectory {
    std::vector<Sample> samples;
    Outcome outcome = Outcome::Failure;
    Termination termination_reason = Termination::Timeout;

    bool consistent() const {
        return (outcome == Outcome::Success) == (termination_reason == Termination::ReachedTarget);
    }

    bool chained() const {
        for (std::size_t k = 1; k < samples.size(); ++k)
            if (!(samples[k - 1].x_next == samples[k].x)) return false;
        return true;
    }

    bool operator==(const Trajectory&) const = default;
};

/// Safe (d_plus), unknown (d_query) and auto-labeled unsafe (d_minus) states.
struct LabeledPool {
    std::vector<VehicleState> d_plus;
    std::vector<VehicleState> d_query;
    std::vector<VehicleState> d_minus;

    bool operator==(const LabeledPool&) const = default;
};

/// Splits visited states by trajectory outcome. d_minus is left empty.
inline LabeledPool partition_trajectories(std::span<const Trajectory> trajs) {
    LabeledPool pool;
    for (const auto& t : trajs) {
        if (t.samples.empty()) throw Error("partition_trajectories: trajectory with zero samples");
        if (!t.consistent()) throw Error("partition_trajectories: outcome and termination reason disagree");
        auto& dst = t.outcome == Outcome::Success ? pool.d_plus : pool.d_query;
        for (const auto& s : t.samples) dst.push_back(s.x);
    }
    return pool;
}

}  // namespace cabc
