#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cabc/core.hpp"

namespace cabc {

struct Segment {
    double length = 0.0;
    double curvature = 0.0;  // positive turns left
};

struct TrackSpec {
    std::vector<Segment> segments;
    double half_width = 0.6;
    std::string name;
};

struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
};

/// Closed track made of constant-curvature segments, anchored at the origin
/// heading along +x. Lateral offsets are positive to the left of the path.
class Track {
public:
    static constexpr double kClosureTol = 1e-9;

    explicit Track(TrackSpec spec) : spec_(std::move(spec)) {
        if (spec_.segments.empty()) throw Error("track '" + spec_.name + "': no segments");
        if (!(spec_.half_width > 0.0)) throw Error("track '" + spec_.name + "': half_width must be positive");
        double heading = 0.0;
        for (const auto& seg : spec_.segments) {
            if (!(seg.length > 0.0)) throw Error("track '" + spec_.name + "': segment lengths must be positive");
            heading += seg.length * seg.curvature;
        }
        if (std::abs(std::abs(heading) - 2.0 * kPi) > kClosureTol)
            throw Error("track '" + spec_.name + "': total heading change is not 2*pi");

        Pose2 p;
        double s = 0.0;
        for (const auto& seg : spec_.segments) {
            starts_.push_back(s);
            poses_.push_back(p);
            p = advance(p, seg.curvature, seg.length);
            s += seg.length;
        }
        lap_length_ = s;
    }

    const TrackSpec& spec() const { return spec_; }
    const std::string& name() const { return spec_.name; }
    double half_width() const { return spec_.half_width; }
    double lap_length() const { return lap_length_; }

    double wrap(double s) const {
        double w = std::fmod(s, lap_length_);
        return w < 0.0 ? w + lap_length_ : w;
    }

    std::size_t segment_index(double s) const {
        const double w = wrap(s);
        auto it = std::upper_bound(starts_.begin(), starts_.end(), w);
        return static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
    }

    double curvature_at(double s) const { return spec_.segments[segment_index(s)].curvature; }

    /// Largest |curvature| over [s, s + horizon].
    double max_abs_curvature(double s, double horizon) const {
        double best = std::abs(curvature_at(s));
        double w = wrap(s);
        std::size_t i = segment_index(w);
        double remaining = horizon - (starts_[i] + spec_.segments[i].length - w);
        while (remaining > 0.0) {
            i = (i + 1) % spec_.segments.size();
            best = std::max(best, std::abs(spec_.segments[i].curvature));
            remaining -= spec_.segments[i].length;
        }
        return best;
    }

    Pose2 centerline_pose(double s) const {
        const double w = wrap(s);
        const std::size_t i = segment_index(w);
        return advance(poses_[i], spec_.segments[i].curvature, w - starts_[i]);
    }

    Pose2 frenet_to_cartesian(double s, double x_tran, double e_psi) const {
        Pose2 c = centerline_pose(s);
        return {c.x - x_tran * std::sin(c.psi), c.y + x_tran * std::cos(c.psi), c.psi + e_psi};
    }

    static Pose2 advance(const Pose2& p, double curvature, double ds) {
        if (std::abs(curvature) < 1e-12) {
            return {p.x + ds * std::cos(p.psi), p.y + ds * std::sin(p.psi), p.psi};
        }
        const double psi1 = p.psi + curvature * ds;
        return {p.x + (std::sin(psi1) - std::sin(p.psi)) / curvature,
                p.y - (std::cos(psi1) - std::cos(p.psi)) / curvature, psi1};
    }

private:
    TrackSpec spec_;
    std::vector<double> starts_;
    std::vector<Pose2> poses_;
    double lap_length_ = 0.0;
};

inline double curvature_at(const Track& track, double s) { return track.curvature_at(s); }

inline Pose2 frenet_to_cartesian(const Track& track, double s, double x_tran, double e_psi) {
    return track.frenet_to_cartesian(s, x_tran, e_psi);
}

struct Corner {
    double x;
    double y;
    double radius;
};

/// Track following a closed polygon with each vertex rounded by a circular arc.
/// The polygon must be traversed so that the net turn is +/-2*pi.
inline TrackSpec rounded_polygon(const std::vector<Corner>& corners, double half_width, std::string name) {
    const std::size_t n = corners.size();
    if (n < 3) throw Error("rounded_polygon: need at least 3 corners");
    std::vector<double> heading(n), edge(n), turn(n), tangent(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = corners[i];
        const auto& b = corners[(i + 1) % n];
        heading[i] = std::atan2(b.y - a.y, b.x - a.x);
        edge[i] = std::hypot(b.x - a.x, b.y - a.y);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double d = heading[i] - heading[(i + n - 1) % n];
        while (d > kPi) d -= 2.0 * kPi;
        while (d < -kPi) d += 2.0 * kPi;
        turn[i] = d;
        tangent[i] = corners[i].radius * std::tan(std::abs(d) / 2.0);
    }
    // The track starts at the beginning of the straight leaving corner 0.
    TrackSpec spec;
    spec.half_width = half_width;
    spec.name = std::move(name);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = k;
        const std::size_t j = (k + 1) % n;
        const double straight = edge[i] - tangent[i] - tangent[j];
        if (!(straight > 0.0)) throw Error("rounded_polygon: corner radii too large for edge " + std::to_string(i));
        spec.segments.push_back({straight, 0.0});
        const double r = corners[j].radius;
        spec.segments.push_back({r * std::abs(turn[j]), (turn[j] > 0 ? 1.0 : -1.0) / r});
    }
    // Absorb rounding so the heading sum is 2*pi to machine precision.
    double total = 0.0;
    for (const auto& s : spec.segments) total += s.length * s.curvature;
    auto& last = spec.segments.back();
    last.length *= (2.0 * kPi * (total > 0 ? 1.0 : -1.0) - (total - last.length * last.curvature)) / (last.length * last.curvature);
    return spec;
}

inline std::vector<TrackSpec> default_tracks() {
    std::vector<TrackSpec> out;
    {
        const double lap = 20.0;
        const double radius = lap / (2.0 * kPi);
        out.push_back({{{lap, 1.0 / radius}}, 0.6, "circle"});
    }
    out.push_back(rounded_polygon({{0, 0, 2.0}, {12, 0, 2.0}, {12, 5, 1.2}, {6, 5, 1.5}, {6, 10, 2.0}, {0, 10, 2.0}},
                                  0.6, "lshaped"));
    out.push_back(rounded_polygon({{0, 0, 2.5},
                                   {16, 0, 2.5},
                                   {16, 9, 1.8},
                                   {11, 9, 2.0},
                                   {8, 5.5, 1.5},
                                   {5, 9, 2.0},
                                   {0, 9, 2.5}},
                                  0.6, "gp"));
    return out;
}

/// Plain-text track file: a "halfwidth <value>" header then "length curvature" per line.
inline TrackSpec read_track_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open track file '" + path + "'");
    TrackSpec spec;
    spec.name = std::filesystem::path(path).stem().string();
    std::string line;
    bool have_width = false;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
        std::istringstream ls(line);
        if (line.rfind("halfwidth", 0) == 0) {
            std::string key;
            if (!(ls >> key >> spec.half_width)) throw Error(path + ":" + std::to_string(lineno) + ": bad halfwidth line");
            have_width = true;
            continue;
        }
        Segment seg;
        if (!(ls >> seg.length >> seg.curvature)) throw Error(path + ":" + std::to_string(lineno) + ": expected 'length curvature'");
        spec.segments.push_back(seg);
    }
    if (!have_width) throw Error(path + ": missing halfwidth header");
    return spec;
}

inline void write_track_file(const TrackSpec& spec, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "halfwidth %.17g\n", spec.half_width);
    os << buf;
    for (const auto& s : spec.segments) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", s.length, s.curvature);
        os << buf;
    }
}

/// Resolves a built-in track name or a track file path.
inline Track load_track(const std::string& name_or_path) {
    for (auto& spec : default_tracks())
        if (spec.name == name_or_path) return Track(std::move(spec));
    if (std::filesystem::exists(name_or_path)) return Track(read_track_file(name_or_path));
    throw Error("unknown track '" + name_or_path + "'");
}

}  // namespace cabc
