#pragma once

// Safety auto-labeling: a failed-iteration state is kept as a negative unless
// it lies in the convex hull of the known-safe states within radius rho of it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cabc/core.hpp"
#include "cabc/nn.hpp"
#include "cabc/random.hpp"

namespace cabc {

inline constexpr std::size_t kEmbeddedDim = 7;

/// [v_long, v_tran, omega, cos(2 pi s / L), sin(2 pi s / L), x_tran, e_psi]
inline Vec embed_state(const VehicleState& x, double lap_length) {
    const double phase = 2.0 * kPi * x.s / lap_length;
    Vec e(kEmbeddedDim);
    e << x.v_long, x.v_tran, x.omega_psi, std::cos(phase), std::sin(phase), x.x_tran, x.e_psi;
    return e;
}

/// d(embed)/d(state) as a 7x6 matrix.
inline Mat embed_jacobian(const VehicleState& x, double lap_length) {
    const double w = 2.0 * kPi / lap_length;
    const double phase = w * x.s;
    Mat J = Mat::Zero(kEmbeddedDim, VehicleState::kDim);
    J(0, 0) = 1.0;
    J(1, 1) = 1.0;
    J(2, 2) = 1.0;
    J(3, 3) = -w * std::sin(phase);
    J(4, 3) = w * std::cos(phase);
    J(5, 4) = 1.0;
    J(6, 5) = 1.0;
    return J;
}

/// Per-dimension standardization of embedded states.
struct NormStats {
    static constexpr double kSigmaMin = 1e-6;

    Vec mean;
    Vec stddev;
    double lap_length = 1.0;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

    Vec normalize_embedded(const Vec& e) const { return (e - mean).cwiseQuotient(stddev); }
    Vec normalize(const VehicleState& x) const { return normalize_embedded(embed_state(x, lap_length)); }

    static NormStats identity(std::size_t dim) {
        return {Vec::Zero(static_cast<Eigen::Index>(dim)), Vec::Ones(static_cast<Eigen::Index>(dim)), 1.0};
    }

    static NormStats fit_points(const std::vector<Vec>& pts) {
        if (pts.size() < 2) throw Error("fit_norm: need at least two states");
        const Eigen::Index d = pts.front().size();
        NormStats n{Vec::Zero(d), Vec::Zero(d), 1.0};
        for (const auto& p : pts) n.mean += p;
        n.mean /= static_cast<double>(pts.size());
        for (const auto& p : pts) n.stddev += (p - n.mean).cwiseAbs2();
        n.stddev = (n.stddev / static_cast<double>(pts.size())).cwiseSqrt().cwiseMax(kSigmaMin);
        return n;
    }
};

inline NormStats fit_norm(const std::vector<VehicleState>& d_plus, double lap_length) {
    std::vector<Vec> pts;
    pts.reserve(d_plus.size());
    for (const auto& x : d_plus) pts.push_back(embed_state(x, lap_length));
    NormStats n = NormStats::fit_points(pts);
    n.lap_length = lap_length;
    return n;
}

/// Static k-d tree for fixed-radius queries. Results match an exhaustive scan.
class PointIndex {
public:
    PointIndex() = default;
    explicit PointIndex(std::vector<Vec> points) : pts_(std::move(points)) {
        order_.resize(pts_.size());
        std::iota(order_.begin(), order_.end(), 0);
        if (!pts_.empty()) root_ = build(0, order_.size());
    }

    const std::vector<Vec>& points() const { return pts_; }
    std::size_t size() const { return pts_.size(); }

    /// Indices (ascending) of all points p with ||p - x||_2 <= rho.
    std::vector<std::size_t> radius(const Vec& x, double rho) const {
        std::vector<std::size_t> out;
        if (root_ >= 0) search(root_, x, rho, rho * rho, out);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    static constexpr std::size_t kLeaf = 16;

    struct Node {
        std::size_t begin = 0, end = 0;
        int dim = -1;
        double split = 0.0;
        int left = -1, right = -1;
        Vec lo, hi;
    };

    int build(std::size_t b, std::size_t e) {
        Node node;
        node.begin = b;
        node.end = e;
        const Eigen::Index d = pts_[order_[b]].size();
        node.lo = pts_[order_[b]];
        node.hi = node.lo;
        for (std::size_t i = b; i < e; ++i) {
            node.lo = node.lo.cwiseMin(pts_[order_[i]]);
            node.hi = node.hi.cwiseMax(pts_[order_[i]]);
        }
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        if (e - b <= kLeaf) return id;
        Eigen::Index dim = 0;
        (nodes_[id].hi - nodes_[id].lo).maxCoeff(&dim);
        if (nodes_[id].hi[dim] - nodes_[id].lo[dim] <= 0.0) return id;
        const std::size_t mid = b + (e - b) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(b), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(e),
                         [&](std::size_t i, std::size_t j) { return pts_[i][dim] < pts_[j][dim]; });
        (void)d;
        nodes_[id].dim = static_cast<int>(dim);
        nodes_[id].split = pts_[order_[mid]][dim];
        const int l = build(b, mid);
        const int r = build(mid, e);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void search(int id, const Vec& x, double rho, double rho2, std::vector<std::size_t>& out) const {
        const Node& n = nodes_[id];
        double gap2 = 0.0;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double g = std::max({n.lo[k] - x[k], x[k] - n.hi[k], 0.0});
            gap2 += g * g;
        }
        if (gap2 > rho2) return;
        if (n.dim < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i)
                if ((pts_[order_[i]] - x).squaredNorm() <= rho2) out.push_back(order_[i]);
            return;
        }
        search(n.left, x, rho, rho2, out);
        search(n.right, x, rho, rho2, out);
    }

    std::vector<Vec> pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

/// Reference exhaustive radius search.
inline std::vector<std::size_t> radius_neighbors_linear(const Vec& x, const std::vector<Vec>& pts, double rho) {
    if (rho < 0.0) throw Error("radius_neighbors: rho must be non-negative");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pts.size(); ++i)
        if ((pts[i] - x).norm() <= rho) out.push_back(i);
    return out;
}

inline std::vector<VehicleState> radius_neighbors(const VehicleState& x, const std::vector<VehicleState>& d_plus,
                                                  const NormStats& norm, double rho) {
    if (rho < 0.0) throw Error("radius_neighbors: rho must be non-negative");
    const Vec q = norm.normalize(x);
    std::vector<VehicleState> out;
    for (const auto& p : d_plus)
        if ((norm.normalize(p) - q).norm() <= rho) out.push_back(p);
    return out;
}

struct HullResult {
    bool inside = false;
    double residual_inf = std::numeric_limits<double>::infinity();
    double gap = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

struct HullOptions {
    double tol = 1e-7;
    int max_iterations = 20000;
    int corrective_every = 4;
};

namespace detail {

/// Moves w toward the minimizer of ||S w - x||^2 over the affine hull of the
/// active vertices, stopping at the simplex boundary. Never increases the
/// objective; removes any weight driven to zero. Returns true when the affine
/// minimizer was reached.
inline bool corrective_once(const Mat& S, const Vec& x, std::vector<Eigen::Index>& active, Vec& w) {
    const auto m = static_cast<Eigen::Index>(active.size());
    if (m < 2 || m > 256) return true;
    Mat SA(S.rows(), m);
    Vec wa(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        SA.col(k) = S.col(active[static_cast<std::size_t>(k)]);
        wa[k] = w[active[static_cast<std::size_t>(k)]];
    }
    Mat K = Mat::Zero(m + 1, m + 1);
    K.topLeftCorner(m, m) = 2.0 * SA.transpose() * SA;
    K.topRightCorner(m, 1).setOnes();
    K.bottomLeftCorner(1, m).setOnes();
    Vec rhs(m + 1);
    rhs.head(m) = 2.0 * SA.transpose() * x;
    rhs[m] = 1.0;
    const Vec sol = K.completeOrthogonalDecomposition().solve(rhs);
    const Vec v = sol.head(m);
    if (!v.allFinite() || std::abs(v.sum() - 1.0) > 1e-9) return true;
    if ((SA * v - x).squaredNorm() >= (SA * wa - x).squaredNorm()) return true;
    const Vec delta = v - wa;
    double t = 1.0;
    for (Eigen::Index k = 0; k < m; ++k)
        if (delta[k] < 0.0) t = std::min(t, wa[k] / -delta[k]);
    Vec next = wa + t * delta;
    std::vector<Eigen::Index> kept;
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto i = active[static_cast<std::size_t>(k)];
        w[i] = next[k] > 1e-15 ? next[k] : 0.0;
        if (w[i] > 0.0) kept.push_back(i);
    }
    w /= w.sum();
    active = std::move(kept);
    return t >= 1.0;
}

inline void corrective_step(const Mat& S, const Vec& x, std::vector<Eigen::Index>& active, Vec& w) {
    for (int cycle = 0; cycle < 64; ++cycle)
        if (corrective_once(S, x, active, w)) return;
}

}  // namespace detail

/// Decides whether x is within `tol` (infinity norm) of conv(S) by minimizing
/// ||S w - x||^2 over the simplex with away-step conditional gradients.
/// Stops on a residual within tol, on a duality gap <= tol^2, or when the
/// gap-based lower bound proves the distance exceeds sqrt(d) * tol.
inline HullResult hull_membership_detail(const Vec& x, const Mat& S, const HullOptions& opt = {}) {
    HullResult res;
    const Eigen::Index n = S.cols();
    const Eigen::Index d = S.rows();
    if (n == 0) return res;
    if (d != x.size()) throw Error("hull_membership: dimension mismatch");

    // Outside the bounding box by more than tol means outside the hull.
    for (Eigen::Index k = 0; k < d; ++k) {
        if (x[k] < S.row(k).minCoeff() - opt.tol || x[k] > S.row(k).maxCoeff() + opt.tol) return res;
    }

    Eigen::Index start = 0;
    (S.colwise() - x).colwise().squaredNorm().minCoeff(&start);
    Vec w = Vec::Zero(n);
    w[start] = 1.0;
    Vec r = S.col(start) - x;
    std::vector<Eigen::Index> active{start};
    const double tol2 = opt.tol * opt.tol;
    const double outside_bound = static_cast<double>(d) * tol2;

    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it;
        res.residual_inf = r.lpNorm<Eigen::Infinity>();
        if (res.residual_inf <= opt.tol) {
            res.inside = true;
            return res;
        }
        const Vec y = r + x;
        const Vec g = S.transpose() * r;
        const double yr = y.dot(r);
        Eigen::Index s_idx = 0;
        const double g_min = g.minCoeff(&s_idx);
        const double gap_fw = yr - g_min;
        const double f = r.squaredNorm();
        res.gap = 2.0 * gap_fw;
        if (res.gap <= tol2) break;
        if (f - res.gap > outside_bound) return res;

        Eigen::Index a_idx = active.front();
        for (auto i : active)
            if (g[i] > g[a_idx]) a_idx = i;
        const double gap_away = g[a_idx] - yr;

        Vec dir;
        double gamma_max;
        const bool fw_step = gap_fw >= gap_away || active.size() == 1;
        if (fw_step) {
            dir = S.col(s_idx) - y;
            gamma_max = 1.0;
        } else {
            dir = y - S.col(a_idx);
            gamma_max = w[a_idx] / (1.0 - w[a_idx]);
        }
        const double dd = dir.squaredNorm();
        if (dd <= 0.0) break;
        const double gamma = std::clamp(-r.dot(dir) / dd, 0.0, gamma_max);
        if (gamma <= 0.0) break;
        if (fw_step) {
            w *= (1.0 - gamma);
            w[s_idx] += gamma;
            if (gamma >= 1.0) {
                w.setZero();
                w[s_idx] = 1.0;
            }
        } else {
            w *= (1.0 + gamma);
            w[a_idx] -= gamma;
            if (gamma >= gamma_max) w[a_idx] = 0.0;
        }
        active.clear();
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) active.push_back(i);
        if ((it + 1) % opt.corrective_every == 0) {
            detail::corrective_step(S, x, active, w);
            r = S * w - x;
        } else {
            r += gamma * dir;
        }
    }
    res.residual_inf = r.lpNorm<Eigen::Infinity>();
    res.inside = res.residual_inf <= opt.tol;
    return res;
}

inline Mat columns(const std::vector<Vec>& pts, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return Mat();
    Mat S(pts[idx.front()].size(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) S.col(static_cast<Eigen::Index>(c)) = pts[idx[c]];
    return S;
}

inline Mat columns(const std::vector<Vec>& pts) {
    std::vector<std::size_t> idx(pts.size());
    std::iota(idx.begin(), idx.end(), 0);
    return columns(pts, idx);
}

/// Empty S is never a hull that contains x.
inline bool hull_membership(const Vec& x, const std::vector<Vec>& S, double tol = 1e-7) {
    if (S.empty()) return false;
    return hull_membership_detail(x, columns(S), {tol}).inside;
}

/// For each query point, whether it lies in the local hull of the safe points
/// within rho (and so is removed from the negative set).
inline std::vector<char> locally_hulled(const PointIndex& safe, const std::vector<Vec>& queries, double rho,
                                        double tol = 1e-7) {
    if (rho < 0.0) throw Error("rho must be non-negative");
    std::vector<char> removed(queries.size(), 0);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto nb = safe.radius(queries[i], rho);
        if (nb.empty()) continue;
        removed[i] = hull_membership_detail(queries[i], columns(safe.points(), nb), {tol}).inside ? 1 : 0;
    }
    return removed;
}

/// Hull coordinates of p around the query q. Neighbors come from the embedded
/// metric, but on the embedded s-circle every state is an extreme point, so
/// the hull test unwraps s into the tangent direction at q (wrapped phase
/// difference scaled by the local embedded speed) and keeps the other five
/// standardized dimensions.
inline Vec chart_coordinates(const NormStats& norm, const VehicleState& q, const VehicleState& p) {
    const double w = 2.0 * kPi / norm.lap_length;
    const double phase = w * q.s;
    const double dphase = std::remainder(w * (p.s - q.s), 2.0 * kPi);
    const double speed = std::hypot(std::sin(phase) / norm.stddev[3], std::cos(phase) / norm.stddev[4]);
    const Vec e = norm.normalize(p);
    Vec c(VehicleState::kDim);
    c << e[0], e[1], e[2], dphase * speed, e[5], e[6];
    return c;
}

inline bool state_hulled(const NormStats& norm, const VehicleState& q, const std::vector<VehicleState>& safe,
                         const std::vector<std::size_t>& nb, double tol) {
    if (nb.empty()) return false;
    Mat S(VehicleState::kDim, static_cast<Eigen::Index>(nb.size()));
    for (std::size_t c = 0; c < nb.size(); ++c) S.col(static_cast<Eigen::Index>(c)) = chart_coordinates(norm, q, safe[nb[c]]);
    return hull_membership_detail(chart_coordinates(norm, q, q), S, {tol}).inside;
}

/// d_minus = d_query minus the states inside conv(d_plus within rho).
inline LabeledPool build_negatives(const LabeledPool& pool, const NormStats& norm, double rho, double tol = 1e-7) {
    std::vector<Vec> plus, query;
    plus.reserve(pool.d_plus.size());
    query.reserve(pool.d_query.size());
    for (const auto& x : pool.d_plus) plus.push_back(norm.normalize(x));
    for (const auto& x : pool.d_query) query.push_back(norm.normalize(x));
    if (rho < 0.0) throw Error("rho must be non-negative");
    const PointIndex index(std::move(plus));
    std::vector<char> removed(query.size(), 0);
    for (std::size_t i = 0; i < query.size(); ++i)
        removed[i] = state_hulled(norm, pool.d_query[i], pool.d_plus, index.radius(query[i], rho), tol) ? 1 : 0;
    LabeledPool out = pool;
    out.d_minus.clear();
    for (std::size_t i = 0; i < pool.d_query.size(); ++i)
        if (!removed[i]) out.d_minus.push_back(pool.d_query[i]);
    return out;
}

/// Keeps the per-query removal flags across epochs. With a fixed metric and a
/// growing safe set, a hulled query stays hulled, so only the current
/// negatives and newly added queries need re-testing; the result equals a
/// full recomputation.
class IncrementalLabeler {
public:
    IncrementalLabeler(double rho, double tol = 1e-7) : rho_(rho), tol_(tol) {}

    void add_safe(const Vec& p) {
        safe_.push_back(p);
        dirty_ = true;
    }
    void add_query(const Vec& q) {
        queries_.push_back(q);
        removed_.push_back(0);
        tested_.push_back(0);
    }

    void update() {
        if (dirty_) {
            index_ = PointIndex(safe_);
            dirty_ = false;
            std::fill(tested_.begin(), tested_.end(), 0);
        }
        for (std::size_t i = 0; i < queries_.size(); ++i) {
            if (removed_[i] || tested_[i]) continue;
            tested_[i] = 1;
            const auto nb = index_.radius(queries_[i], rho_);
            if (nb.empty()) continue;
            removed_[i] = hull_membership_detail(queries_[i], columns(index_.points(), nb), {tol_}).inside ? 1 : 0;
        }
    }

    const std::vector<char>& removed() const { return removed_; }
    std::size_t negatives() const { return static_cast<std::size_t>(std::count(removed_.begin(), removed_.end(), 0)); }
    std::size_t safe_size() const { return safe_.size(); }

private:
    double rho_;
    double tol_;
    std::vector<Vec> safe_;
    std::vector<Vec> queries_;
    std::vector<char> removed_;
    std::vector<char> tested_;
    PointIndex index_;
    bool dirty_ = true;
};

/// IncrementalLabeler over vehicle states, using the same test as
/// build_negatives. The norm must stay fixed for the equivalence to hold.
class StateLabeler {
public:
    StateLabeler(NormStats norm, double rho, double tol = 1e-7) : norm_(std::move(norm)), rho_(rho), tol_(tol) {
        if (rho < 0.0) throw Error("rho must be non-negative");
    }

    void add_safe(const VehicleState& x) {
        safe_.push_back(x);
        safe_embedded_.push_back(norm_.normalize(x));
        dirty_ = true;
    }
    void add_query(const VehicleState& x) {
        queries_.push_back(x);
        removed_.push_back(0);
        tested_.push_back(0);
    }

    void update() {
        if (dirty_) {
            index_ = PointIndex(safe_embedded_);
            dirty_ = false;
            std::fill(tested_.begin(), tested_.end(), 0);
        }
        for (std::size_t i = 0; i < queries_.size(); ++i) {
            if (removed_[i] || tested_[i]) continue;
            tested_[i] = 1;
            const auto nb = index_.radius(norm_.normalize(queries_[i]), rho_);
            removed_[i] = state_hulled(norm_, queries_[i], safe_, nb, tol_) ? 1 : 0;
        }
    }

    std::vector<VehicleState> negatives() const {
        std::vector<VehicleState> out;
        for (std::size_t i = 0; i < queries_.size(); ++i)
            if (!removed_[i]) out.push_back(queries_[i]);
        return out;
    }
    const std::vector<VehicleState>& safe() const { return safe_; }
    const std::vector<VehicleState>& queries() const { return queries_; }
    const NormStats& norm() const { return norm_; }

private:
    NormStats norm_;
    double rho_;
    double tol_;
    std::vector<VehicleState> safe_;
    std::vector<Vec> safe_embedded_;
    std::vector<VehicleState> queries_;
    std::vector<char> removed_;
    std::vector<char> tested_;
    PointIndex index_;
    bool dirty_ = true;
};

// ---------------------------------------------------------------------------
// Synthetic 2-D sets with exact signed distance (positive inside).

enum class SyntheticKind { Disk, Crescent, Sector };

inline SyntheticKind synthetic_from_string(const std::string& s) {
    if (s == "disk") return SyntheticKind::Disk;
    if (s == "crescent") return SyntheticKind::Crescent;
    if (s == "sector") return SyntheticKind::Sector;
    throw Error("unknown synthetic set '" + s + "' (expected disk, crescent or sector)");
}

inline std::string to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::Disk: return "disk";
        case SyntheticKind::Crescent: return "crescent";
        case SyntheticKind::Sector: return "sector";
    }
    return "disk";
}

namespace detail {

inline double wrap_angle(double a) {
    while (a < 0.0) a += 2.0 * kPi;
    while (a >= 2.0 * kPi) a -= 2.0 * kPi;
    return a;
}

/// Distance from p to the circular arc centered at c, radius r, from angle a0
/// counterclockwise through span.
inline double arc_distance(const Vec& p, const Vec& c, double r, double a0, double span) {
    const Vec d = p - c;
    const double rho = d.norm();
    if (rho > 0.0) {
        const double a = wrap_angle(std::atan2(d[1], d[0]) - a0);
        if (a <= span) return std::abs(rho - r);
    }
    Vec e0(2), e1(2);
    e0 << c[0] + r * std::cos(a0), c[1] + r * std::sin(a0);
    e1 << c[0] + r * std::cos(a0 + span), c[1] + r * std::sin(a0 + span);
    return std::min((p - e0).norm(), (p - e1).norm());
}

inline double segment_distance(const Vec& p, const Vec& a, const Vec& b) {
    const Vec ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

inline Vec v2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

}  // namespace detail

/// Disk: radius 1.5 at the origin. Crescent: that disk minus a radius-1.1
/// disk centered at (0.75, 0). Sector: the disk minus the 90-degree wedge
/// |angle| < 45 deg, giving a reflex corner at the origin. Ambient box [-2, 2]^2.
struct SyntheticSet {
    SyntheticKind kind = SyntheticKind::Crescent;
    double outer_radius = 1.5;
    double bite_radius = 1.1;
    double bite_offset = 0.75;
    double wedge_half_angle = kPi / 4.0;
    double box = 2.0;

    bool contains(const Vec& p) const {
        const bool in_outer = p.norm() <= outer_radius;
        switch (kind) {
            case SyntheticKind::Disk: return in_outer;
            case SyntheticKind::Crescent: return in_outer && (p - detail::v2(bite_offset, 0.0)).norm() > bite_radius;
            case SyntheticKind::Sector: return in_outer && std::abs(std::atan2(p[1], p[0])) >= wedge_half_angle;
        }
        return false;
    }

    /// Outside the set but inside its convex hull: where over-smoothing errs.
    bool in_concave_region(const Vec& p) const {
        switch (kind) {
            case SyntheticKind::Disk: return false;
            case SyntheticKind::Crescent:
                return p.norm() <= outer_radius && (p - detail::v2(bite_offset, 0.0)).norm() <= bite_radius;
            case SyntheticKind::Sector:
                return p.norm() <= outer_radius && std::abs(std::atan2(p[1], p[0])) < wedge_half_angle;
        }
        return false;
    }

    double boundary_distance(const Vec& p) const {
        using detail::arc_distance;
        const Vec o = detail::v2(0.0, 0.0);
        switch (kind) {
            case SyntheticKind::Disk: return std::abs(p.norm() - outer_radius);
            case SyntheticKind::Crescent: {
                const double R = outer_radius, r = bite_radius, d = bite_offset;
                const double ix = (R * R - r * r + d * d) / (2.0 * d);
                const double iy = std::sqrt(R * R - ix * ix);
                const double a_outer = std::atan2(iy, ix);
                const double a_inner = std::atan2(iy, ix - d);
                const double outer = arc_distance(p, o, R, a_outer, 2.0 * kPi - 2.0 * a_outer);
                const double inner = arc_distance(p, detail::v2(d, 0.0), r, a_inner, 2.0 * kPi - 2.0 * a_inner);
                return std::min(outer, inner);
            }
            case SyntheticKind::Sector: {
                const double a = wedge_half_angle, R = outer_radius;
                const double arc = arc_distance(p, o, R, a, 2.0 * kPi - 2.0 * a);
                const double s1 = detail::segment_distance(p, o, detail::v2(R * std::cos(a), R * std::sin(a)));
                const double s2 = detail::segment_distance(p, o, detail::v2(R * std::cos(a), -R * std::sin(a)));
                return std::min({arc, s1, s2});
            }
        }
        return 0.0;
    }

    double signed_distance(const Vec& p) const {
        const double dist = boundary_distance(p);
        return contains(p) ? dist : -dist;
    }

    Vec sample_ambient(Rng& rng) const {
        std::uniform_real_distribution<double> u(-box, box);
        const double x = u(rng);
        const double y = u(rng);
        return detail::v2(x, y);
    }

    Vec sample_inside(Rng& rng) const {
        for (;;) {
            Vec p = sample_ambient(rng);
            if (contains(p)) return p;
        }
    }
};

inline std::size_t prop1_violation_count(const std::vector<Vec>& removed, const SyntheticSet& set, double rho) {
    std::size_t n = 0;
    for (const auto& p : removed)
        if (set.signed_distance(p) < -rho - 1e-9) ++n;
    return n;
}

struct LabelSweepEntry {
    double rho = 0.0;
    std::vector<char> removed;
    std::size_t n_removed = 0;
    std::size_t incorrect = 0;          // removed but truly outside
    std::size_t incorrect_concave = 0;  // ... and inside the concave region
    std::size_t violations = 0;         // removed with sdf < -rho
};

struct LabelBenchmark {
    SyntheticSet set;
    std::vector<Vec> d_plus;
    std::vector<Vec> d_query;
    std::vector<LabelSweepEntry> sweep;
};

/// d_plus uniform inside the set, d_query uniform over the ambient box, then
/// auto-labeling at every rho. Points live in normalized units already.
inline LabelBenchmark run_label_benchmark(const SyntheticSet& set, std::size_t n_plus, std::size_t n_query,
                                          const std::vector<double>& rhos, std::uint64_t seed, double tol = 1e-7) {
    LabelBenchmark b;
    b.set = set;
    Rng rng(derive_seed(seed, {0x6c6162}));
    for (std::size_t i = 0; i < n_plus; ++i) b.d_plus.push_back(set.sample_inside(rng));
    for (std::size_t i = 0; i < n_query; ++i) b.d_query.push_back(set.sample_ambient(rng));
    const PointIndex index(b.d_plus);
    for (double rho : rhos) {
        LabelSweepEntry e;
        e.rho = rho;
        e.removed = locally_hulled(index, b.d_query, rho, tol);
        std::vector<Vec> removed_pts;
        for (std::size_t i = 0; i < b.d_query.size(); ++i) {
            if (!e.removed[i]) continue;
            removed_pts.push_back(b.d_query[i]);
            const auto& p = b.d_query[i];
            if (!set.contains(p)) {
                ++e.incorrect;
                if (set.in_concave_region(p)) ++e.incorrect_concave;
            }
        }
        e.n_removed = removed_pts.size();
        e.violations = prop1_violation_count(removed_pts, set, rho);
        b.sweep.push_back(std::move(e));
    }
    return b;
}

}  // namespace cabc
