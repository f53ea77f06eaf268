#pragma once

// Fully connected tanh networks with exact reverse-mode gradients for both
// parameters and inputs, an Adam optimizer and a finite-difference checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cabc/core.hpp"
#include "cabc/random.hpp"

namespace cabc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Head { Identity, Tanh, Sigmoid };

inline std::string to_string(Head h) {
    switch (h) {
        case Head::Identity: return "identity";
        case Head::Tanh: return "tanh";
        case Head::Sigmoid: return "sigmoid";
    }
    return "identity";
}

inline Head head_from_string(const std::string& s) {
    if (s == "identity") return Head::Identity;
    if (s == "tanh") return Head::Tanh;
    if (s == "sigmoid") return Head::Sigmoid;
    throw Error("unknown output head '" + s + "'");
}

inline constexpr double kLogitClamp = 30.0;

struct DenseLayer {
    Mat W;
    Vec b;
};

/// Parameter-shaped container; gradients and optimizer moments use it too.
using LayerSet = std::vector<DenseLayer>;

inline LayerSet zeros_like(const LayerSet& ls) {
    LayerSet out;
    out.reserve(ls.size());
    for (const auto& l : ls) out.push_back({Mat::Zero(l.W.rows(), l.W.cols()), Vec::Zero(l.b.size())});
    return out;
}

inline void axpy(double a, const LayerSet& x, LayerSet& y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i].W += a * x[i].W;
        y[i].b += a * x[i].b;
    }
}

inline void scale(LayerSet& x, double a) {
    for (auto& l : x) {
        l.W *= a;
        l.b *= a;
    }
}

inline bool all_finite(const LayerSet& ls) {
    for (const auto& l : ls)
        if (!l.W.allFinite() || !l.b.allFinite()) return false;
    return true;
}

inline bool all_zero(const LayerSet& ls) {
    for (const auto& l : ls)
        if ((l.W.array() != 0.0).any() || (l.b.array() != 0.0).any()) return false;
    return true;
}

inline std::size_t parameter_count(const LayerSet& ls) {
    std::size_t n = 0;
    for (const auto& l : ls) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
}

/// Intermediate values kept by a batched forward pass for the backward pass.
struct ForwardCache {
    std::vector<Mat> acts;  // acts[0] = input, acts[l] = tanh output of hidden layer l
    Mat logits;             // pre-head output
    Mat out;
};

class Mlp {
public:
    Mlp() = default;

    /// Glorot-uniform weights, zero biases.
    Mlp(std::vector<int> sizes, Head head, std::uint64_t seed) : sizes_(std::move(sizes)), head_(head), seed_(seed) {
        if (sizes_.size() < 2) throw Error("Mlp: need at least input and output sizes");
        Rng rng(derive_seed(seed, {0x6d6c70}));
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const int in = sizes_[l], out = sizes_[l + 1];
            if (in < 1 || out < 1) throw Error("Mlp: layer sizes must be positive");
            const double lim = std::sqrt(6.0 / (in + out));
            std::uniform_real_distribution<double> u(-lim, lim);
            DenseLayer layer{Mat(out, in), Vec::Zero(out)};
            for (int j = 0; j < in; ++j)
                for (int i = 0; i < out; ++i) layer.W(i, j) = u(rng);
            layers_.push_back(std::move(layer));
        }
    }

    static Mlp zeros(std::vector<int> sizes, Head head) {
        Mlp m(std::move(sizes), head, 0);
        m.params() = zeros_like(m.params());
        return m;
    }

    const std::vector<int>& sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    Head head() const { return head_; }
    std::uint64_t seed() const { return seed_; }
    LayerSet& params() { return layers_; }
    const LayerSet& params() const { return layers_; }

    Mat forward(const Mat& X, ForwardCache* cache = nullptr) const {
        if (X.rows() != input_size()) throw Error("Mlp::forward: input has wrong dimension");
        Mat a = X;
        if (cache) {
            cache->acts.clear();
            cache->acts.push_back(X);
        }
        const std::size_t L = layers_.size();
        for (std::size_t l = 0; l + 1 < L; ++l) {
            Mat z = layers_[l].W * a;
            z.colwise() += layers_[l].b;
            a = z.array().tanh().matrix();
            if (cache) cache->acts.push_back(a);
        }
        Mat z = layers_.back().W * a;
        z.colwise() += layers_.back().b;
        Mat out = apply_head(z);
        if (cache) {
            cache->logits = z;
            cache->out = out;
        }
        return out;
    }

    Vec forward(const Vec& x) const { return forward(Mat(x)).col(0); }

    /// Backpropagates dL/d(out). Returns parameter gradients summed over the
    /// batch; writes dL/d(input) when requested.
    LayerSet backward(const ForwardCache& cache, const Mat& upstream, Mat* input_grad = nullptr) const {
        if (upstream.rows() != output_size() || upstream.cols() != cache.out.cols())
            throw Error("Mlp::backward: upstream gradient has wrong shape");
        LayerSet grads(layers_.size());
        Mat delta = upstream.cwiseProduct(head_derivative(cache.logits, cache.out));
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Mat& a_prev = cache.acts[l];
            grads[l].W = delta * a_prev.transpose();
            grads[l].b = delta.rowwise().sum();
            if (l > 0) {
                Mat back = layers_[l].W.transpose() * delta;
                delta = back.cwiseProduct((1.0 - a_prev.array().square()).matrix());
            } else if (input_grad) {
                *input_grad = layers_[0].W.transpose() * delta;
            }
        }
        return grads;
    }

private:
    Mat apply_head(const Mat& z) const {
        switch (head_) {
            case Head::Identity: return z;
            case Head::Tanh: return z.array().tanh().matrix();
            case Head::Sigmoid:
                return (1.0 / (1.0 + (-z.array().max(-kLogitClamp).min(kLogitClamp)).exp())).matrix();
        }
        return z;
    }

    Mat head_derivative(const Mat& z, const Mat& out) const {
        switch (head_) {
            case Head::Identity: return Mat::Ones(z.rows(), z.cols());
            case Head::Tanh: return (1.0 - out.array().square()).matrix();
            case Head::Sigmoid: {
                Mat d = (out.array() * (1.0 - out.array())).matrix();
                for (Eigen::Index i = 0; i < z.size(); ++i)
                    if (std::abs(z(i)) >= kLogitClamp) d(i) = 0.0;
                return d;
            }
        }
        return Mat::Ones(z.rows(), z.cols());
    }

    std::vector<int> sizes_;
    Head head_ = Head::Identity;
    std::uint64_t seed_ = 0;
    LayerSet layers_;
};

inline Vec forward(const Mlp& p, const Vec& input) { return p.forward(input); }

struct BackwardResult {
    LayerSet param_grads;
    Vec input_grad;
};

inline BackwardResult backward(const Mlp& p, const Vec& input, const Vec& upstream) {
    ForwardCache cache;
    p.forward(Mat(input), &cache);
    Mat gin;
    BackwardResult r;
    r.param_grads = p.backward(cache, Mat(upstream), &gin);
    r.input_grad = gin.col(0);
    return r;
}

struct AdamState {
    LayerSet m;
    LayerSet v;
    long long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const Mlp& net, double learning_rate) : m(zeros_like(net.params())), v(zeros_like(net.params())), lr(learning_rate) {}
};

inline void adam_step(Mlp& net, const LayerSet& grads, AdamState& opt) {
    auto& params = net.params();
    if (opt.m.size() != params.size()) {
        opt.m = zeros_like(params);
        opt.v = zeros_like(params);
    }
    ++opt.t;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
        p.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
    };
    for (std::size_t l = 0; l < params.size(); ++l) {
        update(params[l].W, grads[l].W, opt.m[l].W, opt.v[l].W);
        update(params[l].b, grads[l].b, opt.m[l].b, opt.v[l].b);
    }
}

/// |a - n| normalized so that `<= rel_tol` means agreement within rel_tol
/// relative error, or abs_floor absolute error for tiny values.
inline double fd_error(double analytic, double numeric, double rel_tol = 1e-4, double abs_floor = 1e-6) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor / rel_tol});
    return std::abs(analytic - numeric) / scale;
}

struct GradCheckReport {
    double max_param_error = 0.0;
    double max_input_error = 0.0;
    std::size_t checked = 0;
    bool passed = false;

    double max_error() const { return std::max(max_param_error, max_input_error); }
};

/// Compares backward() against central differences of L = c . forward(x) for a
/// fixed pseudo-random weighting c.
inline GradCheckReport grad_check(const Mlp& net, const Vec& input, double tolerance = 1e-4, double h = 1e-5,
                                  std::uint64_t seed = 1) {
    Rng rng(seed);
    std::normal_distribution<double> n01;
    Vec c(net.output_size());
    for (auto& v : c) v = n01(rng);

    auto loss = [&](const Mlp& m, const Vec& x) { return c.dot(m.forward(x)); };
    const BackwardResult analytic = backward(net, input, c);

    GradCheckReport rep;
    Mlp probe = net;
    for (std::size_t l = 0; l < probe.params().size(); ++l) {
        auto check = [&](double& w, double a) {
            const double orig = w;
            w = orig + h;
            const double fp = loss(probe, input);
            w = orig - h;
            const double fm = loss(probe, input);
            w = orig;
            rep.max_param_error = std::max(rep.max_param_error, fd_error(a, (fp - fm) / (2 * h), tolerance));
            ++rep.checked;
        };
        auto& layer = probe.params()[l];
        for (Eigen::Index i = 0; i < layer.W.size(); ++i) check(layer.W.data()[i], analytic.param_grads[l].W.data()[i]);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) check(layer.b[i], analytic.param_grads[l].b[i]);
    }
    Vec x = input;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = loss(net, x);
        x[i] = orig - h;
        const double fm = loss(net, x);
        x[i] = orig;
        rep.max_input_error = std::max(rep.max_input_error, fd_error(analytic.input_grad[i], (fp - fm) / (2 * h), tolerance));
        ++rep.checked;
    }
    rep.passed = rep.max_error() <= tolerance;
    return rep;
}

inline nlohmann::json to_json(const Mlp& net) {
    nlohmann::json j;
    j["sizes"] = net.sizes();
    j["activation"] = "tanh";
    j["head"] = to_string(net.head());
    j["seed"] = net.seed();
    auto layers = nlohmann::json::array();
    for (const auto& l : net.params()) {
        nlohmann::json lj;
        auto W = nlohmann::json::array();
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(l.W.cols()));
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) row[static_cast<std::size_t>(c)] = l.W(r, c);
            W.push_back(row);
        }
        lj["W"] = W;
        lj["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    try {
        const auto sizes = j.at("sizes").get<std::vector<int>>();
        if (j.contains("activation") && j.at("activation").get<std::string>() != "tanh")
            throw Error("weights: only tanh hidden activation is supported");
        Mlp net(sizes, head_from_string(j.at("head").get<std::string>()), j.value("seed", std::uint64_t{0}));
        const auto& layers = j.at("layers");
        if (layers.size() != sizes.size() - 1) throw Error("weights: layer count does not match sizes");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& dst = net.params()[l];
            const auto& W = layers[l].at("W");
            const auto& b = layers[l].at("b");
            if (static_cast<Eigen::Index>(W.size()) != dst.W.rows() || static_cast<Eigen::Index>(b.size()) != dst.b.size())
                throw Error("weights: layer " + std::to_string(l) + " has wrong shape");
            for (Eigen::Index r = 0; r < dst.W.rows(); ++r) {
                const auto& row = W[static_cast<std::size_t>(r)];
                if (static_cast<Eigen::Index>(row.size()) != dst.W.cols())
                    throw Error("weights: layer " + std::to_string(l) + " has wrong shape");
                for (Eigen::Index c = 0; c < dst.W.cols(); ++c) dst.W(r, c) = row[static_cast<std::size_t>(c)].get<double>();
            }
            for (Eigen::Index i = 0; i < dst.b.size(); ++i) dst.b[i] = b[static_cast<std::size_t>(i)].get<double>();
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("weights: ") + e.what());
    }
}

inline void save_weights(const Mlp& net, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os << to_json(net).dump() << '\n';
}

inline Mlp load_weights(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path + "' for reading");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("weights '" + path + "': " + e.what());
    }
    return mlp_from_json(j);
}

}  // namespace cabc
