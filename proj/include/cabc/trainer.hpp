#pragma once

// Constraint-aware behavior cloning: mixed expert/learner data collection
// with expert relabeling, auto-labeled safety data, interleaved updates of
// the policy, the dynamics surrogate and the safety classifier, and the plain
// behavior-cloning baseline that shares the same loop.

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cabc/autolabel.hpp"
#include "cabc/config.hpp"
#include "cabc/core.hpp"
#include "cabc/critic.hpp"
#include "cabc/dataset.hpp"
#include "cabc/eval.hpp"
#include "cabc/experts.hpp"
#include "cabc/nn.hpp"
#include "cabc/parallel.hpp"
#include "cabc/random.hpp"
#include "cabc/sim.hpp"
#include "cabc/track.hpp"

namespace cabc {

enum class Method { Bc, Ca };

inline Method method_from_string(const std::string& s) {
    if (s == "bc") return Method::Bc;
    if (s == "ca") return Method::Ca;
    throw Error("unknown method '" + s + "' (expected bc or ca)");
}

inline std::string to_string(Method m) { return m == Method::Bc ? "bc" : "ca"; }

inline std::vector<int> parse_sizes(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (v < 1 || tok.find_first_not_of(" \t", used) != std::string::npos) throw Error("");
            out.push_back(v);
        } catch (const std::exception&) {
            throw Error("layer sizes: cannot parse '" + s + "' (expected e.g. 128,128,128)");
        }
    }
    return out;
}

inline std::string format_sizes(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct TrainConfig {
    int epochs = 300;  // M
    double alpha = 0.7;
    double rho = 1.0;
    std::optional<double> lambda;  // unset: 10 for full-state racing, 1 otherwise
    int k_f = 5;
    int k_p = 10;
    int episodes_per_epoch = 4;
    double actuation_noise_sigma = 0.15;
    int batch_size = 256;
    double lr_policy = 1e-3;
    double lr_dyn = 1e-3;
    double lr_clf = 1e-3;
    int policy_steps = 200;
    int dyn_steps = 200;
    int clf_steps = 200;
    std::uint64_t seed = 0;
    Method method = Method::Ca;
    ObsMode obs = ObsMode::Output;
    std::vector<int> policy_hidden{128, 128, 128};
    std::vector<int> dyn_hidden{128, 128, 128};
    std::vector<int> clf_hidden{128, 128, 128};
    int eval_laps = kEvalLaps;
    bool early_stop = true;

    double lambda_for(ExpertKind k) const {
        return lambda ? *lambda : (k == ExpertKind::Racing && obs == ObsMode::FullState ? 10.0 : 1.0);
    }

    void validate() const {
        if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("TrainConfig: alpha must be in (0, 1]");
        if (!(rho >= 0.0)) throw Error("TrainConfig: rho must be >= 0");
        if (lambda && !(*lambda >= 0.0)) throw Error("TrainConfig: lambda must be >= 0");
        if (k_f < 1 || k_p < 1) throw Error("TrainConfig: k_f and k_p must be >= 1");
        if (episodes_per_epoch < 1) throw Error("TrainConfig: episodes_per_epoch must be >= 1");
        if (!(actuation_noise_sigma >= 0.0)) throw Error("TrainConfig: actuation_noise_sigma must be >= 0");
        if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
        if (policy_steps < 0 || dyn_steps < 0 || clf_steps < 0) throw Error("TrainConfig: step counts must be >= 0");
        if (!(lr_policy > 0 && lr_dyn > 0 && lr_clf > 0)) throw Error("TrainConfig: learning rates must be positive");
        if (eval_laps < 1) throw Error("TrainConfig: eval_laps must be >= 1");
    }

    void apply(const KeyValues& kv) {
        kv.get("epochs", epochs);
        kv.get("alpha", alpha);
        kv.get("rho", rho);
        if (kv.has("lambda")) {
            double l = 0;
            kv.get("lambda", l);
            lambda = l;
        }
        kv.get("k_f", k_f);
        kv.get("k_p", k_p);
        kv.get("episodes_per_epoch", episodes_per_epoch);
        kv.get("actuation_noise_sigma", actuation_noise_sigma);
        kv.get("batch_size", batch_size);
        kv.get("lr_policy", lr_policy);
        kv.get("lr_dyn", lr_dyn);
        kv.get("lr_clf", lr_clf);
        kv.get("policy_steps", policy_steps);
        kv.get("dyn_steps", dyn_steps);
        kv.get("clf_steps", clf_steps);
        kv.get("seed", seed);
        std::string s;
        if (kv.has("method")) {
            kv.get("method", s);
            method = method_from_string(s);
        }
        if (kv.has("obs")) {
            kv.get("obs", s);
            obs = obs_mode_from_string(s);
        }
        if (kv.has("policy_hidden")) {
            kv.get("policy_hidden", s);
            policy_hidden = parse_sizes(s);
        }
        if (kv.has("dyn_hidden")) {
            kv.get("dyn_hidden", s);
            dyn_hidden = parse_sizes(s);
        }
        if (kv.has("clf_hidden")) {
            kv.get("clf_hidden", s);
            clf_hidden = parse_sizes(s);
        }
        kv.get("eval_laps", eval_laps);
        kv.get("early_stop", early_stop);
        validate();
    }
};

/// Key = value snapshot of everything that determines a run.
inline std::string config_snapshot(const TrainConfig& c, const SimConfig& s, const ExpertConfig& e,
                                   const std::string& track) {
    std::ostringstream os;
    os.precision(17);
    os << "track = " << track << "\nexpert = " << to_string(e.kind) << "\n";
    os << "method = " << to_string(c.method) << "\nobs = " << to_string(c.obs) << "\nepochs = " << c.epochs
       << "\nalpha = " << c.alpha << "\nrho = " << c.rho << "\nlambda = " << c.lambda_for(e.kind) << "\nk_f = " << c.k_f
       << "\nk_p = " << c.k_p << "\nepisodes_per_epoch = " << c.episodes_per_epoch
       << "\nactuation_noise_sigma = " << c.actuation_noise_sigma << "\nbatch_size = " << c.batch_size
       << "\nlr_policy = " << c.lr_policy << "\nlr_dyn = " << c.lr_dyn << "\nlr_clf = " << c.lr_clf
       << "\npolicy_steps = " << c.policy_steps << "\ndyn_steps = " << c.dyn_steps << "\nclf_steps = " << c.clf_steps
       << "\nseed = " << c.seed << "\npolicy_hidden = " << format_sizes(c.policy_hidden)
       << "\ndyn_hidden = " << format_sizes(c.dyn_hidden) << "\nclf_hidden = " << format_sizes(c.clf_hidden)
       << "\neval_laps = " << c.eval_laps << "\nearly_stop = " << (c.early_stop ? "true" : "false") << "\n";
    os << "dt = " << s.dt << "\nsubsteps = " << s.substeps << "\ndrive_gain = " << s.drive_gain << "\ndrag = " << s.drag
       << "\nc_front = " << s.c_front << "\nc_rear = " << s.c_rear << "\nl_front = " << s.l_front
       << "\nl_rear = " << s.l_rear << "\nyaw_inertia = " << s.yaw_inertia << "\nmax_steer = " << s.max_steer
       << "\nv_max = " << s.v_max << "\nhalf_width_margin = " << s.half_width_margin << "\ne_psi_max = " << s.e_psi_max
       << "\nnoise_sigma_v = " << s.noise_sigma_v << "\nnoise_sigma_kappa = " << s.noise_sigma_kappa
       << "\npreview_k = " << s.preview_k << "\npreview_spacing = " << s.preview_spacing
       << "\nv_low = " << s.v_low << "\nmax_steps = " << s.max_steps << "\n";
    os << "pid_kp_v = " << e.pid.kp_v << "\npid_ki_v = " << e.pid.ki_v << "\npid_kp_lat = " << e.pid.kp_lat
       << "\npid_kd_lat = " << e.pid.kd_lat << "\npid_v_ref = " << e.pid.v_ref << "\nrace_alat_max = " << e.racing.a_lat_max
       << "\nrace_abrake = " << e.racing.a_brake << "\nrace_lookahead = " << e.racing.lookahead
       << "\nrace_offset_gain = " << e.racing.offset_gain << "\nrace_offset_max = " << e.racing.offset_max
       << "\nrace_kp_v = " << e.racing.kp_v << "\nrace_ki_v = " << e.racing.ki_v << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Data collection.

struct MixCounter {
    long expert_steps = 0;
    long total_steps = 0;
};

/// pi_collect: per step, the expert's action with probability beta_prob and
/// the learner's otherwise, plus N(0, sigma_u^2) actuation noise, clamped.
/// The expert is queried every step so the stored label is always pi_beta(x).
inline DecisionPolicy mix_policy(std::function<Action(const VehicleState&)> expert, Policy learner, double beta_prob,
                                 double sigma_u, Rng& rng, MixCounter* counter = nullptr) {
    if (!(beta_prob >= 0.0 && beta_prob <= 1.0)) throw Error("mix_policy: beta_prob must be in [0, 1]");
    return [expert = std::move(expert), learner = std::move(learner), beta_prob, sigma_u, &rng, counter](
               const Observation& y, const VehicleState& x) {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);
        const Action label = expert(x);
        const bool use_expert = u01(rng) < beta_prob;
        Action chosen = use_expert ? label : learner(y, x);
        const double na = n01(rng), ns = n01(rng);
        chosen = Action{chosen.u_a + sigma_u * na, chosen.u_steer + sigma_u * ns}.clamped();
        if (counter) {
            counter->expert_steps += use_expert;
            ++counter->total_steps;
        }
        return Decision{chosen, label};
    };
}

// ---------------------------------------------------------------------------
// Gradients.

struct PolicyBatch {
    Mat inputs;                     // in_dim x B
    Mat targets;                    // 2 x B expert labels
    std::vector<VehicleState> xs;  // true states, for the safety term
};

struct AgentLoss {
    double clone = 0.0;   // mean ||pi(in) - u_expert||^2
    double safety = 0.0;  // mean -lambda log p_hat(f_hat(x, pi(in)))
    LayerSet grad_theta;
};

/// L_agent = L_clone + L_safety on one batch. The critic pair is only
/// differentiated with respect to its input; with lambda = 0 the safety term
/// is skipped entirely and the result is the plain cloning gradient.
inline AgentLoss agent_loss_and_grad(const Mlp& pi, const PolicyBatch& b, const DynModel* dyn, const SafetyClf* clf) {
    const auto B = b.inputs.cols();
    if (B == 0) throw Error("agent_loss_and_grad: empty batch");
    ForwardCache cache;
    const Mat out = pi.forward(b.inputs, &cache);
    const Mat err = out - b.targets;
    AgentLoss r;
    r.clone = err.squaredNorm() / static_cast<double>(B);
    Mat up = (2.0 / static_cast<double>(B)) * err;
    if (dyn && clf && clf->lambda != 0.0) {
        const PenaltyBatch pb = safety_penalty_batch(*clf, *dyn, b.xs, out);
        r.safety = pb.penalty.mean();
        up += pb.grad_u / static_cast<double>(B);
    }
    r.grad_theta = pi.backward(cache, up);
    return r;
}

struct DynBatch {
    std::vector<VehicleState> x, x_next;
    std::vector<Action> u;
};

struct ClfBatch {
    std::vector<VehicleState> x;
    std::vector<int> label;
};

struct GradientSet {
    LayerSet grad_theta;
    LayerSet grad_phi_f;
    LayerSet grad_phi_p;
    double clone_loss = 0.0;
    double safety_loss = 0.0;
    double dyn_loss = 0.0;
    double clf_loss = 0.0;
};

/// The three disjoint gradient sets: L_agent touches only the policy, L_dyn
/// only the dynamics net, BCE only the classifier. A missing batch yields an
/// all-zero set for that network.
inline GradientSet compute_gradients(const PolicyBatch& pb, const DynBatch* db, const ClfBatch* cb, const Mlp& pi,
                                     const DynModel& dyn, const SafetyClf& clf) {
    GradientSet g;
    const AgentLoss a = agent_loss_and_grad(pi, pb, &dyn, &clf);
    g.grad_theta = a.grad_theta;
    g.clone_loss = a.clone;
    g.safety_loss = a.safety;
    if (db && !db->x.empty()) {
        const LossGrad l = dyn_loss_and_grad(dyn, db->x, db->u, db->x_next);
        g.grad_phi_f = l.grads;
        g.dyn_loss = l.loss;
    } else {
        g.grad_phi_f = zeros_like(dyn.net.params());
    }
    if (cb && !cb->x.empty()) {
        const LossGrad l = clf_loss_and_grad(clf, cb->x, cb->label);
        g.grad_phi_p = l.grads;
        g.clf_loss = l.loss;
    } else {
        g.grad_phi_p = zeros_like(clf.net.params());
    }
    return g;
}

// ---------------------------------------------------------------------------
// Training loop.

class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

struct EpochReport {
    int epoch = 0;
    double imitation_loss = 0.0;
    double safety_loss = 0.0;
    double dyn_loss = 0.0;  // most recent update
    double clf_loss = 0.0;  // most recent update
    bool dyn_updated = false;
    std::string clf_status = "not_scheduled";
    int successes = 0;
    int failures = 0;
    std::size_t n_plus = 0;
    std::size_t n_query = 0;
    std::size_t n_minus = 0;
    double expert_fraction = 0.0;
    int eval_laps = 0;
    double lap_time_mean = 0.0;
    double lap_time_std = 0.0;
    std::string eval_termination;
    int early_stop_count = 0;
};

inline std::string csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline const char* kReportHeader =
    "epoch,imitation_loss,safety_loss,dyn_loss,clf_loss,dyn_updated,clf_status,successes,failures,n_plus,n_query,"
    "n_minus,expert_fraction,eval_laps,lap_time_mean,lap_time_std,eval_termination,early_stop_count";

inline std::string to_csv_row(const EpochReport& r) {
    std::ostringstream os;
    os << r.epoch << ',' << csv_number(r.imitation_loss) << ',' << csv_number(r.safety_loss) << ','
       << csv_number(r.dyn_loss) << ',' << csv_number(r.clf_loss) << ',' << (r.dyn_updated ? 1 : 0) << ','
       << r.clf_status << ',' << r.successes << ',' << r.failures << ',' << r.n_plus << ',' << r.n_query << ','
       << r.n_minus << ',' << csv_number(r.expert_fraction) << ',' << r.eval_laps << ','
       << csv_number(r.lap_time_mean) << ',' << csv_number(r.lap_time_std) << ',' << r.eval_termination << ','
       << r.early_stop_count;
    return os.str();
}

inline std::string reports_csv(const std::vector<EpochReport>& reports) {
    std::string s = std::string(kReportHeader) + "\n";
    for (const auto& r : reports) s += to_csv_row(r) + "\n";
    return s;
}

/// First epoch (1-based count of epochs trained) whose evaluation completed
/// every lap, or nullopt.
inline std::optional<int> epochs_to_full_eval(const std::vector<EpochReport>& reports, int laps = kEvalLaps) {
    for (const auto& r : reports)
        if (r.eval_laps >= laps) return r.epoch + 1;
    return std::nullopt;
}

namespace stream {
enum : std::uint64_t { PolicyInit = 1, DynInit, ClfInit, EpisodeObs = 10, EpisodeMix, PolicyBatches = 20, DynBatches,
                       ClfBatches, Eval = 30, ExpertEval };
}

class Trainer {
public:
    Trainer(TrainConfig cfg, SimConfig sim, ExpertConfig expert, const Track& track)
        : cfg_(std::move(cfg)), sim_(std::move(sim)), expert_(std::move(expert)), track_(&track) {
        cfg_.validate();
        sim_.validate();
        sim_.lap_target = 1;
        lambda_ = cfg_.lambda_for(expert_.kind);
        const int in = policy_input_dim(cfg_.obs, sim_);
        policy_ = Mlp(mlp_sizes(in, cfg_.policy_hidden, Action::kDim), Head::Tanh,
                      derive_seed(cfg_.seed, {stream::PolicyInit}));
        policy_opt_ = AdamState(policy_, cfg_.lr_policy);
        if (ca()) {
            const NormStats placeholder = NormStats::identity(kEmbeddedDim);
            dyn_ = DynModel(cfg_.dyn_hidden, placeholder, derive_seed(cfg_.seed, {stream::DynInit}));
            clf_ = SafetyClf(cfg_.clf_hidden, placeholder, lambda_, derive_seed(cfg_.seed, {stream::ClfInit}));
            dyn_opt_ = AdamState(dyn_.net, cfg_.lr_dyn);
            clf_opt_ = AdamState(clf_.net, cfg_.lr_clf);
        }
    }

    bool ca() const { return cfg_.method == Method::Ca; }
    int epoch() const { return static_cast<int>(reports_.size()); }
    bool done() const { return epoch() >= cfg_.epochs || stop_.triggered; }

    /// One pass of collect, label, update and evaluate.
    EpochReport run_epoch() {
        const int j = epoch();
        EpochReport rep;
        rep.epoch = j;

        // (1) Collection under pi_collect with expert probability alpha^j.
        const double beta = std::pow(cfg_.alpha, j);
        const auto n_ep = static_cast<std::size_t>(cfg_.episodes_per_epoch);
        std::vector<Trajectory> trajs(n_ep);
        std::vector<MixCounter> counters(n_ep);
        const LearnedPolicy learner{&policy_, cfg_.obs, sim_, track_};
        parallel_for(n_ep, [&](std::size_t e) {
            Rng obs_rng(derive_seed(cfg_.seed, {stream::EpisodeObs, static_cast<std::uint64_t>(j), e}));
            Rng mix_rng(derive_seed(cfg_.seed, {stream::EpisodeMix, static_cast<std::uint64_t>(j), e}));
            auto pol = mix_policy(make_expert(expert_, sim_, *track_), learner, beta, cfg_.actuation_noise_sigma,
                                  mix_rng, &counters[e]);
            trajs[e] = rollout(sim_, *track_, pol, standard_start(), sim_.max_steps, obs_rng);
        });
        MixCounter mix;
        for (std::size_t e = 0; e < n_ep; ++e) {
            // A singular rollout can end before its first sample; it adds nothing.
            if (trajs[e].samples.empty()) continue;
            mix.expert_steps += counters[e].expert_steps;
            mix.total_steps += counters[e].total_steps;
            const bool ok = trajs[e].outcome == Outcome::Success;
            (ok ? rep.successes : rep.failures) += 1;
            add_trajectory(std::move(trajs[e]));
        }
        rep.expert_fraction = mix.total_steps ? static_cast<double>(mix.expert_steps) / mix.total_steps : 0.0;

        if (j == 0 && ca()) freeze_statistics();

        // (2) Auto-labeling.
        if (ca() && labeler_) {
            labeler_->update();
            negatives_ = labeler_->negatives();
        }
        rep.n_plus = n_plus_;
        rep.n_query = n_query_;
        rep.n_minus = negatives_.size();

        // (4) Critic updates on their cadences, before the policy update that uses them.
        // The first classifier fit also refreshes the dynamics model, so the
        // penalty never starts on a model fitted only to the expert's epoch.
        const bool clf_catch_up = ca() && !clf_fitted_ && !negatives_.empty() && n_plus_ > 0;
        if (ca() && (j % cfg_.k_f == 0 || clf_catch_up) && cfg_.dyn_steps > 0 && !samples_.empty()) {
            Rng rng(derive_seed(cfg_.seed, {stream::DynBatches, static_cast<std::uint64_t>(j)}));
            std::vector<const Sample*> ptr;
            ptr.reserve(samples_.size());
            for (const auto& s : samples_) ptr.push_back(&s);
            last_dyn_loss_ = train_dyn(dyn_, dyn_opt_, ptr, cfg_.dyn_steps, cfg_.batch_size, rng);
            check_finite(last_dyn_loss_, "dynamics loss", j);
            rep.dyn_updated = true;
        }
        // The classifier follows its cadence once fitted; before that it is
        // fitted at the first epoch with both label classes.
        if (ca() && (j % cfg_.k_p == 0 || !clf_fitted_)) rep.clf_status = update_classifier(j);
        rep.dyn_loss = last_dyn_loss_;
        rep.clf_loss = last_clf_loss_;

        // (3) + (4) Policy update on the aggregated dataset.
        Rng rng(derive_seed(cfg_.seed, {stream::PolicyBatches, static_cast<std::uint64_t>(j)}));
        double clone = 0.0, safety = 0.0;
        int steps = 0;
        if (!samples_.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, samples_.size() - 1);
            const auto B = static_cast<Eigen::Index>(cfg_.batch_size);
            PolicyBatch pb{Mat(inputs_.front().size(), B), Mat(Action::kDim, B), std::vector<VehicleState>(static_cast<std::size_t>(cfg_.batch_size))};
            // An unfitted classifier carries no label information, so the
            // safety term waits for the first fit.
            const bool with_safety = ca() && lambda_ != 0.0 && clf_fitted_;
            for (int st = 0; st < cfg_.policy_steps; ++st) {
                for (Eigen::Index b = 0; b < B; ++b) {
                    const std::size_t i = pick(rng);
                    pb.inputs.col(b) = inputs_[i];
                    pb.targets(0, b) = samples_[i].u_expert.u_a;
                    pb.targets(1, b) = samples_[i].u_expert.u_steer;
                    pb.xs[static_cast<std::size_t>(b)] = samples_[i].x;
                }
                const AgentLoss a =
                    with_safety ? agent_loss_and_grad(policy_, pb, &dyn_, &clf_) : agent_loss_and_grad(policy_, pb, nullptr, nullptr);
                check_finite(a.clone, "imitation loss", j);
                check_finite(a.safety, "safety loss", j);
                adam_step(policy_, a.grad_theta, policy_opt_);
                clone += a.clone;
                safety += a.safety;
                ++steps;
            }
        }
        rep.imitation_loss = steps ? clone / steps : 0.0;
        rep.safety_loss = steps ? safety / steps : 0.0;

        // (5) Evaluation and early stopping.
        last_eval_ = evaluate(LearnedPolicy{&policy_, cfg_.obs, sim_, track_}, sim_, *track_,
                              derive_seed(cfg_.seed, {stream::Eval, static_cast<std::uint64_t>(j)}), cfg_.eval_laps,
                              true);
        rep.eval_laps = last_eval_.laps_completed;
        rep.lap_time_mean = last_eval_.mean_lap_time;
        rep.lap_time_std = last_eval_.std_lap_time;
        rep.eval_termination = to_string(last_eval_.terminated_by);
        if (cfg_.early_stop) stop_ = early_stop_update(stop_, last_eval_, cfg_.eval_laps);
        rep.early_stop_count = stop_.count;
        reports_.push_back(rep);
        return rep;
    }

    /// Runs until M epochs or early stop. With a rundir, writes the config
    /// snapshot, per-epoch reports and checkpoint, then final weights and data.
    void run(const std::string& rundir = "", const std::function<void(const EpochReport&)>& on_epoch = {}) {
        namespace fs = std::filesystem;
        if (!rundir.empty()) {
            fs::create_directories(fs::path(rundir) / "checkpoint");
            write_file(rundir + "/config.txt", config_snapshot(cfg_, sim_, expert_, track_->name()));
            write_track_file(track_->spec(), rundir + "/track.txt");
            write_expert_reference(rundir);
        }
        try {
            while (!done()) {
                const EpochReport r = run_epoch();
                if (on_epoch) on_epoch(r);
                if (!rundir.empty()) {
                    write_file(rundir + "/reports.csv", reports_csv(reports_));
                    save_models(rundir + "/checkpoint");
                    write_file(rundir + "/checkpoint/epoch.txt", std::to_string(r.epoch) + "\n");
                }
            }
        } catch (const NonFiniteLossError&) {
            if (!rundir.empty()) write_file(rundir + "/reports.csv", reports_csv(reports_));
            throw;
        }
        if (!rundir.empty()) {
            save_models(rundir);
            save_dataset(trajectories_, rundir + "/dataset.jsonl");
            if (ca()) {
                LabeledPool pool = labeled_pool();
                save_dataset(pool, rundir + "/pool.jsonl");
            }
            write_trajectory_csv(rundir + "/eval_trajectory.csv", last_eval_.states);
        }
    }

    const Mlp& policy() const { return policy_; }
    const DynModel& dyn() const { return dyn_; }
    const SafetyClf& clf() const { return clf_; }
    const std::vector<EpochReport>& reports() const { return reports_; }
    const std::vector<Trajectory>& trajectories() const { return trajectories_; }
    const EvalResult& last_eval() const { return last_eval_; }
    const TrainConfig& config() const { return cfg_; }
    const SimConfig& sim() const { return sim_; }
    double lambda() const { return lambda_; }
    bool classifier_fitted() const { return clf_fitted_; }

    LabeledPool labeled_pool() const {
        LabeledPool p;
        if (labeler_) {
            p.d_plus = labeler_->safe();
            p.d_query = labeler_->queries();
        }
        p.d_minus = negatives_;
        return p;
    }

private:
    void add_trajectory(Trajectory t) {
        const bool ok = t.outcome == Outcome::Success;
        for (const auto& s : t.samples) {
            samples_.push_back(s);
            inputs_.push_back(policy_input(cfg_.obs, sim_, *track_, s.y, s.x));
            (ok ? n_plus_ : n_query_) += 1;
        }
        if (ca()) {
            for (const auto& s : t.samples) (ok ? pending_plus_ : pending_query_).push_back(s.x);
            flush_pending();
        }
        trajectories_.push_back(std::move(t));
    }

    void flush_pending() {
        if (!labeler_) return;
        for (const auto& x : pending_plus_) labeler_->add_safe(x);
        for (const auto& x : pending_query_) labeler_->add_query(x);
        pending_plus_.clear();
        pending_query_.clear();
    }

    /// Normalization and delta statistics come from the first epoch's data
    /// and stay fixed, so the labeling metric and network inputs never shift.
    void freeze_statistics() {
        std::vector<VehicleState> fit;
        for (const auto& x : pending_plus_) fit.push_back(x);
        if (fit.size() < 2)
            for (const auto& s : samples_) fit.push_back(s.x);
        if (fit.size() < 2) throw Error("trainer: first epoch produced fewer than two states");
        const NormStats norm = fit_norm(fit, track_->lap_length());
        dyn_.norm = norm;
        clf_.norm = norm;
        dyn_.fit_delta_stats(samples_);
        labeler_.emplace(norm, cfg_.rho);
        flush_pending();
    }

    std::string update_classifier(int j) {
        if (!labeler_ || labeler_->safe().empty()) return "skipped_no_positives";
        if (negatives_.empty()) return "skipped_no_negatives";
        if (cfg_.clf_steps == 0) return "not_scheduled";
        const auto& plus = labeler_->safe();
        Mat X(kEmbeddedDim, static_cast<Eigen::Index>(plus.size() + negatives_.size()));
        std::vector<int> labels;
        labels.reserve(plus.size() + negatives_.size());
        Eigen::Index c = 0;
        for (const auto& x : plus) {
            X.col(c++) = clf_.norm.normalize(x);
            labels.push_back(1);
        }
        for (const auto& x : negatives_) {
            X.col(c++) = clf_.norm.normalize(x);
            labels.push_back(0);
        }
        Rng rng(derive_seed(cfg_.seed, {stream::ClfBatches, static_cast<std::uint64_t>(j)}));
        last_clf_loss_ = train_bce(clf_.net, clf_opt_, X, labels, cfg_.clf_steps, cfg_.batch_size, rng);
        check_finite(last_clf_loss_, "classifier loss", j);
        clf_fitted_ = true;
        return "trained";
    }

    static void check_finite(double v, const char* what, int epoch) {
        if (!std::isfinite(v))
            throw NonFiniteLossError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch));
    }

    static void write_file(const std::string& path, const std::string& text) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("cannot write '" + path + "'");
        os << text;
    }

    void write_expert_reference(const std::string& rundir) const {
        const auto ex = std::make_shared<std::function<Action(const VehicleState&)>>(make_expert(expert_, sim_, *track_));
        const EvalResult r = evaluate(Policy([ex](const Observation&, const VehicleState& x) { return (*ex)(x); }), sim_,
                                      *track_, derive_seed(cfg_.seed, {stream::ExpertEval}), cfg_.eval_laps);
        std::ostringstream os;
        os << "laps,lap_time_mean,lap_time_std,lap_time_min,lap_time_max\n"
           << r.laps_completed << ',' << csv_number(r.mean_lap_time) << ',' << csv_number(r.std_lap_time) << ','
           << csv_number(r.min_lap_time) << ',' << csv_number(r.max_lap_time) << '\n';
        write_file(rundir + "/expert.csv", os.str());
    }

    void write_trajectory_csv(const std::string& path, const std::vector<VehicleState>& states) const {
        std::ostringstream os;
        os << "step,s,x_tran,e_psi,v_long,x,y\n";
        for (std::size_t k = 0; k < states.size(); ++k) {
            const auto& x = states[k];
            const Pose2 p = track_->frenet_to_cartesian(x.s, x.x_tran, x.e_psi);
            os << k << ',' << csv_number(x.s) << ',' << csv_number(x.x_tran) << ',' << csv_number(x.e_psi) << ','
               << csv_number(x.v_long) << ',' << csv_number(p.x) << ',' << csv_number(p.y) << '\n';
        }
        write_file(path, os.str());
    }

    void save_models(const std::string& dir) const {
        save_weights(policy_, dir + "/policy.json");
        if (ca()) save_critic(dyn_, clf_, dir);
    }

    TrainConfig cfg_;
    SimConfig sim_;
    ExpertConfig expert_;
    const Track* track_;
    double lambda_ = 0.0;

    Mlp policy_;
    AdamState policy_opt_;
    DynModel dyn_;
    SafetyClf clf_;
    AdamState dyn_opt_;
    AdamState clf_opt_;
    double last_dyn_loss_ = 0.0;
    double last_clf_loss_ = 0.0;
    bool clf_fitted_ = false;

    std::deque<Sample> samples_;
    std::deque<Vec> inputs_;
    std::vector<Trajectory> trajectories_;
    std::optional<StateLabeler> labeler_;
    std::vector<VehicleState> pending_plus_, pending_query_;
    std::vector<VehicleState> negatives_;
    std::size_t n_plus_ = 0, n_query_ = 0;

    std::vector<EpochReport> reports_;
    EvalResult last_eval_;
    EarlyStopState stop_;
};

struct TrainOutput {
    Mlp policy;
    DynModel dyn;
    SafetyClf clf;
    std::vector<EpochReport> reports;
};

inline TrainOutput train(const TrainConfig& cfg, const SimConfig& sim, const ExpertConfig& expert, const Track& track,
                         const std::string& rundir = "") {
    Trainer t(cfg, sim, expert, track);
    t.run(rundir);
    return {t.policy(), t.dyn(), t.clf(), t.reports()};
}

inline TrainOutput train_ca(TrainConfig cfg, const SimConfig& sim, const ExpertConfig& expert, const Track& track,
                            const std::string& rundir = "") {
    cfg.method = Method::Ca;
    return train(cfg, sim, expert, track, rundir);
}

inline TrainOutput train_bc(TrainConfig cfg, const SimConfig& sim, const ExpertConfig& expert, const Track& track,
                            const std::string& rundir = "") {
    cfg.method = Method::Bc;
    return train(cfg, sim, expert, track, rundir);
}

}  // namespace cabc
