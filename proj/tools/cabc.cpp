// cabc: train, evaluate, report, simulate and auto-labeling demo.
//
// Exit codes: 0 success, 1 bad input or runtime error, 2 non-finite loss.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cabc/autolabel.hpp"
#include "cabc/config.hpp"
#include "cabc/critic.hpp"
#include "cabc/eval.hpp"
#include "cabc/experts.hpp"
#include "cabc/report.hpp"
#include "cabc/sim.hpp"
#include "cabc/track.hpp"
#include "cabc/trainer.hpp"

using namespace cabc;
namespace fs = std::filesystem;

namespace {

/// A config file plus the keys that select the task. Command-line flags win.
struct Setup {
    KeyValues kv;
    std::string track = "gp";
    std::string expert = "racing";
    std::string obs = "output";
    std::string method = "ca";
};

Setup load_setup(const std::string& config_path) {
    Setup s;
    if (!config_path.empty()) s.kv = KeyValues::load(config_path);
    s.kv.get("track", s.track);
    s.kv.get("expert", s.expert);
    s.kv.get("obs", s.obs);
    s.kv.get("method", s.method);
    return s;
}

void reject_unused(const KeyValues& kv, const std::string& origin) {
    const auto unused = kv.unused();
    if (unused.empty()) return;
    std::string msg = origin + ": unknown keys:";
    for (const auto& k : unused) msg += " " + k;
    throw Error(msg);
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (tok.empty() || *end != '\0') throw Error("cannot parse number list '" + s + "'");
        out.push_back(v);
    }
    if (out.empty()) throw Error("empty number list");
    return out;
}

void print_eval(const EvalResult& r) {
    std::printf("laps_completed: %d\nterminated_by: %s\n", r.laps_completed, to_string(r.terminated_by).c_str());
    std::printf("lap_time_mean: %.6f\nlap_time_std: %.6f\nlap_time_min: %.6f\nlap_time_max: %.6f\n", r.mean_lap_time,
                r.std_lap_time, r.min_lap_time, r.max_lap_time);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string method, track, expert, obs, config, out = "run";
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    Setup s = load_setup(a.config);
    if (!a.method.empty()) s.method = a.method;
    if (!a.track.empty()) s.track = a.track;
    if (!a.expert.empty()) s.expert = a.expert;
    if (!a.obs.empty()) s.obs = a.obs;
    s.kv.set("method", s.method);
    s.kv.set("obs", s.obs);
    if (a.seed) s.kv.set("seed", std::to_string(*a.seed));
    if (a.epochs) s.kv.set("epochs", std::to_string(*a.epochs));

    TrainConfig tc;
    SimConfig sim;
    ExpertConfig ec;
    ec.kind = expert_from_string(s.expert);
    tc.apply(s.kv);
    sim.apply(s.kv);
    ec.apply(s.kv);
    reject_unused(s.kv, a.config.empty() ? "config" : a.config);
    const Track track = load_track(s.track);

    Trainer t(tc, sim, ec, track);
    try {
        t.run(a.out, [&](const EpochReport& r) {
            if (a.quiet) return;
            std::printf("epoch %3d  clone %.4f  safety %.4f  laps %2d  %s\n", r.epoch, r.imitation_loss,
                        r.safety_loss, r.eval_laps, r.eval_termination.c_str());
            std::fflush(stdout);
        });
    } catch (const NonFiniteLossError& e) {
        std::fprintf(stderr, "cabc train: %s\n", e.what());
        return 2;
    }
    const auto first = epochs_to_full_eval(t.reports(), tc.eval_laps);
    std::printf("epochs: %d\nfirst_full_eval_epoch: %s\nrun: %s\n", t.epoch(),
                first ? std::to_string(*first).c_str() : "none", a.out.c_str());
    return 0;
}

struct EvalArgs {
    std::string weights, track, obs, config;
    std::uint64_t seed = 0;
    int laps = kEvalLaps;
};

int cmd_eval(const EvalArgs& a) {
    Setup s = load_setup(a.config);
    if (!a.track.empty()) s.track = a.track;
    if (!a.obs.empty()) s.obs = a.obs;
    SimConfig sim;
    sim.apply(s.kv);
    const Track track = load_track(s.track);
    const ObsMode mode = obs_mode_from_string(s.obs);
    const Mlp net = load_weights(a.weights);
    if (net.input_size() != policy_input_dim(mode, sim) || net.output_size() != Action::kDim)
        throw Error("weights '" + a.weights + "' do not match the " + to_string(mode) + " policy input (" +
                    std::to_string(policy_input_dim(mode, sim)) + " -> 2)");
    if (a.laps < 1) throw Error("--laps must be >= 1");
    print_eval(evaluate(LearnedPolicy{&net, mode, sim, &track}, sim, track, a.seed, a.laps));
    return 0;
}

struct ReportArgs {
    std::string run, baseline, out;
};

int cmd_report(const ReportArgs& a) {
    const std::string out = a.out.empty() ? (fs::path(a.run) / "report").string() : a.out;
    std::optional<std::string> base;
    if (!a.baseline.empty()) base = a.baseline;
    for (const auto& f : emit_reports(a.run, base, out)) std::printf("%s\n", f.c_str());
    return 0;
}

struct SimArgs {
    std::string expert = "racing", track = "gp", render, config;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    int laps = 1;
};

int cmd_sim(const SimArgs& a) {
    Setup s = load_setup(a.config);
    SimConfig sim;
    ExpertConfig ec;
    ec.kind = expert_from_string(a.expert);
    sim.apply(s.kv);
    ec.apply(s.kv);
    if (a.laps < 1) throw Error("--laps must be >= 1");
    if (!(a.sigma >= 0.0)) throw Error("--sigma must be >= 0");
    sim.lap_target = a.laps;
    const Track track = load_track(a.track);
    Rng obs_rng(derive_seed(a.seed, {1})), mix_rng(derive_seed(a.seed, {2}));
    const auto expert = make_expert(ec, sim, track);
    Policy none = [](const Observation&, const VehicleState&) { return Action{}; };
    const auto pol = mix_policy(expert, none, 1.0, a.sigma, mix_rng);
    const Trajectory t = rollout(sim, track, pol, standard_start(), sim.max_steps * a.laps, obs_rng);
    std::printf("outcome: %s\ntermination: %s\nsteps: %zu\ntime: %.3f\n", to_string(t.outcome).c_str(),
                to_string(t.termination_reason).c_str(), t.samples.size(), t.samples.size() * sim.dt);
    if (!a.render.empty()) {
        std::vector<std::pair<double, double>> path;
        if (!t.samples.empty()) {
            const Pose2 p0 = track.frenet_to_cartesian(t.samples.front().x.s, t.samples.front().x.x_tran, 0.0);
            path.emplace_back(p0.x, p0.y);
        }
        for (const auto& smp : t.samples) {
            const Pose2 p = track.frenet_to_cartesian(smp.x_next.s, smp.x_next.x_tran, smp.x_next.e_psi);
            path.emplace_back(p.x, p.y);
        }
        std::ofstream os(a.render);
        if (!os) throw Error("cannot write '" + a.render + "'");
        os << render_track_xy(track, path, a.expert + " expert on " + track.name() + ", sigma_u " + svg_num(a.sigma));
        std::printf("render: %s\n", a.render.c_str());
    }
    return 0;
}

struct LabelArgs {
    std::string set = "crescent", rho = "1.0,0.5,0.25", out = "labeldemo";
    int n = 2000;
    std::uint64_t seed = 0;
    int grid = 100;
};

int cmd_labeldemo(const LabelArgs& a) {
    SyntheticSet set;
    set.kind = synthetic_from_string(a.set);
    const auto rhos = parse_doubles(a.rho);
    for (double r : rhos)
        if (!(r >= 0.0)) throw Error("--rho values must be >= 0");
    if (a.n < 1) throw Error("--n must be >= 1");
    if (a.grid < 2) throw Error("--grid must be >= 2");
    fs::create_directories(a.out);
    const auto bench = run_label_benchmark(set, static_cast<std::size_t>(a.n), static_cast<std::size_t>(a.n), rhos, a.seed);

    std::ofstream summary(fs::path(a.out) / "summary.csv");
    summary << "rho,removed,incorrect,incorrect_concave,violations,balanced_accuracy\n";
    std::printf("%-6s %8s %10s %8s %10s %8s\n", "rho", "removed", "incorrect", "concave", "violations", "bal_acc");
    for (const auto& e : bench.sweep) {
        const std::string tag = "rho" + svg_num(e.rho);
        SyntheticClfOptions opt;
        opt.seed = a.seed;
        const Mlp net = train_synthetic_classifier(bench, e, opt);
        const double acc = balanced_grid_accuracy(net, set);

        std::ofstream pts(fs::path(a.out) / ("points_" + tag + ".csv"));
        pts << "x,y,true_sdf,label,removed\n";
        std::vector<ScatterPoint> dots;
        for (const auto& p : bench.d_plus) {
            pts << csv_number(p[0]) << ',' << csv_number(p[1]) << ',' << csv_number(set.signed_distance(p)) << ",plus,0\n";
            dots.push_back({p[0], p[1], "#2ca02c"});
        }
        for (std::size_t i = 0; i < bench.d_query.size(); ++i) {
            const auto& p = bench.d_query[i];
            const bool removed = e.removed[i];
            pts << csv_number(p[0]) << ',' << csv_number(p[1]) << ',' << csv_number(set.signed_distance(p)) << ','
                << (removed ? "query" : "minus") << ',' << (removed ? 1 : 0) << '\n';
            dots.push_back({p[0], p[1], removed ? "#ff7f0e" : "#d62728"});
        }

        std::ofstream grid(fs::path(a.out) / ("grid_" + tag + ".csv"));
        grid << "x,y,p_safe,true_inside\n";
        std::vector<double> heat;
        Mat g(2, 1);
        for (int i = 0; i < a.grid; ++i)
            for (int j = 0; j < a.grid; ++j) {
                g << -set.box + (i + 0.5) * 2 * set.box / a.grid, -set.box + (j + 0.5) * 2 * set.box / a.grid;
                const double p = net.forward(g)(0, 0);
                heat.push_back(p);
                grid << csv_number(g(0, 0)) << ',' << csv_number(g(1, 0)) << ',' << csv_number(p) << ','
                     << (set.contains(g.col(0)) ? 1 : 0) << '\n';
            }
        std::ofstream svg(fs::path(a.out) / ("labels_" + tag + ".svg"));
        svg << render_scatter(a.set + ", rho " + svg_num(e.rho) + ": plus green, kept red, removed orange", set.box, dots,
                              heat, a.grid);

        summary << csv_number(e.rho) << ',' << e.n_removed << ',' << e.incorrect << ',' << e.incorrect_concave << ','
                << e.violations << ',' << csv_number(acc) << '\n';
        std::printf("%-6g %8zu %10zu %8zu %10zu %8.4f\n", e.rho, e.n_removed, e.incorrect, e.incorrect_concave,
                    e.violations, acc);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constraint-aware behavior cloning for a simulated race car"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a policy (CA or plain BC) and write a run directory");
    train->add_option("--method", ta.method, "ca or bc")->check(CLI::IsMember({"ca", "bc"}));
    train->add_option("--track", ta.track, "circle, lshaped, gp or a track file");
    train->add_option("--expert", ta.expert, "pid or racing")->check(CLI::IsMember({"pid", "racing"}));
    train->add_option("--obs", ta.obs, "full or output")->check(CLI::IsMember({"full", "output"}));
    train->add_option("--config", ta.config, "key = value file")->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "run directory")->capture_default_str();
    train->add_option("--seed", ta.seed, "master seed");
    train->add_option("--epochs", ta.epochs, "maximum epochs M");
    train->add_flag("--quiet", ta.quiet, "no per-epoch lines");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate saved policy weights over chained laps");
    eval->add_option("--weights", ea.weights, "policy.json")->required()->check(CLI::ExistingFile);
    eval->add_option("--track", ea.track, "track name or file");
    eval->add_option("--obs", ea.obs, "full or output")->check(CLI::IsMember({"full", "output"}));
    eval->add_option("--config", ea.config, "key = value file, e.g. a run's config.txt")->check(CLI::ExistingFile);
    eval->add_option("--seed", ea.seed, "evaluation seed")->capture_default_str();
    eval->add_option("--laps", ea.laps, "laps to attempt")->capture_default_str();

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "Write CSV tables and SVG charts for a run");
    report->add_option("--run", ra.run, "run directory")->required();
    report->add_option("--baseline", ra.baseline, "second run to overlay");
    report->add_option("--out", ra.out, "output directory (default RUN/report)");

    SimArgs sa;
    auto* simc = app.add_subcommand("sim", "Roll out an expert, optionally with actuation noise");
    simc->add_option("--expert", sa.expert, "pid or racing")->check(CLI::IsMember({"pid", "racing"}))->capture_default_str();
    simc->add_option("--track", sa.track, "track name or file")->capture_default_str();
    simc->add_option("--render", sa.render, "SVG output path");
    simc->add_option("--sigma", sa.sigma, "actuation noise sigma_u")->capture_default_str();
    simc->add_option("--seed", sa.seed, "seed")->capture_default_str();
    simc->add_option("--laps", sa.laps, "laps")->capture_default_str();
    simc->add_option("--config", sa.config, "key = value file")->check(CLI::ExistingFile);

    LabelArgs la;
    auto* label = app.add_subcommand("labeldemo", "Auto-labeling and safe-set estimation on a synthetic 2-D set");
    label->add_option("--set", la.set, "disk, crescent or sector")
        ->check(CLI::IsMember({"disk", "crescent", "sector"}))
        ->capture_default_str();
    label->add_option("--rho", la.rho, "comma-separated radii")->capture_default_str();
    label->add_option("--n", la.n, "points per pool")->capture_default_str();
    label->add_option("--seed", la.seed, "seed")->capture_default_str();
    label->add_option("--grid", la.grid, "classifier grid resolution")->capture_default_str();
    label->add_option("--out", la.out, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        if (*train) return cmd_train(ta);
        if (*eval) return cmd_eval(ea);
        if (*report) return cmd_report(ra);
        if (*simc) return cmd_sim(sa);
        if (*label) return cmd_labeldemo(la);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "cabc: %s\n", e.what());
        return 1;
    }
    return 1;
}
