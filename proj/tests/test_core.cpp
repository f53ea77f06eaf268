#include <cmath>
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cabc/config.hpp"
#include "cabc/core.hpp"
#include "cabc/dataset.hpp"

using namespace cabc;

namespace {

Sample make_sample(double base, std::size_t k_preview = 4) {
    Sample s;
    s.x = {base + 0.1, -0.02, 0.3, base, 0.05, -0.01};
    s.x_next = {base + 0.2, -0.01, 0.31, base + 0.1, 0.06, -0.02};
    s.y.values.assign(3 + k_preview, base / 3.0);
    s.u_expert = {0.5, -1.0 / 3.0};
    s.u_applied = {0.45, -0.3};
    return s;
}

Trajectory make_traj(int n, Outcome o, double base = 0.0) {
    Trajectory t;
    t.outcome = o;
    t.termination_reason = o == Outcome::Success ? Termination::ReachedTarget : Termination::ConstraintViolation;
    for (int k = 0; k < n; ++k) {
        Sample s = make_sample(base + 0.1 * k);
        if (k > 0) s.x = t.samples.back().x_next;
        t.samples.push_back(s);
    }
    return t;
}

std::filesystem::path tmpdir() {
    auto p = std::filesystem::path(CABC_TEST_TMP) / "core";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(VehicleState, WrappedSKeepsUnwrappedValue) {
    VehicleState x;
    x.s = 25.5;
    EXPECT_DOUBLE_EQ(x.wrapped_s(10.0), 5.5);
    EXPECT_DOUBLE_EQ(x.s, 25.5);
    x.s = -0.5;
    EXPECT_DOUBLE_EQ(x.wrapped_s(10.0), 9.5);
}

TEST(VehicleState, ArrayRoundTripAndFiniteness) {
    VehicleState x{1, 2, 3, 4, 5, 6};
    const auto a = x.to_array();
    EXPECT_EQ(VehicleState::from_array(a), x);
    EXPECT_TRUE(x.finite());
    x.e_psi = std::nan("");
    EXPECT_FALSE(x.finite());
    std::vector<double> bad{1, 2};
    EXPECT_THROW(VehicleState::from_array(bad), Error);
}

TEST(Action, ClampingDefinesTheInputSet) {
    Action u{1.5, -2.0};
    EXPECT_FALSE(u.in_bounds());
    EXPECT_EQ(u.clamped(), (Action{1.0, -1.0}));
    EXPECT_TRUE((Action{1.0, -1.0}).in_bounds());
}

TEST(Partition, SuccessAndFailureStatesAreSeparated) {
    std::vector<Trajectory> trajs{make_traj(10, Outcome::Success), make_traj(4, Outcome::Failure, 5.0)};
    const auto pool = partition_trajectories(trajs);
    EXPECT_EQ(pool.d_plus.size(), 10u);
    EXPECT_EQ(pool.d_query.size(), 4u);
    EXPECT_TRUE(pool.d_minus.empty());
    EXPECT_EQ(pool.d_plus.front(), trajs[0].samples.front().x);
    EXPECT_EQ(pool.d_query.back(), trajs[1].samples.back().x);
}

TEST(Partition, EmptyInputGivesEmptyPool) {
    const auto pool = partition_trajectories(std::vector<Trajectory>{});
    EXPECT_TRUE(pool.d_plus.empty() && pool.d_query.empty() && pool.d_minus.empty());
}

TEST(Partition, OnlySuccessesLeaveQueryEmpty) {
    std::vector<Trajectory> trajs{make_traj(3, Outcome::Success), make_traj(2, Outcome::Success),
                                  make_traj(5, Outcome::Success)};
    const auto pool = partition_trajectories(trajs);
    EXPECT_EQ(pool.d_plus.size(), 10u);
    EXPECT_TRUE(pool.d_query.empty());
}

TEST(Partition, RejectsEmptyOrInconsistentTrajectories) {
    std::vector<Trajectory> empty{Trajectory{}};
    EXPECT_THROW(partition_trajectories(empty), Error);
    auto bad = make_traj(2, Outcome::Success);
    bad.termination_reason = Termination::Timeout;
    std::vector<Trajectory> v{bad};
    EXPECT_THROW(partition_trajectories(v), Error);
}

TEST(Partition, ExhaustiveAndDisjointProperty) {
    for (int seed = 0; seed < 20; ++seed) {
        std::vector<Trajectory> trajs;
        std::size_t total = 0, succ = 0;
        for (int i = 0; i < 1 + seed % 5; ++i) {
            const int n = 1 + (seed * 7 + i * 3) % 9;
            const bool s = (seed + i) % 2 == 0;
            trajs.push_back(make_traj(n, s ? Outcome::Success : Outcome::Failure, 100.0 * i + seed));
            total += static_cast<std::size_t>(n);
            succ += s ? static_cast<std::size_t>(n) : 0;
        }
        const auto pool = partition_trajectories(trajs);
        EXPECT_EQ(pool.d_plus.size() + pool.d_query.size(), total);
        EXPECT_EQ(pool.d_plus.size(), succ);
    }
}

TEST(Dataset, TrajectoryRoundTripIsBitExact) {
    auto t0 = make_traj(5, Outcome::Success, 0.123456789012345678);
    auto t1 = make_traj(3, Outcome::Failure, 1e-300);
    t1.termination_reason = Termination::Singularity;
    t0.samples[1].safe_label = 1;
    t1.samples[2].safe_label = 0;
    t1.samples[0].x.v_tran = -0.0;
    t1.samples[0].x.omega_psi = 5e-324;
    std::vector<Trajectory> trajs{t0, t1};
    const auto path = (tmpdir() / "roundtrip.jsonl").string();
    save_dataset(trajs, path);
    const auto back = load_dataset(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back, trajs);
    EXPECT_TRUE(std::signbit(back[1].samples[0].x.v_tran));
}

TEST(Dataset, LineFormatHasDocumentedFields) {
    std::ostringstream os;
    write_trajectory(os, make_traj(1, Outcome::Failure), 7);
    const std::string text = os.str();
    EXPECT_NE(text.find("\"kind\":\"traj\""), std::string::npos);
    EXPECT_NE(text.find("\"traj_id\":7"), std::string::npos);
    EXPECT_NE(text.find("\"outcome\":\"failure\""), std::string::npos);
    EXPECT_NE(text.find("\"reason\":\"constraint_violation\""), std::string::npos);
    EXPECT_NE(text.find("\"kind\":\"sample\""), std::string::npos);
    EXPECT_NE(text.find("\"safe\":null"), std::string::npos);
}

TEST(Dataset, TruncatedLastLineNamesTheLine) {
    std::ostringstream os;
    write_trajectories(os, {make_traj(3, Outcome::Success)});
    std::string text = os.str();
    text.resize(text.size() - 25);
    std::istringstream is(text);
    try {
        read_trajectories(is);
        FAIL() << "expected a dataset error";
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.line(), 4u);
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
    }
}

TEST(Dataset, BadFieldIsReported) {
    std::istringstream is(
        "{\"kind\":\"traj\",\"traj_id\":0,\"outcome\":\"success\",\"reason\":\"reached_target\"}\n"
        "{\"kind\":\"sample\",\"traj_id\":0,\"k\":0,\"x\":[1,2,3],\"y\":[],\"u_expert\":[0,0],\"u_applied\":[0,0],"
        "\"x_next\":[0,0,0,0,0,0],\"safe\":null}\n");
    try {
        read_trajectories(is);
        FAIL() << "expected a dataset error";
    } catch (const DatasetError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.field(), "x");
    }
}

TEST(Dataset, EmptyFileIsEmptyDataset) {
    const auto path = (tmpdir() / "empty.jsonl").string();
    { std::ofstream os(path); }
    EXPECT_TRUE(load_dataset(path).empty());
    EXPECT_EQ(load_pool(path), LabeledPool{});
}

TEST(Dataset, PoolRoundTrip) {
    LabeledPool pool;
    pool.d_plus = {{1, 2, 3, 4, 5, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}};
    pool.d_query = {{-1, 1e-17, 3, 4, 5, 6}};
    pool.d_minus = pool.d_query;
    const auto path = (tmpdir() / "pool.jsonl").string();
    save_dataset(pool, path);
    EXPECT_EQ(load_pool(path), pool);
}

TEST(Config, ParsesKeyValuesAndComments) {
    std::istringstream is("# comment\n dt = 0.05 \nseed=7 # trailing\nflag = true\n");
    const auto kv = KeyValues::parse(is);
    double dt = 0.1;
    int seed = 0;
    bool flag = false;
    kv.get("dt", dt);
    kv.get("seed", seed);
    kv.get("flag", flag);
    EXPECT_DOUBLE_EQ(dt, 0.05);
    EXPECT_EQ(seed, 7);
    EXPECT_TRUE(flag);
    double untouched = 3.0;
    kv.get("missing", untouched);
    EXPECT_EQ(untouched, 3.0);
    EXPECT_TRUE(kv.unused().empty());
}

TEST(Config, RejectsMalformedLinesAndValues) {
    std::istringstream bad("no equals sign\n");
    EXPECT_THROW(KeyValues::parse(bad), Error);
    std::istringstream is("dt = fast\n");
    const auto kv = KeyValues::parse(is);
    double dt = 0;
    EXPECT_THROW(kv.get("dt", dt), Error);
}

TEST(Config, FloatsAcceptNanAndIntsRejectTrailingText) {
    std::istringstream is("kp = nan\nbig = inf\nn = 3x\n");
    const auto kv = KeyValues::parse(is);
    double kp = 0, big = 0;
    int n = 0;
    kv.get("kp", kp);
    kv.get("big", big);
    EXPECT_TRUE(std::isnan(kp));
    EXPECT_TRUE(std::isinf(big));
    EXPECT_THROW(kv.get("n", n), Error);
}
