#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "spiketest/montecarlo.hpp"

using namespace spiketest;

namespace {

Scenario small(std::vector<double> ts, double c, int reps, std::uint64_t seed) {
    Scenario s;
    s.p = 60;
    s.n = 120;
    s.c = c;
    s.ts = std::move(ts);
    s.reps = reps;
    s.master_seed = seed;
    s.procedure = ProcedureSet::both;
    return s;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(ParallelFor, CoversEveryIndexOnce) {
    for (unsigned w : {1u, 2u, 3u, 8u}) {
        std::vector<int> hits(37, 0);
        parallel_for(37, w, [&](int i) { ++hits[i]; });
        for (int h : hits) EXPECT_EQ(h, 1);
    }
    EXPECT_THROW(parallel_for(10, 3, [](int i) { if (i == 7) throw Error("boom"); }), Error);
}

TEST(Scenario, Validation) {
    EXPECT_THROW(small({10.0, 5.0}, 5.0, 0, 1).validate(), ValidationError);
    EXPECT_THROW(small({}, 5.0, 10, 1).validate(), ValidationError);
    EXPECT_THROW(small({10.0, 5.0}, 1.2, 10, 1).validate(), ValidationError);
    EXPECT_NO_THROW(small({10.0, 5.0}, 5.0, 10, 1).validate());
    EXPECT_EQ(small({10.0, 5.0}, 5.0, 10, 1).tested_index(), 2);
}

TEST(RunScenario, StandardErrorFormula) {
    const ScenarioReport r = run_scenario(small({10.0, 4.0}, 5.0, 60, 3), 1);
    ASSERT_EQ(r.procedures.size(), 2u);
    for (const auto& pr : r.procedures) {
        EXPECT_EQ(pr.reps + pr.failures, 60);
        EXPECT_DOUBLE_EQ(pr.rejection_rate, static_cast<double>(pr.rejections) / pr.reps);
        EXPECT_DOUBLE_EQ(pr.mc_standard_error,
                         std::sqrt(pr.rejection_rate * (1.0 - pr.rejection_rate) / pr.reps));
    }
}

TEST(RunScenario, IndependentOfWorkerCount) {
    const Scenario s = small({10.0, 5.0}, 5.0, 40, 17);
    const ScenarioReport a = run_scenario(s, 1), b = run_scenario(s, 3);
    for (std::size_t k = 0; k < a.procedures.size(); ++k) {
        EXPECT_EQ(a.procedures[k].rejections, b.procedures[k].rejections);
        EXPECT_EQ(a.procedures[k].mean_statistic, b.procedures[k].mean_statistic);
        EXPECT_EQ(a.procedures[k].mean_critical_value, b.procedures[k].mean_critical_value);
    }
    EXPECT_EQ(a.mean_estimated_alphas, b.mean_estimated_alphas);
}

TEST(RunScenario, SeedChangesDraws) {
    const ScenarioReport a = run_scenario(small({10.0, 5.0}, 5.0, 30, 1), 1);
    const ScenarioReport b = run_scenario(small({10.0, 5.0}, 5.0, 30, 2), 1);
    EXPECT_NE(a.procedures[0].mean_statistic, b.procedures[0].mean_statistic);
}

TEST(RunScenario, EstimatorConsistency) {
    Scenario s = small({10.0}, 5.0, 150, 23);
    s.p = 100;
    s.n = 200;
    s.procedure = ProcedureSet::corrected;
    const ScenarioReport r = run_scenario(s, 2);
    EXPECT_LT(std::abs(r.mean_estimated_alphas[0] - 20.0) / 20.0, 0.03);
    EXPECT_LT(std::abs(r.mean_estimated_ts[0] - 10.0) / 10.0, 0.04);
}

TEST(MomentOracle, ShapeAndSymmetry) {
    const SpikedModel model = SpikedModel::from_spikes(
        {12.0, 8.0}, {}, BulkSpec::diagonal(DiscreteMeasure::point_mass(1.0)), 0.5, 3.0, 100, 50);
    const MomentReport r = moment_oracle(model, 100, EntryDistribution::gaussian(), 50, 4, 2);
    EXPECT_EQ(r.reps, 50);
    ASSERT_EQ(r.cov.rows(), 3);
    EXPECT_TRUE(r.cov.isApprox(r.cov.transpose()));
    EXPECT_GT(r.cov(0, 0), 0.0);
    EXPECT_GT(r.cov_se(0, 0), 0.0);
    EXPECT_THROW(moment_oracle(model, 100, EntryDistribution::gaussian(), 2, 4), ValidationError);
}

TEST(JackknifeCov, MatchesBruteForce) {
    Eigen::VectorXd a(9), b(9);
    a << 1, 3, 2, 5, 4, 8, 7, 6, 9;
    b << 2, 1, 4, 3, 6, 5, 9, 7, 8;
    const auto jk = detail::jackknife_cov(a, b);
    auto cov = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
        return ((x.array() - x.mean()) * (y.array() - y.mean())).sum() / (x.size() - 1.0);
    };
    std::vector<double> loo;
    for (int i = 0; i < 9; ++i) {
        Eigen::VectorXd xa(8), xb(8);
        for (int j = 0, k = 0; j < 9; ++j)
            if (j != i) xa(k) = a(j), xb(k) = b(j), ++k;
        loo.push_back(cov(xa, xb));
    }
    double mean = 0.0;
    for (double v : loo) mean += v / 9.0;
    double se = 0.0;
    for (double v : loo) se += (v - mean) * (v - mean);
    se = std::sqrt(8.0 / 9.0 * se);
    EXPECT_NEAR(jk.cov.value, cov(a, b), 1e-12);
    EXPECT_NEAR(jk.cov.se, se, 1e-12);
}

TEST(TableCsv, EmptyListWritesHeader) {
    const auto path = (std::filesystem::temp_directory_path() / "spiketest_empty_table.csv").string();
    table_runner({}, path, 1);
    EXPECT_EQ(slurp(path), "p,n,c,procedure,rate,se,reps,seed,failures\n");
    std::remove(path.c_str());
}

TEST(TableCsv, RowsAndColumns) {
    std::vector<Scenario> list = {small({10.0, 5.0}, 5.0, 12, 9), small({10.0}, 4.0, 12, 9)};
    list[1].procedure = ProcedureSet::corrected;
    std::vector<ScenarioReport> reports;
    for (const auto& s : list) reports.push_back(run_scenario(s, 1));
    std::ostringstream os;
    write_table_csv(os, reports);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "p,n,c,t1,t2,procedure,rate,se,reps,seed,failures");
    int rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10) << line;
    }
    EXPECT_EQ(rows, 3);
    EXPECT_NE(os.str().find("60,120,4,10,,corrected,"), std::string::npos);
}
