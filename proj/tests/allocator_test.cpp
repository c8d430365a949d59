#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mals/allocator.hpp"
#include "oracles.hpp"

using namespace mals;

namespace {

using Vec = std::vector<double>;

double mean(const Vec& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

ConflictReport report_of(const Vec& c, const Vec& m) {
    ConflictReport r;
    for (std::size_t l = 0; l < c.size(); ++l) r.layer_ids.push_back("layer." + std::to_string(l));
    r.conflict = c;
    r.importance = m;
    return r;
}

} // namespace

TEST(MinMaxNormalize, Examples) {
    EXPECT_EQ(min_max_normalize(Vec{1, 2, 3}), (Vec{0, 0.5, 1}));
    EXPECT_EQ(min_max_normalize(Vec{7, 7, 7}), (Vec{0, 0, 0}));
    EXPECT_EQ(min_max_normalize(Vec{4}), (Vec{0}));
    const auto n = min_max_normalize(Vec{-2, 0, 6});
    EXPECT_DOUBLE_EQ(n[0], 0.0);
    EXPECT_DOUBLE_EQ(n[1], 0.25);
    EXPECT_DOUBLE_EQ(n[2], 1.0);
    EXPECT_THROW(min_max_normalize(Vec{}), ValidationError);
}

TEST(MinMaxNormalize, MatchesOracle) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> len(1, 64);
    std::uniform_real_distribution<double> val(-100, 100);
    for (int i = 0; i < 200; ++i) {
        Vec v(static_cast<std::size_t>(len(rng)));
        for (auto& x : v) x = val(rng);
        const auto got = min_max_normalize(v);
        const auto want = oracle::min_max_normalize(v);
        for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
    }
}

TEST(AllocationScores, Examples) {
    EXPECT_EQ(allocation_scores(Vec{0.3, 0.9}, Vec{0.5, 0.1}, 0, 0), (Vec{0, 0}));
    EXPECT_EQ(allocation_scores(Vec{1, 0}, Vec{0, 1}, 1, 1), (Vec{1, -1}));
    EXPECT_NEAR(allocation_scores(Vec{0.5}, Vec{0.2}, 2, 1)[0], 0.8, 1e-15);
    EXPECT_THROW(allocation_scores(Vec{1}, Vec{1, 2}, 1, 1), ValidationError);
}

TEST(SoftmaxWeights, Examples) {
    for (double w : softmax_weights(Vec{0.3, 0.3, 0.3, 0.3})) EXPECT_DOUBLE_EQ(w, 0.25);
    const auto w = softmax_weights(Vec{std::log(2.0), 0.0});
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
    EXPECT_THROW(softmax_weights(Vec{}), ValidationError);
    EXPECT_THROW(softmax_weights(Vec{1, NAN}), ValidationError);
}

TEST(SoftmaxWeights, ShiftInvariantPositiveAndNormalized) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> val(-3, 3), shift(-50, 50);
    for (int i = 0; i < 100; ++i) {
        Vec r(1 + i % 40);
        for (auto& x : r) x = val(rng);
        const auto w = softmax_weights(r);
        Vec shifted = r;
        const double c = shift(rng);
        for (auto& x : shifted) x += c;
        const auto ws = softmax_weights(shifted);
        const auto wo = oracle::softmax(r);
        double sum = 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            EXPECT_GT(w[k], 0.0);
            EXPECT_NEAR(w[k], ws[k], 1e-12);
            EXPECT_NEAR(w[k], wo[k], 1e-12);
            sum += w[k];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(InitialSparsity, Examples) {
    EXPECT_EQ(initial_sparsity(Vec{0.5, 0.5}, 0.1, 0.9), (Vec{0.5, 0.5}));
    EXPECT_EQ(initial_sparsity(Vec{1.0}, 0.2, 0.8), (Vec{0.8}));
    const auto s = initial_sparsity(Vec{0.75, 0.25}, 0.0, 0.4);
    EXPECT_NEAR(s[0], 0.3, 1e-15);
    EXPECT_NEAR(s[1], 0.1, 1e-15);
    EXPECT_THROW(initial_sparsity(Vec{0.5}, 0.6, 0.4), ValidationError);
}

TEST(ProjectToBudget, FixedPointTakesOneIteration) {
    const auto p = project_to_budget(Vec{0.3, 0.7}, 0.5, 0.1, 0.9, 1e-6, 100);
    EXPECT_EQ(p.s, (Vec{0.3, 0.7}));
    EXPECT_EQ(p.iterations, 1);
    EXPECT_TRUE(p.converged);
}

TEST(ProjectToBudget, SingleAffineShift) {
    const auto p = project_to_budget(Vec{0.1, 0.1}, 0.5, 0.1, 0.9, 1e-6, 100);
    EXPECT_NEAR(p.s[0], 0.5, 1e-12);
    EXPECT_NEAR(p.s[1], 0.5, 1e-12);
    EXPECT_TRUE(p.converged);
    EXPECT_EQ(p.iterations, 2); // shift, then the convergence check
}

TEST(ProjectToBudget, FreeSetRedistribution) {
    // clip([0.85, 0.15] + 0.3) = [0.9, 0.45]; F = {1}; shift 0.25 -> [0.9, 0.7]
    const auto p = project_to_budget(Vec{0.85, 0.15}, 0.8, 0.1, 0.9, 1e-6, 100);
    EXPECT_EQ(p.s[0], 0.9);
    EXPECT_NEAR(p.s[1], 0.7, 1e-12);
    EXPECT_TRUE(p.converged);
    EXPECT_EQ(p.iterations, 2);
}

TEST(ProjectToBudget, SecondIterationRecoversFromSaturation) {
    const auto p = project_to_budget(Vec{0.1, 0.4, 0.8}, 0.85, 0.1, 0.9, 1e-6, 100);
    EXPECT_TRUE(p.converged);
    EXPECT_NEAR(p.s[0], 0.75, 1e-12);
    EXPECT_EQ(p.s[1], 0.9);
    EXPECT_EQ(p.s[2], 0.9);
}

TEST(ProjectToBudget, Preconditions) {
    EXPECT_THROW(project_to_budget(Vec{0.5}, 0.95, 0.1, 0.9, 1e-6, 10), ValidationError);
    EXPECT_THROW(project_to_budget(Vec{0.05}, 0.5, 0.1, 0.9, 1e-6, 10), ValidationError);
    EXPECT_THROW(project_to_budget(Vec{NAN}, 0.5, 0.1, 0.9, 1e-6, 10), ValidationError);
    EXPECT_THROW(project_to_budget(Vec{}, 0.5, 0.1, 0.9, 1e-6, 10), ValidationError);
    EXPECT_THROW(project_to_budget(Vec{0.5}, 0.5, 0.1, 0.9, 0.0, 10), ValidationError);
}

TEST(ProjectToBudget, ReportsNonConvergenceAtIterationCap) {
    // shift -> [0.5167, 0.8167, 0.9]; redistribution saturates layer 1 -> mean 0.825
    const auto p = project_to_budget(Vec{0.1, 0.4, 0.8}, 0.85, 0.1, 0.9, 1e-6, 1);
    EXPECT_EQ(p.iterations, 1);
    EXPECT_FALSE(p.converged);
    EXPECT_NEAR(mean(p.s), 0.825, 1e-12);
    for (double v : p.s) {
        EXPECT_GE(v, 0.1);
        EXPECT_LE(v, 0.9);
    }
}

TEST(Allocate, ZeroWeightsGiveUniformTarget) {
    AllocationConfig cfg;
    cfg.alpha = 0;
    cfg.beta = 0;
    cfg.s_target = 0.37;
    const auto res = allocate(report_of({0.9, 0.1, 0.5, 0.2}, {3, 1, 2, 9}), cfg);
    for (double s : res.s_final) EXPECT_NEAR(s, 0.37, 1e-9);
    EXPECT_TRUE(res.converged);
}

TEST(Allocate, CollapsedBoundsForceTarget) {
    AllocationConfig cfg;
    cfg.s_min = cfg.s_max = cfg.s_target = 0.4;
    const auto res = allocate(report_of({0.9, 0.1, 0.5}, {1, 2, 3}), cfg);
    for (double s : res.s_final) EXPECT_EQ(s, 0.4);
    EXPECT_EQ(res.iterations, 1);
    EXPECT_TRUE(res.converged);
}

TEST(Allocate, ThreeLayerComposedOracleTrace) {
    AllocationConfig cfg;
    cfg.alpha = 1;
    cfg.beta = 0;
    const auto res = allocate(report_of({0.9, 0.1, 0.5}, {0.1, 0.1, 0.1}), cfg);

    // chain of the test-only oracles
    const auto c_hat = oracle::min_max_normalize({0.9, 0.1, 0.5});
    const auto w = oracle::softmax(c_hat);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_NEAR(res.c_hat[l], c_hat[l], 1e-12);
        EXPECT_EQ(res.m_hat[l], 0.0);
        EXPECT_NEAR(res.w[l], w[l], 1e-12);
        EXPECT_NEAR(res.s_initial[l], 0.1 + 0.8 * w[l], 1e-12);
    }
    // frozen values from an independent trace of the projection rule
    EXPECT_NEAR(res.s_final[0], 0.6385176461778566, 1e-9);
    EXPECT_NEAR(res.s_final[1], 0.38239231191401135, 1e-9);
    EXPECT_NEAR(res.s_final[2], 0.479090041908132, 1e-9);
    EXPECT_EQ(res.iterations, 2);
    EXPECT_GT(res.s_final[0], res.s_final[2]);
    EXPECT_GT(res.s_final[2], res.s_final[1]);
}

TEST(Allocate, RejectsBadConfig) {
    const auto r = report_of({0.1, 0.2}, {1, 1});
    AllocationConfig cfg;
    cfg.s_target = 0.95;
    EXPECT_THROW(allocate(r, cfg), ValidationError);
    cfg = {};
    cfg.alpha = -1;
    EXPECT_THROW(allocate(r, cfg), ValidationError);
    cfg = {};
    cfg.max_iterations = 0;
    EXPECT_THROW(allocate(r, cfg), ValidationError);
    EXPECT_THROW(allocate(ConflictReport{}, AllocationConfig{}), ValidationError);
}

TEST(AllocateProperties, BudgetBoxAndIterationCount) {
    std::mt19937_64 rng(1000);
    std::uniform_int_distribution<int> layers(2, 64);
    std::uniform_real_distribution<double> unit(0, 1);
    int within_ten = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto L = static_cast<std::size_t>(layers(rng));
        Vec c(L), m(L);
        for (auto& x : c) x = unit(rng);
        for (auto& x : m) x = unit(rng);
        AllocationConfig cfg;
        cfg.s_target = cfg.s_min + unit(rng) * (cfg.s_max - cfg.s_min);
        const auto res = allocate(report_of(c, m), cfg);
        ASSERT_TRUE(res.converged) << "instance " << i;
        EXPECT_LT(std::fabs(mean(res.s_final) - cfg.s_target), cfg.epsilon);
        EXPECT_LE(res.iterations, cfg.max_iterations);
        within_ten += res.iterations <= 10;
        double wsum = 0;
        for (std::size_t l = 0; l < L; ++l) {
            EXPECT_GE(res.s_final[l], cfg.s_min);
            EXPECT_LE(res.s_final[l], cfg.s_max);
            EXPECT_GT(res.w[l], 0.0);
            wsum += res.w[l];
        }
        EXPECT_NEAR(wsum, 1.0, 1e-12);
    }
    EXPECT_GE(within_ten, 990);
}

TEST(AllocateProperties, MonotoneInConflictWhenBetaIsZero) {
    std::mt19937_64 rng(55);
    std::uniform_int_distribution<int> layers(2, 32);
    std::uniform_real_distribution<double> unit(0, 1);
    for (int i = 0; i < 300; ++i) {
        const auto L = static_cast<std::size_t>(layers(rng));
        Vec c(L), m(L);
        for (auto& x : c) x = unit(rng);
        for (auto& x : m) x = unit(rng);
        AllocationConfig cfg;
        cfg.beta = 0;
        cfg.alpha = 1 + 9 * unit(rng); // sharper allocations saturate more often
        cfg.s_target = 0.1 + 0.8 * unit(rng);
        const auto res = allocate(report_of(c, m), cfg);
        for (std::size_t a = 0; a < L; ++a) {
            for (std::size_t b = 0; b < L; ++b) {
                if (c[a] > c[b]) {
                    const bool saturated_tie = res.s_final[a] == res.s_final[b] &&
                                               (res.s_final[a] == cfg.s_min || res.s_final[a] == cfg.s_max);
                    EXPECT_TRUE(res.s_final[a] > res.s_final[b] || saturated_tie)
                        << "instance " << i << " layers " << a << "," << b;
                }
            }
        }
    }
}

TEST(AllocateProperties, ShiftInvarianceOfScores) {
    // Adding a constant to r (here via alpha*c_hat with a constant offset in
    // the scores) leaves w, s_initial and s_final unchanged.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> unit(0, 1);
    for (int i = 0; i < 100; ++i) {
        Vec r(2 + i % 30);
        for (auto& x : r) x = 2 * unit(rng) - 1;
        Vec shifted = r;
        for (auto& x : shifted) x += 5.5;
        const auto w1 = softmax_weights(r);
        const auto w2 = softmax_weights(shifted);
        const auto s1 = initial_sparsity(w1, 0.1, 0.9);
        const auto s2 = initial_sparsity(w2, 0.1, 0.9);
        const auto p1 = project_to_budget(s1, 0.6, 0.1, 0.9, 1e-6, 100);
        const auto p2 = project_to_budget(s2, 0.6, 0.1, 0.9, 1e-6, 100);
        for (std::size_t l = 0; l < r.size(); ++l) {
            EXPECT_NEAR(w1[l], w2[l], 1e-12);
            EXPECT_NEAR(s1[l], s2[l], 1e-12);
            EXPECT_NEAR(p1.s[l], p2.s[l], 1e-12);
        }
    }
}
