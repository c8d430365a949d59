#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mals/conflict.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mals;

namespace {

using Vec = std::vector<double>;

// Builds task vectors with one tensor per layer ("model.layers.<l>.w").
std::vector<BasicTaskVector<double>> make_tasks(const std::vector<std::vector<Vec>>& per_task_layers) {
    std::vector<BasicTaskVector<double>> tasks;
    for (std::size_t i = 0; i < per_task_layers.size(); ++i) {
        BasicTaskVector<double> tv{"t" + std::to_string(i), {}};
        for (std::size_t l = 0; l < per_task_layers[i].size(); ++l) {
            const auto& v = per_task_layers[i][l];
            tv.deltas.insert("model.layers." + std::to_string(l) + ".w", BasicTensor<double>({v.size()}, v));
        }
        tasks.push_back(std::move(tv));
    }
    return tasks;
}

Vec random_vec(std::mt19937_64& rng, std::size_t n, double zero_prob = 0.2) {
    std::uniform_real_distribution<double> val(-2.0, 2.0), coin(0.0, 1.0);
    Vec v(n);
    for (auto& x : v) x = coin(rng) < zero_prob ? 0.0 : val(rng);
    return v;
}

} // namespace

TEST(PearsonAbs, PerfectAndAntiCorrelation) {
    const Vec x = {0.3, -1.2, 4.0, 2.5, 0.0};
    Vec neg(x.size());
    std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
    EXPECT_NEAR(pearson_abs(x, x), 1.0, 1e-15);
    EXPECT_NEAR(pearson_abs(x, neg), 1.0, 1e-15);
}

TEST(PearsonAbs, FrozenOracleValue) {
    // two-pass textbook value: |-7| / sqrt(5 * 29)
    const Vec x = {1, 2, 3, 4};
    const Vec y = {1, 2, 3, -4};
    EXPECT_NEAR(pearson_abs(x, y), 0.5813183589761798, 1e-12);
    EXPECT_NEAR(pearson_abs(x, y), oracle::pearson_abs(x, y), 1e-12);
    EXPECT_NEAR(pearson_abs(x, y), 7.0 / std::sqrt(145.0), 1e-12);
}

TEST(PearsonAbs, ZeroVarianceGivesZero) {
    EXPECT_EQ(pearson_abs(Vec{2, 2, 2}, Vec{1, 5, 3}), 0.0);
    EXPECT_EQ(pearson_abs(Vec{1, 5, 3}, Vec{0, 0, 0}), 0.0);
    EXPECT_EQ(pearson_abs(Vec{7}, Vec{3}), 0.0);
}

TEST(PearsonAbs, Errors) {
    EXPECT_THROW(pearson_abs(Vec{1, 2}, Vec{1}), ValidationError);
    EXPECT_THROW(pearson_abs(Vec{}, Vec{}), ValidationError);
}

TEST(PearsonAbs, FloatInputsAccumulateInDouble) {
    // large offset: a naive single-precision sum would lose the signal
    std::vector<float> x(200000), y(200000);
    for (std::size_t k = 0; k < x.size(); ++k) {
        x[k] = 1000.0f + static_cast<float>(k % 7);
        y[k] = 1000.0f + static_cast<float>(k % 7);
    }
    EXPECT_NEAR(pearson_abs(x, y), 1.0, 1e-12);
}

TEST(SignDisagreement, Examples) {
    const Vec x = {1.5, -2.0, 0.25, 3.0};
    Vec neg(x.size());
    std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
    EXPECT_EQ(sign_disagreement(x, neg), 1.0);
    EXPECT_EQ(sign_disagreement(x, x), 0.0);
    // two opposite-sign positions, 2 + 3 nonzeros
    EXPECT_DOUBLE_EQ(sign_disagreement(Vec{1, 0, -2}, Vec{-1, 3, 2}), 0.8);
    EXPECT_EQ(sign_disagreement(Vec{0, 0}, Vec{0, 0}), 0.0);
    EXPECT_THROW(sign_disagreement(Vec{1}, Vec{1, 2}), ValidationError);
}

TEST(ConflictOracle, RandomInstancesMatchBruteForce) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> len(1, 64);
    for (int i = 0; i < 200; ++i) {
        const auto n = len(rng);
        const Vec x = random_vec(rng, n);
        const Vec y = random_vec(rng, n);
        EXPECT_NEAR(pearson_abs(x, y), oracle::pearson_abs(x, y), 1e-12);
        EXPECT_EQ(sign_disagreement(x, y), oracle::sign_disagreement(x, y));
    }
}

TEST(ConflictProperties, SymmetryRangeAndScaleInvariance) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> len(2, 64);
    std::uniform_real_distribution<double> scale(0.01, 50.0);
    for (int i = 0; i < 200; ++i) {
        const auto n = len(rng);
        const Vec x = random_vec(rng, n);
        const Vec y = random_vec(rng, n);
        const double rho = pearson_abs(x, y);
        const double d = sign_disagreement(x, y);
        EXPECT_EQ(rho, pearson_abs(y, x));
        EXPECT_EQ(d, sign_disagreement(y, x));
        EXPECT_GE(rho, 0.0);
        EXPECT_LE(rho, 1.0);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        const double a = scale(rng);
        Vec ax(n), ay(n);
        for (std::size_t k = 0; k < n; ++k) {
            ax[k] = a * x[k];
            ay[k] = a * y[k];
        }
        EXPECT_NEAR(pearson_abs(ax, ay), rho, 1e-12);
        EXPECT_EQ(sign_disagreement(ax, ay), d);
    }
}

TEST(LayerConflict, IdenticalTasksScoreHalf) {
    const Vec a = {1.0, -2.0, 0.5, 3.0};
    const Vec b = {0.1, 0.2, -0.3, 0.4, 0.5};
    const auto tasks = make_tasks({{a, b}, {a, b}});
    const auto grouping = group_layers(tasks[0].deltas);
    const auto report = layer_conflict(tasks, grouping);
    ASSERT_EQ(report.conflict.size(), 2u);
    for (double c : report.conflict) EXPECT_NEAR(c, 0.5, 1e-15);
    ASSERT_EQ(report.pairs.size(), 1u);
    EXPECT_EQ(report.pairs[0].i, 0u);
    EXPECT_EQ(report.pairs[0].j, 1u);
}

TEST(LayerConflict, OpposedTasksScoreOne) {
    const Vec a = {1.0, -2.0, 0.5, 3.0};
    const Vec na = {-1.0, 2.0, -0.5, -3.0};
    const auto tasks = make_tasks({{a}, {na}});
    const auto report = layer_conflict(tasks, group_layers(tasks[0].deltas));
    EXPECT_NEAR(report.conflict[0], 1.0, 1e-15);
}

TEST(LayerConflict, SingleTaskHasZeroConflict) {
    const auto tasks = make_tasks({{Vec{1, -1, 2, 0}, Vec{3, 4}}});
    const auto report = layer_conflict(tasks, group_layers(tasks[0].deltas));
    EXPECT_EQ(report.conflict, (Vec{0.0, 0.0}));
    EXPECT_TRUE(report.pairs.empty());
    EXPECT_DOUBLE_EQ(report.importance[0], 1.0);
    EXPECT_DOUBLE_EQ(report.importance[1], 3.5);
}

TEST(LayerConflict, MatchesPairwiseOracleAndIsPermutationInvariant) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t num_tasks = 2 + trial % 4;
        const std::size_t num_layers = 1 + trial % 5;
        std::vector<std::vector<Vec>> raw(num_tasks);
        std::vector<std::size_t> lens(num_layers);
        for (auto& n : lens) n = 1 + rng() % 40;
        for (auto& task : raw) {
            for (std::size_t l = 0; l < num_layers; ++l) task.push_back(random_vec(rng, lens[l]));
        }
        const auto tasks = make_tasks(raw);
        const auto grouping = group_layers(tasks[0].deltas);
        const auto report = layer_conflict(tasks, grouping);
        for (std::size_t l = 0; l < num_layers; ++l) {
            // grouping orders layer.0, layer.1, ... numerically, matching raw order
            double sum = 0;
            int pairs = 0;
            for (std::size_t i = 0; i < num_tasks; ++i) {
                for (std::size_t j = i + 1; j < num_tasks; ++j) {
                    sum += 0.5 * oracle::pearson_abs(raw[i][l], raw[j][l]) +
                           0.5 * oracle::sign_disagreement(raw[i][l], raw[j][l]);
                    ++pairs;
                }
            }
            EXPECT_NEAR(report.conflict[l], sum / pairs, 1e-12);
            EXPECT_GE(report.conflict[l], 0.0);
            EXPECT_LE(report.conflict[l], 1.0);
        }
        auto permuted = tasks;
        std::shuffle(permuted.begin(), permuted.end(), rng);
        const auto report2 = layer_conflict(permuted, grouping);
        for (std::size_t l = 0; l < num_layers; ++l) {
            EXPECT_NEAR(report2.conflict[l], report.conflict[l], 1e-12);
            EXPECT_NEAR(report2.importance[l], report.importance[l], 1e-12);
        }
    }
}

TEST(LayerConflict, ThreadCountDoesNotChangeResults) {
    std::mt19937_64 rng(3);
    std::vector<std::vector<Vec>> raw(3);
    for (auto& task : raw) {
        for (int l = 0; l < 9; ++l) task.push_back(random_vec(rng, 500));
    }
    const auto tasks = make_tasks(raw);
    const auto grouping = group_layers(tasks[0].deltas);
    const auto serial = layer_conflict(tasks, grouping, 1);
    const auto parallel = layer_conflict(tasks, grouping, 4);
    EXPECT_EQ(serial.conflict, parallel.conflict);
    EXPECT_EQ(serial.importance, parallel.importance);
}

TEST(LayerConflict, GroupingMismatchIsError) {
    const auto tasks = make_tasks({{Vec{1, 2}}, {Vec{2, 1}}});
    LayerGrouping bogus{{{"layer.0", {"model.layers.0.w", "extra"}}}};
    EXPECT_THROW(layer_conflict(tasks, bogus), ValidationError);
    EXPECT_THROW(layer_conflict(std::vector<BasicTaskVector<double>>{}, bogus), ValidationError);
    auto uneven = make_tasks({{Vec{1, 2}}, {Vec{2, 1, 3}}});
    EXPECT_THROW(layer_conflict(uneven, group_layers(uneven[0].deltas)), ValidationError);
}

TEST(LayerImportance, Examples) {
    const auto zeros = make_tasks({{Vec{0, 0}}, {Vec{0, 0}}});
    EXPECT_EQ(layer_importance(zeros, group_layers(zeros[0].deltas)), (Vec{0.0}));

    const auto one = make_tasks({{Vec{1, -1, 2, 0}}});
    EXPECT_DOUBLE_EQ(layer_importance(one, group_layers(one[0].deltas))[0], 1.0);

    const auto two = make_tasks({{Vec{1, -1}, Vec{4}}, {Vec{3, 3}, Vec{-2}}});
    const auto m = layer_importance(two, group_layers(two[0].deltas));
    EXPECT_DOUBLE_EQ(m[0], (1.0 + 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(m[1], (4.0 + 2.0) / 2.0);
}

TEST(LayerImportance, HomogeneousUnderScaling) {
    std::mt19937_64 rng(12);
    std::vector<std::vector<Vec>> raw(3), scaled(3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (int l = 0; l < 4; ++l) {
            raw[i].push_back(random_vec(rng, 30));
            Vec s = raw[i].back();
            for (auto& v : s) v *= 3.0;
            scaled[i].push_back(s);
        }
    }
    const auto t1 = make_tasks(raw);
    const auto t3 = make_tasks(scaled);
    const auto g = group_layers(t1[0].deltas);
    const auto m1 = layer_importance(t1, g);
    const auto m3 = layer_importance(t3, g);
    for (std::size_t l = 0; l < m1.size(); ++l) EXPECT_NEAR(m3[l], 3.0 * m1[l], 1e-12);
    // same numbers come out of layer_conflict
    EXPECT_EQ(layer_conflict(t1, g).importance, m1);
}
