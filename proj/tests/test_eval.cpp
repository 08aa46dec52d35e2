#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "autofas/eval.hpp"
#include "oracles.hpp"

using namespace autofas;

TEST(Auc, Examples) {
    EXPECT_EQ(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
    EXPECT_EQ(auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1, 0}), 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), UndefinedMetricError);
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{0, 1}), DimensionError);
}

TEST(Auc, EqualsPairwiseOracleExactly) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 200;
        std::vector<double> s(n);
        std::vector<int> y(n);
        // Coarse scores so ties are common.
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 17) / 4.0;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(auc(s, y), oracle::pairwise_auc(s, y)) << "trial " << trial;
    }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    std::vector<double> s(300), t(300);
    std::vector<int> y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = z(rng);
        t[i] = std::exp(3.0 * s[i]) - 7.0;
        y[i] = s[i] + z(rng) > 0 ? 1 : 0;
    }
    EXPECT_EQ(auc(s, y), auc(t, y));
}

namespace {

QueryGroup group(std::uint64_t id, std::vector<double> pre, std::vector<double> teacher) {
    QueryGroup g;
    g.query_id = id;
    g.labels.assign(pre.size(), 0);
    g.pre_scores = std::move(pre);
    g.teacher_scores = std::move(teacher);
    return g;
}

// Manual oracle: explicit sorted index lists and a counted intersection.
double manual_recall(const std::vector<QueryGroup>& groups, std::size_t k, std::size_t m) {
    double total = 0.0;
    for (const auto& g : groups) {
        auto rank = [](const std::vector<double>& s, std::size_t n) {
            std::vector<std::pair<double, std::size_t>> v;
            for (std::size_t i = 0; i < s.size(); ++i) v.push_back({-s[i], i});
            std::sort(v.begin(), v.end());
            std::set<std::size_t> out;
            for (std::size_t i = 0; i < n; ++i) out.insert(v[i].second);
            return out;
        };
        const auto top_teacher = rank(g.teacher_scores, k);
        const auto top_pre = rank(g.pre_scores, m);
        std::size_t hits = 0;
        for (auto i : top_teacher) hits += top_pre.count(i);
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return total / static_cast<double>(groups.size());
}

}  // namespace

TEST(Recall, PerfectAlignment) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u;
    std::vector<QueryGroup> groups;
    for (std::uint64_t q = 0; q < 4; ++q) {
        std::vector<double> s(12);
        for (auto& v : s) v = u(rng);
        groups.push_back(group(q, s, s));
    }
    for (std::size_t k = 1; k <= 12; ++k)
        for (std::size_t m = k; m <= 12; ++m) EXPECT_EQ(recall_alignment(groups, k, m), 1.0);
}

TEST(Recall, ReversedOrderTopOne) {
    const auto g = group(0, {1, 2, 3, 4}, {4, 3, 2, 1});
    EXPECT_EQ(recall_alignment({g}, 1, 1), 0.0);
}

TEST(Recall, EqualsManualSetOracle) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<QueryGroup> groups;
        for (std::uint64_t q = 0; q < 5; ++q) {
            std::vector<double> pre(30), teacher(30);
            for (auto& v : pre) v = u(rng);
            for (auto& v : teacher) v = u(rng);
            groups.push_back(group(q, pre, teacher));
        }
        const std::size_t k = 1 + rng() % 10, m = k + rng() % 10;
        EXPECT_EQ(recall_alignment(groups, k, m), manual_recall(groups, k, m));
    }
}

TEST(Recall, TiesBreakToLowerIndex) {
    // Teacher's top-1 is item 0 (tie with item 2); pre's top-1 is item 0 as well.
    const auto g = group(0, {5, 5, 1}, {7, 1, 7});
    EXPECT_EQ(recall_alignment({g}, 1, 1), 1.0);
}

TEST(Recall, RejectsBadSizes) {
    const auto g = group(0, {1, 2, 3}, {1, 2, 3});
    EXPECT_THROW(recall_alignment({g}, 4, 4), ParameterError);
    EXPECT_THROW(recall_alignment({g}, 2, 1), ParameterError);
    EXPECT_THROW(recall_alignment({g}, 0, 1), ParameterError);
    EXPECT_THROW(recall_alignment({}, 1, 1), ParameterError);
}

TEST(GroupByQuery, GroupsInQueryOrder) {
    std::vector<std::uint64_t> q{3, 1, 3, 1};
    std::vector<double> pre{0.1, 0.2, 0.3, 0.4}, teacher{1, 2, 3, 4};
    std::vector<int> labels{1, 0, 0, 1};
    const auto groups = group_by_query(q, pre, teacher, labels);
    ASSERT_EQ(groups.size(), 2u);
    EXPECT_EQ(groups[0].query_id, 1u);
    EXPECT_EQ(groups[0].pre_scores, (std::vector<double>{0.2, 0.4}));
    EXPECT_EQ(groups[1].teacher_scores, (std::vector<double>{1, 3}));
}

TEST(MetricsCsv, Header) {
    std::ostringstream out;
    write_metrics_csv(out, {{"auc", "prerank", 0.75}});
    EXPECT_EQ(out.str(), "metric,name,value\nauc,prerank,0.75\n");
}
