#include <gtest/gtest.h>

#include <numeric>

#include "graphfair/losses.hpp"

using namespace graphfair;

namespace {

// exact NDCG of the ranking induced by the scores, binary relevance, full list
double exact_ndcg(const std::vector<double>& r, const std::vector<std::uint8_t>& a) {
    std::vector<std::size_t> order(r.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return r[x] > r[y]; });
    double dcg = 0.0;
    for (std::size_t p = 0; p < order.size(); ++p)
        if (a[order[p]]) dcg += 1.0 / std::log2(2.0 + double(p));
    std::size_t rel = 0;
    for (std::uint8_t x : a) rel += x != 0;
    double ideal = 0.0;
    for (std::size_t p = 1; p <= rel; ++p) ideal += 1.0 / std::log2(1.0 + double(p));
    return dcg / ideal;
}

}  // namespace

TEST(NdcgApproxLoss, SingleItemIsMinusOne) {
    std::vector<double> r{3.7};
    std::vector<std::uint8_t> a{1};
    EXPECT_DOUBLE_EQ(ndcg_approx_loss(r, a, 0.1), -1.0);
}

TEST(NdcgApproxLoss, RelevantOnTop) {
    std::vector<double> r{5.0, 1.0};
    std::vector<std::uint8_t> a{1, 0};
    EXPECT_NEAR(ndcg_approx_loss(r, a, 0.1), -1.0, 1e-6);
}

TEST(NdcgApproxLoss, RelevantBelow) {
    std::vector<double> r{1.0, 5.0};
    std::vector<std::uint8_t> a{1, 0};
    EXPECT_NEAR(ndcg_approx_loss(r, a, 0.1), -1.0 / std::log2(3.0), 1e-6);
}

TEST(NdcgApproxLoss, NoRelevantItemsRejected) {
    std::vector<double> r{1.0, 2.0};
    std::vector<std::uint8_t> a{0, 0};
    EXPECT_THROW(ndcg_approx_loss(r, a, 0.1), no_relevant_items);
}

TEST(NdcgApproxLoss, SmallGammaMatchesExactNdcg) {
    rng_t rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 49;
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = 0.01 * double(i);  // tie-free, separated
        std::shuffle(r.begin(), r.end(), rng);
        std::vector<std::uint8_t> a(n, 0);
        const std::size_t rel = 1 + rng() % n;
        for (std::size_t i = 0; i < rel; ++i) a[i] = 1;
        std::shuffle(a.begin(), a.end(), rng);
        const double approx = -ndcg_approx_loss(r, a, 1e-4);
        EXPECT_NEAR(approx, exact_ndcg(r, a), 1e-3);
    }
}

TEST(NdcgApproxLoss, RangeAndPermutationInvariance) {
    rng_t rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        std::vector<double> r(n);
        std::vector<std::uint8_t> a(n, 0);
        for (double& x : r) x = gaussian(rng);
        a[rng() % n] = 1;
        if (n > 1 && rng() % 2) a[rng() % n] = 1;
        const double loss = ndcg_approx_loss(r, a, 0.1);
        EXPECT_GE(loss, -1.0);
        EXPECT_LT(loss, 0.0);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> rp(n);
        std::vector<std::uint8_t> ap(n);
        for (std::size_t i = 0; i < n; ++i) {
            rp[i] = r[perm[i]];
            ap[i] = a[perm[i]];
        }
        EXPECT_DOUBLE_EQ(ndcg_approx_loss(rp, ap, 0.1), loss);
    }
}

TEST(NdcgApproxLossGrad, MatchesFiniteDifferences) {
    rng_t rng(47);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + rng() % 8;
        std::vector<double> r(n);
        std::vector<std::uint8_t> a(n, 0);
        for (double& x : r) x = 0.5 * gaussian(rng);
        a[rng() % n] = 1;
        a[rng() % n] = 1;
        std::vector<double> grad(n, 0.0);
        ndcg_approx_loss_grad(r, a, 0.1, grad);
        const double h = 1e-6;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> rp = r, rm = r;
            rp[i] += h;
            rm[i] -= h;
            const double fd = (ndcg_approx_loss(rp, a, 0.1) - ndcg_approx_loss(rm, a, 0.1)) / (2 * h);
            EXPECT_NEAR(grad[i], fd, 1e-5 + 1e-4 * std::abs(fd));
        }
    }
}

TEST(FairnessLoss, ParityGivesZero) {
    std::vector<double> s{0.4, 0.4};
    EXPECT_DOUBLE_EQ(fairness_loss(s), 0.0);
}

TEST(FairnessLoss, TwoGroupSquaredGap) {
    std::vector<double> s{0.3, 0.2};
    EXPECT_NEAR(fairness_loss(s), 0.01, 1e-12);
}

TEST(FairnessLoss, ThreeGroupMean) {
    std::vector<double> s{0.1, 0.2, 0.4};
    EXPECT_NEAR(fairness_loss(s), (0.01 + 0.09 + 0.04) / 3.0, 1e-12);
}

TEST(FairnessLoss, SymmetricInGroupOrder) {
    std::vector<double> s{0.35, 0.11};
    std::vector<double> rev{0.11, 0.35};
    EXPECT_DOUBLE_EQ(fairness_loss(s), fairness_loss(rev));
}

TEST(DistanceLoss, ZeroAtIdentity) {
    EXPECT_DOUBLE_EQ(distance_loss_value(0.0, 1.0), 0.0);
}

TEST(DistanceLoss, OneDeletionBinary) {
    // d = 1, beta = 1: 1/2 * 1/(1+1) = 0.25
    EXPECT_DOUBLE_EQ(distance_loss_value(1.0, 1.0), 0.25);
}

TEST(DistanceLoss, BoundedByHalfBeta) {
    for (double d : {3.0, 10.0, 1e6}) EXPECT_LT(distance_loss_value(d, 0.5), 0.25);
    EXPECT_NEAR(distance_loss_value(1e9, 0.5), 0.25, 1e-6);
    // sigma(3) = 0.75
    EXPECT_NEAR(distance_loss_value(3.0, 0.5), 0.1875, 1e-12);
}

TEST(GroupUtility, MeansPerUserUtilities) {
    // candidates for both users are items {0,1}; item 2 is training history
    bipartite_graph g = build_graph_indexed(2, 3, {{0, 2}, {1, 2}});
    matrix R(2, 3);
    R(0, 0) = 5.0;
    R(0, 1) = 1.0;
    R(1, 0) = 1.0;
    R(1, 1) = 5.0;
    eval_labels labels{{0}, {0}};  // item 0 relevant for both
    loss_config cfg;
    std::vector<node_index> group{0, 1};
    const double s = group_utility(R, g, labels, group, cfg);
    EXPECT_NEAR(s, (1.0 + 1.0 / std::log2(3.0)) / 2.0, 1e-6);
}

TEST(GroupUtility, PerfectScoresNearOne) {
    bipartite_graph g = build_graph_indexed(3, 4, {{0, 3}, {1, 3}, {2, 3}});
    matrix R(3, 4);
    eval_labels labels(3);
    for (node_index u = 0; u < 3; ++u) {
        labels[u] = {u};  // distinct relevant item per user
        R(u, u) = 50.0;   // scored far above everything else
    }
    loss_config cfg;
    std::vector<node_index> group{0, 1, 2};
    EXPECT_NEAR(group_utility(R, g, labels, group, cfg), 1.0, 1e-9);
}

TEST(GroupUtility, DegenerateWithoutRelevantItems) {
    bipartite_graph g = build_graph_indexed(1, 2, {{0, 0}});
    matrix R(1, 2);
    eval_labels labels{{}};
    loss_config cfg;
    std::vector<node_index> group{0};
    EXPECT_THROW(group_utility(R, g, labels, group, cfg), degenerate_group);
    EXPECT_THROW(group_utility(R, g, labels, {}, cfg), degenerate_group);
}

TEST(GroupUtility, CandidateCapKeepsRelevantItems) {
    bipartite_graph g = build_graph_indexed(1, 6, {{0, 5}});
    matrix R(1, 6);
    R(0, 0) = 0.1;  // relevant, scored lowest
    R(0, 1) = 2.0;
    R(0, 2) = 3.0;
    R(0, 3) = 4.0;
    R(0, 4) = 5.0;
    eval_labels labels{{0}};
    loss_config capped;
    capped.candidate_cap = 3;
    std::vector<node_index> group{0};
    // cap keeps the relevant item plus the 2 best others: {0, 3, 4}
    const double s = group_utility(R, g, labels, group, capped);
    std::vector<double> r{0.1, 4.0, 5.0};
    std::vector<std::uint8_t> a{1, 0, 0};
    EXPECT_DOUBLE_EQ(s, -ndcg_approx_loss(r, a, capped.gamma));
}
