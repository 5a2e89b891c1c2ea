#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/graph.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

// Per dense user index, the relevant item indices of the evaluation split.
// An empty list means the user has no relevant items and is skipped.
using eval_labels = std::vector<std::vector<node_index>>;

struct loss_config {
    double gamma = 0.1;           // sigmoid temperature of the rank approximation
    double beta = 0.5;            // distance-term weight, recommended range [0.001, 2.0]
    std::uint32_t k_eval = 10;    // NDCG cutoff for reporting
    std::size_t candidate_cap = 0;  // 0 = score the full unseen item set per user
};

// Binary demographic partition. The unprotected group is the one with higher
// utility on the evaluation set before any perturbation.
struct group_assignment {
    std::vector<std::uint8_t> label;  // per dense user index, 0 or 1
    std::uint8_t protected_label = 0;
    std::string name0 = "0", name1 = "1";

    std::uint8_t unprotected_label() const { return protected_label ? 0 : 1; }
    const std::string& name(std::uint8_t lab) const { return lab ? name1 : name0; }

    std::vector<node_index> members(std::uint8_t lab) const {
        std::vector<node_index> out;
        for (std::size_t u = 0; u < label.size(); ++u)
            if (label[u] == lab) out.push_back(node_index(u));
        return out;
    }

    void validate() const {
        std::size_t n0 = 0, n1 = 0;
        for (std::uint8_t l : label) (l ? n1 : n0)++;
        if (n0 == 0 || n1 == 0) throw degenerate_group("both demographic groups must be non-empty");
    }
};

// Smooth rank surrogate: z_i = 1 + sum_{j != i} sigmoid((r_j - r_i) / gamma)
// approximates the rank of item i, and the loss is the negated approximate
// NDCG. Values lie in [-1, 0).
inline double ndcg_approx_loss(std::span<const double> r, std::span<const std::uint8_t> a, double gamma) {
    if (r.size() != a.size() || r.empty()) throw input_error("scores and relevance must have equal, nonzero length");
    if (gamma <= 0) throw input_error("gamma must be positive");
    std::size_t relevant = 0;
    for (std::uint8_t x : a) relevant += x != 0;
    if (relevant == 0) throw no_relevant_items();
    double ideal = 0.0;
    for (std::size_t p = 1; p <= relevant; ++p) ideal += 1.0 / log2p(1.0 + double(p));
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (!a[i]) continue;
        double z = 1.0;
        for (std::size_t j = 0; j < r.size(); ++j)
            if (j != i) z += logistic((r[j] - r[i]) / gamma);
        sum += 1.0 / log2p(1.0 + z);
    }
    return -sum / ideal;
}

// Same value, plus d loss / d r accumulated into grad (grad must be zeroed by
// the caller or is overwritten when accumulate = false).
inline double ndcg_approx_loss_grad(std::span<const double> r, std::span<const std::uint8_t> a,
                                    double gamma, std::span<double> grad, double scale = 1.0) {
    if (r.size() != a.size() || r.empty()) throw input_error("scores and relevance must have equal, nonzero length");
    std::size_t relevant = 0;
    for (std::uint8_t x : a) relevant += x != 0;
    if (relevant == 0) throw no_relevant_items();
    double ideal = 0.0;
    for (std::size_t p = 1; p <= relevant; ++p) ideal += 1.0 / log2p(1.0 + double(p));
    const double ln2 = std::log(2.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (!a[i]) continue;
        double z = 1.0;
        for (std::size_t j = 0; j < r.size(); ++j)
            if (j != i) z += logistic((r[j] - r[i]) / gamma);
        const double l2 = log2p(1.0 + z);
        sum += 1.0 / l2;
        // d(-1/log2(1+z))/dz = 1 / ((1+z) ln2 log2(1+z)^2); loss has a -1/ideal factor
        const double dz = scale / (ideal * (1.0 + z) * ln2 * l2 * l2);
        double total = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j == i) continue;
            const double s = logistic((r[j] - r[i]) / gamma);
            const double ds = s * (1.0 - s) / gamma;
            grad[j] += dz * ds;
            total += ds;
        }
        grad[i] -= dz * total;
    }
    return -sum / ideal;
}

// Mean of the absolute pairwise squared utility differences across groups;
// for two groups this is just the squared gap.
inline double fairness_loss(std::span<const double> group_utilities) {
    const std::size_t n = group_utilities.size();
    if (n < 2) throw input_error("fairness loss needs at least two groups");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = group_utilities[i] - group_utilities[j];
            sum += d * d;
        }
    return sum / (double(n) * double(n - 1) / 2.0);
}

// |x| / (1 + |x|): bounded to [0, 1), saturating slower than the logistic.
inline double bounded_abs_sigmoid(double x) {
    const double ax = std::abs(x);
    return ax / (1.0 + ax);
}

// beta/2 * sigma(sum of squared entry differences), each undirected edge
// counted once; in binary form the sum is just the deleted-edge count.
inline double distance_loss_value(double squared_diff_sum, double beta) {
    return beta * 0.5 * bounded_abs_sigmoid(squared_diff_sum);
}

namespace detail {

// Candidate item list for a user: all items minus the training history, in
// ascending item order. With a cap, relevant items are always kept and the
// highest-scored others fill the rest (deterministic tie-break by index).
inline void candidate_items(const bipartite_graph& train_graph, node_index u,
                            const std::vector<node_index>& relevant, const double* scores,
                            std::size_t cap, std::vector<node_index>& out) {
    out.clear();
    thread_local std::vector<char> mask;
    mask.assign(train_graph.num_items, 0);
    for (std::uint32_t e : train_graph.user_incident(u)) mask[train_graph.edges[e].item] = 1;
    for (node_index i = 0; i < train_graph.num_items; ++i)
        if (!mask[i]) out.push_back(i);
    if (cap == 0 || out.size() <= cap) return;
    thread_local std::vector<char> rel;
    rel.assign(train_graph.num_items, 0);
    for (node_index i : relevant) rel[i] = 1;
    std::vector<node_index> keep;
    keep.reserve(cap);
    std::vector<node_index> rest;
    for (node_index i : out) (rel[i] ? keep : rest).push_back(i);
    const std::size_t fill = cap > keep.size() ? cap - keep.size() : 0;
    if (fill > 0 && fill < rest.size()) {
        std::partial_sort(rest.begin(), rest.begin() + fill, rest.end(), [&](node_index x, node_index y) {
            if (scores[x] != scores[y]) return scores[x] > scores[y];
            return x < y;
        });
        rest.resize(fill);
    } else if (fill == 0) {
        rest.clear();
    }
    for (node_index i : rest) keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    out = std::move(keep);
}

}  // namespace detail

// S(R^G, A^G): mean over the group's users with at least one relevant
// evaluation item of the negated rank-approximation loss, i.e. a utility.
inline double group_utility(const matrix& relevance, const bipartite_graph& train_graph,
                            const eval_labels& labels, std::span<const node_index> group_users,
                            const loss_config& cfg) {
    if (group_users.empty()) throw degenerate_group("empty group");
    double total = 0.0;
    std::size_t counted = 0;
    std::vector<node_index> cand;
    std::vector<double> r;
    std::vector<std::uint8_t> a;
    std::vector<char> rel_mask(train_graph.num_items, 0);
    for (node_index u : group_users) {
        if (labels[u].empty()) continue;
        detail::candidate_items(train_graph, u, labels[u], relevance.row(u), cfg.candidate_cap, cand);
        r.resize(cand.size());
        a.resize(cand.size());
        for (node_index i : labels[u]) rel_mask[i] = 1;
        for (std::size_t t = 0; t < cand.size(); ++t) {
            r[t] = relevance(u, cand[t]);
            a[t] = rel_mask[cand[t]];
        }
        for (node_index i : labels[u]) rel_mask[i] = 0;
        total += -ndcg_approx_loss(r, a, cfg.gamma);
        ++counted;
    }
    if (counted == 0) throw degenerate_group("no user in the group has relevant evaluation items");
    return total / double(counted);
}

}  // namespace graphfair
