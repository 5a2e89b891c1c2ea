#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/graph.hpp"
#include "graphfair/losses.hpp"
#include "graphfair/recmodel.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

enum class perturbation_mode { continuous, binary };

// Learnable state over the perturbable edge subset. Storage is Theta(|E~|):
// one real value, one edge id and two flags per perturbable edge. The edge id
// map plays the role of the position <-> edge relation; permuting positions
// never changes the perturbed graph.
struct perturbation_state {
    std::vector<double> p_hat;
    std::vector<std::uint32_t> edge_ids;   // position j -> graph edge id
    std::vector<std::uint8_t> deleted;     // monotonic-policy memory, never reverts
    std::vector<std::uint8_t> candidate;   // CN-policy restriction
    double alpha = 0.0;

    std::size_t size() const { return p_hat.size(); }

    std::size_t deleted_count() const {
        std::size_t n = 0;
        for (std::uint8_t d : deleted) n += d != 0;
        return n;
    }
};

// p_hat starts at alpha everywhere. The initialization must binarize to the
// untouched graph (logistic(alpha) >= 0.5), otherwise the perturbed matrix
// would differ from the input before any optimization happened.
inline perturbation_state init_state(const bipartite_graph& graph, double alpha = 0.0,
                                     std::span<const std::uint32_t> edge_subset = {}) {
    if (logistic(alpha) < 0.5) throw invalid_init(alpha);
    perturbation_state st;
    st.alpha = alpha;
    if (edge_subset.empty()) {
        st.edge_ids.resize(graph.num_edges());
        for (std::uint32_t e = 0; e < graph.num_edges(); ++e) st.edge_ids[e] = e;
    } else {
        for (std::uint32_t e : edge_subset) {
            if (e >= graph.num_edges()) throw input_error("perturbable edge id out of range");
            st.edge_ids.push_back(e);
        }
    }
    st.p_hat.assign(st.edge_ids.size(), alpha);
    st.deleted.assign(st.edge_ids.size(), 0);
    st.candidate.assign(st.edge_ids.size(), 1);
    return st;
}

// Per graph-edge weights. Edges outside the perturbable subset keep weight 1,
// CN-frozen entries stay at 1, deleted entries are hard zeros in both modes.
inline std::vector<double> edge_weights(const bipartite_graph& graph, const perturbation_state& st,
                                        perturbation_mode mode) {
    std::vector<double> w(graph.num_edges(), 1.0);
    for (std::size_t j = 0; j < st.size(); ++j) {
        const std::uint32_t e = st.edge_ids[j];
        if (!st.candidate[j]) {
            w[e] = 1.0;
        } else if (st.deleted[j]) {
            w[e] = 0.0;
        } else {
            const double s = logistic(st.p_hat[j]);
            w[e] = mode == perturbation_mode::continuous ? s : (s >= 0.5 ? 1.0 : 0.0);
        }
    }
    return w;
}

inline normalized_adjacency perturbed_normalized_adjacency(const bipartite_graph& graph,
                                                           const perturbation_state& st,
                                                           perturbation_mode mode) {
    const std::vector<double> w = edge_weights(graph, st, mode);
    return normalize_adjacency(graph, &w);
}

// Entries that binarize to zero become permanently deleted; the deleted count
// can only grow across a run.
inline std::size_t apply_monotonic_policy(perturbation_state& st) {
    std::size_t newly = 0;
    for (std::size_t j = 0; j < st.size(); ++j) {
        if (st.deleted[j] || !st.candidate[j]) continue;
        if (logistic(st.p_hat[j]) < 0.5) {
            st.deleted[j] = 1;
            ++newly;
        }
    }
    return newly;
}

// Connected Nodes policy: only edges whose user endpoint belongs to the
// unprotected group stay perturbable; the rest are frozen at weight 1.
inline void apply_cn_policy(perturbation_state& st, const bipartite_graph& graph,
                            const group_assignment& groups) {
    const std::uint8_t unprot = groups.unprotected_label();
    bool any_unprotected = false;
    for (std::uint8_t l : groups.label) any_unprotected |= l == unprot;
    if (!any_unprotected) throw degenerate_group("no unprotected user, CN policy cannot apply");
    for (std::size_t j = 0; j < st.size(); ++j)
        st.candidate[j] = groups.label[graph.edges[st.edge_ids[j]].user] == unprot ? 1 : 0;
}

// First node (if any) whose incident edges would all be gone under the
// binarized state.
inline std::optional<std::size_t> find_emptied_node(const bipartite_graph& graph,
                                                    const perturbation_state& st) {
    std::vector<std::uint32_t> alive(graph.num_nodes(), 0);
    const std::vector<double> w = edge_weights(graph, st, perturbation_mode::binary);
    for (std::uint32_t e = 0; e < graph.num_edges(); ++e) {
        if (w[e] == 0.0) continue;
        ++alive[graph.edges[e].user];
        ++alive[graph.num_users + graph.edges[e].item];
    }
    for (std::size_t n = 0; n < graph.num_nodes(); ++n)
        if (alive[n] == 0 && (n < graph.num_users ? graph.user_degree(node_index(n)) > 0
                                                  : graph.item_degree(node_index(n - graph.num_users)) > 0))
            return n;
    return std::nullopt;
}

// Squared element-wise distance between the perturbed and original adjacency,
// each undirected edge counted once. In binary mode this is the deletion count.
inline double squared_adjacency_distance(const bipartite_graph& graph, const perturbation_state& st,
                                         perturbation_mode mode) {
    const std::vector<double> w = edge_weights(graph, st, mode);
    double sum = 0.0;
    for (std::size_t j = 0; j < st.size(); ++j) {
        const double d = 1.0 - w[st.edge_ids[j]];
        sum += d * d;
    }
    return sum;
}

inline double distance_loss(const bipartite_graph& graph, const perturbation_state& st, double beta,
                            perturbation_mode mode = perturbation_mode::continuous) {
    return distance_loss_value(squared_adjacency_distance(graph, st, mode), beta);
}

struct loss_parts {
    double fairness = 0.0;    // (S_unprotected - anchor)^2, the optimized surrogate
    double distance = 0.0;
    double composite = 0.0;
    double s_unprotected = 0.0;
    std::size_t eligible_users = 0;
};

namespace detail {

// Scores one user against the propagated table: r[c] = <E*_u, E*_{item c}>.
inline void score_user(const matrix& estar, node_index num_users, node_index u,
                       std::span<const node_index> items, std::vector<double>& out) {
    out.resize(items.size());
    const double* eu = estar.row(u);
    for (std::size_t t = 0; t < items.size(); ++t)
        out[t] = dot(eu, estar.row(num_users + items[t]), estar.cols);
}

struct unprotected_pass {
    double mean_utility = 0.0;
    std::size_t counted = 0;
};

// Mean approximate utility of the unprotected users (restricted to subset if
// given), plus optionally the score-space gradient accumulated into e_bar.
template <typename PerUser>
unprotected_pass for_each_unprotected(const bipartite_graph& graph, const group_assignment& groups,
                                      const eval_labels& labels, std::span<const node_index> subset,
                                      PerUser&& fn) {
    unprotected_pass out;
    const std::uint8_t unprot = groups.unprotected_label();
    auto visit = [&](node_index u) {
        if (groups.label[u] != unprot || labels[u].empty()) return;
        out.mean_utility += fn(u);
        ++out.counted;
    };
    if (subset.empty()) {
        for (node_index u = 0; u < graph.num_users; ++u) visit(u);
    } else {
        for (node_index u : subset) visit(u);
    }
    if (out.counted == 0)
        throw degenerate_group("no unprotected user with relevant evaluation items in scope");
    out.mean_utility /= double(out.counted);
    return out;
}

}  // namespace detail

// Scalar objective the perturbation optimizes: (S_unprotected - s_prot_anchor)^2
// + L_dist, evaluated under continuous weights. The protected side enters only
// through the frozen anchor, so the protected labels are never read here.
inline loss_parts composite_loss(const bipartite_graph& graph, const perturbation_state& st,
                                 const model_parameters& params, const group_assignment& groups,
                                 const eval_labels& labels, const loss_config& cfg,
                                 double s_prot_anchor, std::span<const node_index> subset = {}) {
    const normalized_adjacency L = perturbed_normalized_adjacency(graph, st, perturbation_mode::continuous);
    const matrix estar = propagate(L, params);
    std::vector<node_index> cand;
    std::vector<double> r;
    std::vector<std::uint8_t> a;
    std::vector<char> rel_mask(graph.num_items, 0);
    auto per_user = [&](node_index u) {
        detail::candidate_items(graph, u, labels[u], nullptr, 0, cand);
        if (cfg.candidate_cap != 0 && cand.size() > cfg.candidate_cap) {
            detail::score_user(estar, graph.num_users, u, cand, r);
            std::vector<double> full_scores(graph.num_items, 0.0);
            for (std::size_t t = 0; t < cand.size(); ++t) full_scores[cand[t]] = r[t];
            detail::candidate_items(graph, u, labels[u], full_scores.data(), cfg.candidate_cap, cand);
        }
        detail::score_user(estar, graph.num_users, u, cand, r);
        a.resize(cand.size());
        for (node_index i : labels[u]) rel_mask[i] = 1;
        for (std::size_t t = 0; t < cand.size(); ++t) a[t] = rel_mask[cand[t]];
        for (node_index i : labels[u]) rel_mask[i] = 0;
        return -ndcg_approx_loss(r, a, cfg.gamma);
    };
    const auto pass = detail::for_each_unprotected(graph, groups, labels, subset, per_user);
    loss_parts parts;
    parts.s_unprotected = pass.mean_utility;
    parts.eligible_users = pass.counted;
    const double gap = pass.mean_utility - s_prot_anchor;
    parts.fairness = gap * gap;
    parts.distance = distance_loss(graph, st, cfg.beta);
    parts.composite = parts.fairness + parts.distance;
    return parts;
}

// Approximate utility of one group under the current (or binarized) state;
// used by the explainer to refresh the protected-side anchor.
inline double group_utility_under_state(const bipartite_graph& graph, const perturbation_state& st,
                                        const model_parameters& params, const group_assignment& groups,
                                        std::uint8_t label, const eval_labels& labels,
                                        const loss_config& cfg,
                                        perturbation_mode mode = perturbation_mode::continuous) {
    const normalized_adjacency L = perturbed_normalized_adjacency(graph, st, mode);
    const matrix estar = propagate(L, params);
    const relevance_matrix R = score(estar, graph.num_users, graph.num_items);
    const std::vector<node_index> members = groups.members(label);
    return group_utility(R, graph, labels, members, cfg);
}

struct gradient_result {
    std::vector<double> grad;  // d composite / d p_hat, per position
    loss_parts parts;
};

// Reverse-mode gradient of composite_loss through logistic(p_hat) -> weighted
// adjacency -> weighted degrees -> normalized adjacency -> propagation ->
// scores -> rank surrogate. Entries that are deleted or CN-frozen get exact
// zeros. Gradient deactivation: the protected utility is the constant
// s_prot_anchor, contributing only the 2*(S_unprot - anchor) factor.
inline gradient_result loss_gradient(const bipartite_graph& graph, const perturbation_state& st,
                                     const model_parameters& params, const group_assignment& groups,
                                     const eval_labels& labels, const loss_config& cfg,
                                     double s_prot_anchor, std::span<const node_index> subset = {}) {
    const std::vector<double> w = edge_weights(graph, st, perturbation_mode::continuous);
    const normalized_adjacency L = normalize_adjacency(graph, &w);
    const std::uint32_t depth = params.variant == backbone_variant::single_layer_linear ? 1 : params.depth;
    const std::vector<matrix> layers = propagate_layers(L, params.embeddings, depth);
    matrix estar(params.embeddings.rows, params.embeddings.cols);
    if (params.variant == backbone_variant::single_layer_linear) {
        estar = layers[1];
    } else {
        const double scale = 1.0 / double(params.depth + 1);
        for (const matrix& x : layers)
            for (std::size_t i = 0; i < estar.data.size(); ++i) estar.data[i] += scale * x.data[i];
    }

    // pass 1: per-user utilities -> S_unprotected
    std::vector<node_index> cand;
    std::vector<double> r;
    std::vector<std::uint8_t> a;
    std::vector<char> rel_mask(graph.num_items, 0);
    auto prepare_user = [&](node_index u) {
        detail::candidate_items(graph, u, labels[u], nullptr, 0, cand);
        if (cfg.candidate_cap != 0 && cand.size() > cfg.candidate_cap) {
            detail::score_user(estar, graph.num_users, u, cand, r);
            std::vector<double> full_scores(graph.num_items, 0.0);
            for (std::size_t t = 0; t < cand.size(); ++t) full_scores[cand[t]] = r[t];
            detail::candidate_items(graph, u, labels[u], full_scores.data(), cfg.candidate_cap, cand);
        }
        detail::score_user(estar, graph.num_users, u, cand, r);
        a.resize(cand.size());
        for (node_index i : labels[u]) rel_mask[i] = 1;
        for (std::size_t t = 0; t < cand.size(); ++t) a[t] = rel_mask[cand[t]];
        for (node_index i : labels[u]) rel_mask[i] = 0;
    };
    const auto pass1 = detail::for_each_unprotected(graph, groups, labels, subset, [&](node_index u) {
        prepare_user(u);
        return -ndcg_approx_loss(r, a, cfg.gamma);
    });

    loss_parts parts;
    parts.s_unprotected = pass1.mean_utility;
    parts.eligible_users = pass1.counted;
    const double gap = pass1.mean_utility - s_prot_anchor;
    parts.fairness = gap * gap;
    const double sq_dist = squared_adjacency_distance(graph, st, perturbation_mode::continuous);
    parts.distance = distance_loss_value(sq_dist, cfg.beta);
    parts.composite = parts.fairness + parts.distance;

    // pass 2: score-space gradients scaled by dL_fair/dS * dS/dloss_u
    matrix ebar(estar.rows, estar.cols);
    const double per_user_scale = -2.0 * gap / double(pass1.counted);
    std::vector<double> grad_r;
    detail::for_each_unprotected(graph, groups, labels, subset, [&](node_index u) {
        prepare_user(u);
        grad_r.assign(cand.size(), 0.0);
        ndcg_approx_loss_grad(r, a, cfg.gamma, grad_r, per_user_scale);
        const double* eu = estar.row(u);
        double* gu = ebar.row(u);
        for (std::size_t t = 0; t < cand.size(); ++t) {
            const double g = grad_r[t];
            if (g == 0.0) continue;
            const double* ei = estar.row(graph.num_users + cand[t]);
            double* gi = ebar.row(graph.num_users + cand[t]);
            for (std::size_t k = 0; k < estar.cols; ++k) {
                gu[k] += g * ei[k];
                gi[k] += g * eu[k];
            }
        }
        return 0.0;
    });

    // backprop through the propagation to the normalized entries
    std::vector<double> lbar(graph.num_edges(), 0.0);
    const std::size_t d = estar.cols;
    auto accumulate_edge_grads = [&](const matrix& gk, const matrix& xk1) {
        for (std::uint32_t e = 0; e < graph.num_edges(); ++e) {
            const node_index u = graph.edges[e].user;
            const std::size_t i = graph.num_users + graph.edges[e].item;
            lbar[e] += dot(gk.row(u), xk1.row(i), d) + dot(gk.row(i), xk1.row(u), d);
        }
    };
    if (params.variant == backbone_variant::single_layer_linear) {
        accumulate_edge_grads(ebar, layers[0]);
    } else if (params.depth > 0) {
        const double scale = 1.0 / double(params.depth + 1);
        matrix g(ebar.rows, ebar.cols), tmp(ebar.rows, ebar.cols);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = scale * ebar.data[i];
        for (std::uint32_t k = params.depth; k >= 1; --k) {
            accumulate_edge_grads(g, layers[k - 1]);
            if (k > 1) {
                L.multiply(g, tmp);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    g.data[i] = tmp.data[i] + scale * ebar.data[i];
            }
        }
    }

    // normalized entry -> weight: l_e = w_e * q_u * q_i with q = degree^{-1/2}
    std::vector<double> q(graph.num_nodes());
    for (std::size_t n = 0; n < graph.num_nodes(); ++n) q[n] = inv_sqrt_or_zero(L.weighted_degree[n]);
    std::vector<double> wbar(graph.num_edges(), 0.0), dbar(graph.num_nodes(), 0.0);
    for (std::uint32_t e = 0; e < graph.num_edges(); ++e) {
        const node_index u = graph.edges[e].user;
        const std::size_t i = graph.num_users + graph.edges[e].item;
        const double lb = lbar[e];
        if (lb == 0.0) continue;
        wbar[e] += lb * q[u] * q[i];
        dbar[u] += lb * w[e] * q[i] * (-0.5 * q[u] * q[u] * q[u]);
        dbar[i] += lb * w[e] * q[u] * (-0.5 * q[i] * q[i] * q[i]);
    }
    for (std::uint32_t e = 0; e < graph.num_edges(); ++e) {
        const node_index u = graph.edges[e].user;
        const std::size_t i = graph.num_users + graph.edges[e].item;
        wbar[e] += dbar[u] + dbar[i];
    }

    // distance term and the logistic link back to p_hat
    const double dist_outer = cfg.beta * 0.5 / ((1.0 + sq_dist) * (1.0 + sq_dist));
    gradient_result out;
    out.parts = parts;
    out.grad.assign(st.size(), 0.0);
    for (std::size_t j = 0; j < st.size(); ++j) {
        if (st.deleted[j] || !st.candidate[j]) continue;
        const std::uint32_t e = st.edge_ids[j];
        const double wj = w[e];
        const double total_w = wbar[e] + dist_outer * (-2.0 * (1.0 - wj));
        out.grad[j] = total_w * wj * (1.0 - wj);
        if (!std::isfinite(out.grad[j])) throw non_finite_gradient();
    }
    return out;
}

// Max over coordinates of |g_analytic - g_fd| / max(|g_fd|, 1e-8) against
// central differences of the identical scalar.
inline double finite_difference_check(const bipartite_graph& graph, const perturbation_state& st,
                                      const model_parameters& params, const group_assignment& groups,
                                      const eval_labels& labels, const loss_config& cfg,
                                      double s_prot_anchor, double step) {
    if (step <= 0.0) throw invalid_step();
    const gradient_result res = loss_gradient(graph, st, params, groups, labels, cfg, s_prot_anchor);
    double max_rel = 0.0;
    perturbation_state probe = st;
    for (std::size_t j = 0; j < st.size(); ++j) {
        probe.p_hat[j] = st.p_hat[j] + step;
        const double fp = composite_loss(graph, probe, params, groups, labels, cfg, s_prot_anchor).composite;
        probe.p_hat[j] = st.p_hat[j] - step;
        const double fm = composite_loss(graph, probe, params, groups, labels, cfg, s_prot_anchor).composite;
        probe.p_hat[j] = st.p_hat[j];
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::abs(res.grad[j] - fd) / std::max(std::abs(fd), 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace graphfair
