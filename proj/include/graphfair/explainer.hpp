#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/evalstat.hpp"
#include "graphfair/perturb.hpp"
#include "graphfair/recmodel.hpp"

namespace graphfair {

enum class optimizer_kind { plain_gradient, adaptive_moment };

inline std::string to_string(optimizer_kind k) {
    return k == optimizer_kind::plain_gradient ? "plain-gradient" : "adaptive-moment";
}

inline optimizer_kind optimizer_kind_from(const std::string& s) {
    if (s == "plain-gradient") return optimizer_kind::plain_gradient;
    if (s == "adaptive-moment") return optimizer_kind::adaptive_moment;
    throw input_error("unknown optimizer: " + s);
}

struct explainer_config {
    std::uint32_t max_epochs = 800;
    double early_stop_delta = 0.001;
    std::uint32_t early_stop_patience = 15;
    double learning_rate = 0.25;
    std::uint32_t batch_size = 32;
    double alpha = 0.0;  // perturbation init; must binarize to the intact graph
    bool monotonic_policy = true;
    bool cn_policy = false;
    optimizer_kind optimizer = optimizer_kind::adaptive_moment;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_epochs < 1) throw input_error("max_epochs must be >= 1");
        if (early_stop_patience < 1) throw input_error("early_stop_patience must be >= 1");
        if (early_stop_delta < 0) throw input_error("early_stop_delta must be >= 0");
        if (batch_size < 1) throw input_error("batch_size must be >= 1");
    }
};

struct epoch_record {
    std::uint32_t epoch = 0;          // 0 is the unperturbed baseline
    double fairness_training = 0.0;   // continuous two-group fairness value
    double delta_ndcg = 0.0;          // unprotected minus protected NDCG@10, binarized state
    double ndcg_unprotected = 0.0;
    double ndcg_protected = 0.0;
    std::size_t deleted_edges = 0;
    double deleted_fraction = 0.0;
    double seconds = 0.0;             // wall clock, excluded from equality and artifacts

    friend bool operator==(const epoch_record& a, const epoch_record& b) {
        return a.epoch == b.epoch && a.fairness_training == b.fairness_training &&
               a.delta_ndcg == b.delta_ndcg && a.ndcg_unprotected == b.ndcg_unprotected &&
               a.ndcg_protected == b.ndcg_protected && a.deleted_edges == b.deleted_edges &&
               a.deleted_fraction == b.deleted_fraction;
    }
};

enum class stop_reason { completed, early_stopped, node_emptied };

inline std::string to_string(stop_reason r) {
    switch (r) {
        case stop_reason::completed: return "completed";
        case stop_reason::early_stopped: return "early-stopped";
        default: return "node-emptied";
    }
}

struct deletion_event {
    std::uint32_t edge_id = 0;
    std::uint32_t epoch_first_deleted = 0;
    friend bool operator==(const deletion_event&, const deletion_event&) = default;
};

struct explanation_result {
    std::vector<deletion_event> deletions;       // every edge that was ever deleted
    std::vector<std::uint32_t> selected_deleted; // deleted set at the selected epoch
    std::uint32_t selected_epoch = 0;
    std::vector<epoch_record> trajectory;        // index == epoch
    stop_reason reason = stop_reason::completed;
    std::string config_fingerprint;
};

// Binary-weights inference for a recorded deletion set: the counterfactual
// replay path every reported metric comes from.
inline std::pair<relevance_matrix, recommendation_lists> replay(const bipartite_graph& train_graph,
                                                                const model_parameters& params,
                                                                std::span<const std::uint32_t> deleted_edges,
                                                                std::uint32_t k = 10) {
    std::vector<double> w(train_graph.num_edges(), 1.0);
    for (std::uint32_t e : deleted_edges) {
        if (e >= train_graph.num_edges()) throw input_error("deleted edge id out of range");
        w[e] = 0.0;
    }
    std::vector<std::uint32_t> alive(train_graph.num_nodes(), 0);
    for (std::uint32_t e = 0; e < train_graph.num_edges(); ++e) {
        if (w[e] == 0.0) continue;
        ++alive[train_graph.edges[e].user];
        ++alive[train_graph.num_users + train_graph.edges[e].item];
    }
    for (std::size_t n = 0; n < train_graph.num_nodes(); ++n) {
        const bool had_edges = n < train_graph.num_users
                                   ? train_graph.user_degree(node_index(n)) > 0
                                   : train_graph.item_degree(node_index(n - train_graph.num_users)) > 0;
        if (had_edges && alive[n] == 0) throw node_emptied(train_graph.node_name(n));
    }
    const normalized_adjacency L = normalize_adjacency(train_graph, &w);
    relevance_matrix R = score(propagate(L, params), train_graph.num_users, train_graph.num_items);
    recommendation_lists lists = topk(R, train_graph, k);
    return {std::move(R), std::move(lists)};
}

struct group_ndcg {
    double unprotected = 0.0;
    double prot = 0.0;
    double delta() const { return unprotected - prot; }
};

// Exact per-group NDCG@k means over users with evaluation labels.
inline group_ndcg group_ndcg_at_k(const recommendation_lists& lists, const eval_labels& labels,
                                  const group_assignment& groups, std::uint32_t k) {
    double sum[2] = {0.0, 0.0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t u = 0; u < labels.size(); ++u) {
        if (labels[u].empty()) continue;
        const double v = ndcg_at_k(lists.row(u), labels[u], k);
        sum[groups.label[u]] += v;
        ++cnt[groups.label[u]];
    }
    const std::uint8_t unprot = groups.unprotected_label();
    if (cnt[unprot] == 0 || cnt[groups.protected_label] == 0)
        throw degenerate_group("a group has no users with evaluation labels");
    group_ndcg out;
    out.unprotected = sum[unprot] / double(cnt[unprot]);
    out.prot = sum[groups.protected_label] / double(cnt[groups.protected_label]);
    return out;
}

// Sets protected_label to the group with the lower unperturbed NDCG@k.
inline void designate_protected_group(const bipartite_graph& train_graph, const model_parameters& params,
                                      const eval_labels& labels, group_assignment& groups,
                                      std::uint32_t k = 10) {
    groups.validate();
    auto [R, lists] = replay(train_graph, params, {}, k);
    double sum[2] = {0.0, 0.0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t u = 0; u < labels.size(); ++u) {
        if (labels[u].empty()) continue;
        sum[groups.label[u]] += ndcg_at_k(lists.row(u), labels[u], k);
        ++cnt[groups.label[u]];
    }
    if (cnt[0] == 0 || cnt[1] == 0) throw degenerate_group("a group has no users with evaluation labels");
    groups.protected_label = sum[0] / double(cnt[0]) <= sum[1] / double(cnt[1]) ? 0 : 1;
}

namespace detail {

// Group-proportional batches by largest remainder; group member lists arrive
// pre-shuffled for the epoch.
inline std::vector<std::vector<node_index>> stratified_batches(const std::vector<node_index>& g0,
                                                               const std::vector<node_index>& g1,
                                                               std::uint32_t batch_size) {
    const std::size_t total = g0.size() + g1.size();
    const std::size_t nbatches = (total + batch_size - 1) / batch_size;
    std::vector<std::vector<node_index>> batches(nbatches);
    std::size_t c0 = 0, c1 = 0;
    for (std::size_t b = 0; b < nbatches; ++b) {
        // cumulative-rounding allocation keeps every batch within one user of
        // the dataset's group mix and exhausts both lists exactly
        const std::size_t take0 =
            std::size_t(std::llround(double(g0.size()) * double(b + 1) / double(nbatches))) - c0;
        const std::size_t take1 =
            std::size_t(std::llround(double(g1.size()) * double(b + 1) / double(nbatches))) - c1;
        for (std::size_t t = 0; t < take0; ++t) batches[b].push_back(g0[c0 + t]);
        for (std::size_t t = 0; t < take1; ++t) batches[b].push_back(g1[c1 + t]);
        c0 += take0;
        c1 += take1;
    }
    return batches;
}

struct moment_state {
    std::vector<double> m, v;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::uint64_t t = 0;
};

inline void optimizer_step(perturbation_state& st, const std::vector<double>& grad, double lr,
                           optimizer_kind kind, moment_state& mom) {
    if (kind == optimizer_kind::plain_gradient) {
        for (std::size_t j = 0; j < st.size(); ++j)
            if (st.candidate[j] && !st.deleted[j]) st.p_hat[j] -= lr * grad[j];
        return;
    }
    ++mom.t;
    const double c1 = 1.0 - std::pow(mom.b1, double(mom.t));
    const double c2 = 1.0 - std::pow(mom.b2, double(mom.t));
    for (std::size_t j = 0; j < st.size(); ++j) {
        if (!st.candidate[j] || st.deleted[j]) continue;
        mom.m[j] = mom.b1 * mom.m[j] + (1.0 - mom.b1) * grad[j];
        mom.v[j] = mom.b2 * mom.v[j] + (1.0 - mom.b2) * grad[j] * grad[j];
        st.p_hat[j] -= lr * (mom.m[j] / c1) / (std::sqrt(mom.v[j] / c2) + mom.eps);
    }
}

struct epoch_metrics {
    group_ndcg ndcg;
    double fairness_training = 0.0;
    std::size_t deleted = 0;
    double s_prot_continuous = 0.0;  // next epoch's anchor
};

// Evaluation of the current state: binarized inference for the reported
// NDCG@k, continuous (or binary for gradient-free baselines) utilities for
// the training-fairness value.
inline epoch_metrics evaluate_state(const bipartite_graph& graph, const perturbation_state& st,
                                    const model_parameters& params, const group_assignment& groups,
                                    const eval_labels& labels, const loss_config& cfg,
                                    perturbation_mode training_mode) {
    epoch_metrics out;
    const normalized_adjacency bin = perturbed_normalized_adjacency(graph, st, perturbation_mode::binary);
    const relevance_matrix R = score(propagate(bin, params), graph.num_users, graph.num_items);
    const recommendation_lists lists = topk(R, graph, cfg.k_eval);
    out.ndcg = group_ndcg_at_k(lists, labels, groups, cfg.k_eval);

    const normalized_adjacency cont = training_mode == perturbation_mode::binary
                                          ? bin
                                          : perturbed_normalized_adjacency(graph, st, training_mode);
    const relevance_matrix Rc = training_mode == perturbation_mode::binary
                                    ? R
                                    : score(propagate(cont, params), graph.num_users, graph.num_items);
    const std::vector<node_index> unprot = groups.members(groups.unprotected_label());
    const std::vector<node_index> prot = groups.members(groups.protected_label);
    const double s_unp = group_utility(Rc, graph, labels, unprot, cfg);
    out.s_prot_continuous = group_utility(Rc, graph, labels, prot, cfg);
    const double utilities[2] = {s_unp, out.s_prot_continuous};
    out.fairness_training = fairness_loss(utilities);
    out.deleted = 0;
    const std::vector<double> wb = edge_weights(graph, st, perturbation_mode::binary);
    for (std::size_t j = 0; j < st.size(); ++j) out.deleted += wb[st.edge_ids[j]] == 0.0;
    return out;
}

struct run_driver {
    const bipartite_graph& graph;
    const model_parameters& params;
    const group_assignment& groups;
    const eval_labels& labels;
    const loss_config& loss_cfg;
    const explainer_config& cfg;
    perturbation_mode training_mode;

    explanation_result result;
    std::vector<std::int8_t> first_deleted_recorded;
    double best_fairness = 0.0;
    std::size_t best_deletions = 0;
    bool have_best = false;

    explicit run_driver(const bipartite_graph& g, const model_parameters& p, const group_assignment& gr,
                        const eval_labels& l, const loss_config& lc, const explainer_config& ec,
                        perturbation_mode tm)
        : graph(g), params(p), groups(gr), labels(l), loss_cfg(lc), cfg(ec), training_mode(tm) {
        first_deleted_recorded.assign(g.num_edges(), 0);
    }

    // records metrics for `epoch`, tracks deletion events and the selected
    // epoch; returns the metrics for early-stopping decisions
    epoch_metrics commit_epoch(std::uint32_t epoch, const perturbation_state& st, double seconds) {
        epoch_metrics m = evaluate_state(graph, st, params, groups, labels, loss_cfg, training_mode);
        const std::vector<double> wb = edge_weights(graph, st, perturbation_mode::binary);
        for (std::size_t j = 0; j < st.size(); ++j) {
            const std::uint32_t e = st.edge_ids[j];
            if (wb[e] == 0.0 && !first_deleted_recorded[e]) {
                first_deleted_recorded[e] = 1;
                result.deletions.push_back({e, epoch});
            }
        }
        epoch_record rec;
        rec.epoch = epoch;
        rec.fairness_training = m.fairness_training;
        rec.delta_ndcg = m.ndcg.delta();
        rec.ndcg_unprotected = m.ndcg.unprotected;
        rec.ndcg_protected = m.ndcg.prot;
        rec.deleted_edges = m.deleted;
        rec.deleted_fraction = double(m.deleted) / double(st.size() ? st.size() : 1);
        rec.seconds = seconds;
        result.trajectory.push_back(rec);

        const double fairness_eval = std::abs(rec.delta_ndcg);
        if (!have_best || fairness_eval < best_fairness ||
            (fairness_eval == best_fairness && m.deleted < best_deletions)) {
            have_best = true;
            best_fairness = fairness_eval;
            best_deletions = m.deleted;
            result.selected_epoch = epoch;
            result.selected_deleted.clear();
            for (std::size_t j = 0; j < st.size(); ++j)
                if (wb[st.edge_ids[j]] == 0.0) result.selected_deleted.push_back(st.edge_ids[j]);
        }
        return m;
    }
};

}  // namespace detail

// The counterfactual search: stratified user batches drive perturbation
// updates; policies keep deletions monotone (and CN-restricted when asked);
// a run ends at the epoch budget, on stalled training fairness, or when a
// node would lose its last edge (that epoch rolls back).
inline explanation_result explain(const bipartite_graph& train_graph, const model_parameters& params,
                                  const group_assignment& groups, const eval_labels& labels,
                                  const loss_config& loss_cfg, const explainer_config& cfg,
                                  const std::string& fingerprint = {}) {
    cfg.validate();
    groups.validate();
    perturbation_state st = init_state(train_graph, cfg.alpha);
    if (cfg.cn_policy) apply_cn_policy(st, train_graph, groups);

    std::vector<node_index> elig0, elig1;
    const std::uint8_t unprot = groups.unprotected_label();
    for (node_index u = 0; u < train_graph.num_users; ++u) {
        if (labels[u].empty()) continue;
        (groups.label[u] == unprot ? elig0 : elig1).push_back(u);
    }
    if (elig0.empty() || elig1.empty())
        throw degenerate_group("a group has no users with evaluation labels");

    detail::run_driver driver(train_graph, params, groups, labels, loss_cfg, cfg,
                              perturbation_mode::continuous);
    driver.result.config_fingerprint = fingerprint;

    const auto t0 = std::chrono::steady_clock::now();
    auto seconds_since = [](auto start) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    detail::epoch_metrics metrics = driver.commit_epoch(0, st, seconds_since(t0));

    rng_t rng(cfg.seed);
    detail::moment_state mom;
    mom.m.assign(st.size(), 0.0);
    mom.v.assign(st.size(), 0.0);
    double best_fair_training = metrics.fairness_training;
    std::uint32_t stall = 0;
    double anchor = metrics.s_prot_continuous;

    for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto te = std::chrono::steady_clock::now();
        const perturbation_state st_backup = st;
        const detail::moment_state mom_backup = mom;

        std::shuffle(elig0.begin(), elig0.end(), rng);
        std::shuffle(elig1.begin(), elig1.end(), rng);
        const auto batches = detail::stratified_batches(elig0, elig1, cfg.batch_size);
        for (const auto& batch : batches) {
            gradient_result g;
            try {
                g = loss_gradient(train_graph, st, params, groups, labels, loss_cfg, anchor, batch);
            } catch (const degenerate_group&) {
                continue;  // batch without eligible unprotected users
            }
            detail::optimizer_step(st, g.grad, cfg.learning_rate, cfg.optimizer, mom);
            if (cfg.monotonic_policy) apply_monotonic_policy(st);
        }

        if (find_emptied_node(train_graph, st)) {
            st = st_backup;  // roll the epoch back, end with the last valid state
            mom = mom_backup;
            driver.result.reason = stop_reason::node_emptied;
            break;
        }

        metrics = driver.commit_epoch(epoch, st, seconds_since(te));
        anchor = metrics.s_prot_continuous;

        if (best_fair_training - metrics.fairness_training > cfg.early_stop_delta) {
            best_fair_training = metrics.fairness_training;
            stall = 0;
        } else if (++stall >= cfg.early_stop_patience) {
            driver.result.reason = stop_reason::early_stopped;
            break;
        }
        if (epoch == cfg.max_epochs) driver.result.reason = stop_reason::completed;
    }
    return driver.result;
}

// Gradient-free sanity baseline: every surviving edge is deleted with
// probability rho = 100 / |E_train| per epoch; same records, policies and
// stopping rules as the learned search.
inline explanation_result rnd_p_baseline(const bipartite_graph& train_graph,
                                         const model_parameters& params, const group_assignment& groups,
                                         const eval_labels& labels, const loss_config& loss_cfg,
                                         const explainer_config& cfg, const std::string& fingerprint = {}) {
    cfg.validate();
    groups.validate();
    if (train_graph.num_edges() < 100)
        throw input_error("rnd-p needs at least 100 training edges");
    const double rho = 100.0 / double(train_graph.num_edges());
    perturbation_state st = init_state(train_graph, cfg.alpha);
    if (cfg.cn_policy) apply_cn_policy(st, train_graph, groups);

    detail::run_driver driver(train_graph, params, groups, labels, loss_cfg, cfg,
                              perturbation_mode::binary);
    driver.result.config_fingerprint = fingerprint;

    const auto t0 = std::chrono::steady_clock::now();
    auto seconds_since = [](auto start) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    detail::epoch_metrics metrics = driver.commit_epoch(0, st, seconds_since(t0));

    rng_t rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double best_fair_training = metrics.fairness_training;
    std::uint32_t stall = 0;

    for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto te = std::chrono::steady_clock::now();
        const perturbation_state st_backup = st;
        for (std::size_t j = 0; j < st.size(); ++j) {
            if (st.deleted[j] || !st.candidate[j]) continue;
            if (unit(rng) < rho) st.deleted[j] = 1;
        }
        if (find_emptied_node(train_graph, st)) {
            st = st_backup;
            driver.result.reason = stop_reason::node_emptied;
            break;
        }
        metrics = driver.commit_epoch(epoch, st, seconds_since(te));
        if (best_fair_training - metrics.fairness_training > cfg.early_stop_delta) {
            best_fair_training = metrics.fairness_training;
            stall = 0;
        } else if (++stall >= cfg.early_stop_patience) {
            driver.result.reason = stop_reason::early_stopped;
            break;
        }
        if (epoch == cfg.max_epochs) driver.result.reason = stop_reason::completed;
    }
    return driver.result;
}

}  // namespace graphfair
