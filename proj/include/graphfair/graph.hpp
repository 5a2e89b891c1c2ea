#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

using node_index = std::uint32_t;

struct edge {
    node_index user = 0;
    node_index item = 0;
    friend bool operator==(const edge&, const edge&) = default;
};

// Per-node edge counts, users first then items (node index = num_users + item).
using degree_vector = std::vector<std::uint32_t>;

// Immutable user-item interaction graph. Edges are undirected and stored once,
// in first-seen order; the CSR orderings index into that edge list so per-edge
// values (weights, perturbations) attach to a single id.
struct bipartite_graph {
    node_index num_users = 0;
    node_index num_items = 0;
    std::vector<edge> edges;

    // CSR over users and over items; entries are edge ids.
    std::vector<std::uint32_t> user_offsets;
    std::vector<std::uint32_t> user_edge_ids;
    std::vector<std::uint32_t> item_offsets;
    std::vector<std::uint32_t> item_edge_ids;

    // dense index <-> external id
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;
    std::unordered_map<std::string, node_index> user_index;
    std::unordered_map<std::string, node_index> item_index;

    std::size_t num_nodes() const { return std::size_t(num_users) + num_items; }
    std::size_t num_edges() const { return edges.size(); }

    std::span<const std::uint32_t> user_incident(node_index u) const {
        return {user_edge_ids.data() + user_offsets[u], user_offsets[u + 1] - user_offsets[u]};
    }
    std::span<const std::uint32_t> item_incident(node_index i) const {
        return {item_edge_ids.data() + item_offsets[i], item_offsets[i + 1] - item_offsets[i]};
    }

    std::uint32_t user_degree(node_index u) const { return user_offsets[u + 1] - user_offsets[u]; }
    std::uint32_t item_degree(node_index i) const { return item_offsets[i + 1] - item_offsets[i]; }

    std::string node_name(std::size_t node) const {
        return node < num_users ? "user " + user_ids[node]
                                : "item " + item_ids[node - num_users];
    }
};

// Symmetrically normalized adjacency over a graph's edges: the value stored at
// edge e = (u, i) is w_e / sqrt(d(u) * d(i)) with d the (weighted) degree, and
// appears identically at the (u,i) and (i,u) positions. Zero-degree rows stay
// all-zero (guarded inverse square root), never NaN.
struct normalized_adjacency {
    const bipartite_graph* graph = nullptr;
    std::vector<double> edge_value;       // per edge id
    std::vector<double> weighted_degree;  // per node, users then items

    double value(std::uint32_t edge_id) const { return edge_value[edge_id]; }

    // y = L x over the full node space (x, y of length num_nodes * dim).
    void multiply(const matrix& x, matrix& y) const {
        const auto& g = *graph;
        const std::size_t d = x.cols;
        y.fill(0.0);
        for (node_index u = 0; u < g.num_users; ++u) {
            double* yu = y.row(u);
            for (std::uint32_t e : g.user_incident(u)) {
                const double v = edge_value[e];
                if (v == 0.0) continue;
                const double* xi = x.row(g.num_users + g.edges[e].item);
                for (std::size_t k = 0; k < d; ++k) yu[k] += v * xi[k];
            }
        }
        for (node_index i = 0; i < g.num_items; ++i) {
            double* yi = y.row(g.num_users + i);
            for (std::uint32_t e : g.item_incident(i)) {
                const double v = edge_value[e];
                if (v == 0.0) continue;
                const double* xu = x.row(g.edges[e].user);
                for (std::size_t k = 0; k < d; ++k) yi[k] += v * xu[k];
            }
        }
    }
};

namespace detail {

inline void build_csr(std::size_t n, const std::vector<edge>& edges, bool by_user,
                      std::vector<std::uint32_t>& offsets, std::vector<std::uint32_t>& ids) {
    offsets.assign(n + 1, 0);
    for (const edge& e : edges) ++offsets[(by_user ? e.user : e.item) + 1];
    for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
    ids.resize(edges.size());
    std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::uint32_t e = 0; e < edges.size(); ++e)
        ids[cursor[by_user ? edges[e].user : edges[e].item]++] = e;
}

inline void check_no_duplicates(const bipartite_graph& g) {
    std::vector<node_index> items;
    for (node_index u = 0; u < g.num_users; ++u) {
        items.clear();
        for (std::uint32_t e : g.user_incident(u)) items.push_back(g.edges[e].item);
        std::sort(items.begin(), items.end());
        auto dup = std::adjacent_find(items.begin(), items.end());
        if (dup != items.end()) throw duplicate_edge(g.user_ids[u], g.item_ids[*dup]);
    }
}

}  // namespace detail

// Dense indices are assigned in first-seen order. Duplicate (user, item) pairs
// are an input error here: deduplication is the ingest step's job.
inline bipartite_graph build_graph(const std::vector<std::pair<std::string, std::string>>& interactions) {
    if (interactions.empty()) throw empty_graph();
    bipartite_graph g;
    g.edges.reserve(interactions.size());
    for (const auto& [user, item] : interactions) {
        auto [uit, unew] = g.user_index.try_emplace(user, node_index(g.user_ids.size()));
        if (unew) g.user_ids.push_back(user);
        auto [iit, inew] = g.item_index.try_emplace(item, node_index(g.item_ids.size()));
        if (inew) g.item_ids.push_back(item);
        g.edges.push_back({uit->second, iit->second});
    }
    g.num_users = node_index(g.user_ids.size());
    g.num_items = node_index(g.item_ids.size());
    detail::build_csr(g.num_users, g.edges, true, g.user_offsets, g.user_edge_ids);
    detail::build_csr(g.num_items, g.edges, false, g.item_offsets, g.item_edge_ids);
    detail::check_no_duplicates(g);
    return g;
}

// Convenience for tests and synthetic pipelines working in dense indices.
inline bipartite_graph build_graph_indexed(node_index num_users, node_index num_items,
                                           const std::vector<edge>& edges) {
    if (edges.empty()) throw empty_graph();
    bipartite_graph g;
    g.num_users = num_users;
    g.num_items = num_items;
    g.edges = edges;
    for (const edge& e : edges)
        if (e.user >= num_users || e.item >= num_items)
            throw input_error("edge index out of range");
    g.user_ids.resize(num_users);
    g.item_ids.resize(num_items);
    for (node_index u = 0; u < num_users; ++u) {
        g.user_ids[u] = "u" + std::to_string(u);
        g.user_index.emplace(g.user_ids[u], u);
    }
    for (node_index i = 0; i < num_items; ++i) {
        g.item_ids[i] = "i" + std::to_string(i);
        g.item_index.emplace(g.item_ids[i], i);
    }
    detail::build_csr(g.num_users, g.edges, true, g.user_offsets, g.user_edge_ids);
    detail::build_csr(g.num_items, g.edges, false, g.item_offsets, g.item_edge_ids);
    detail::check_no_duplicates(g);
    return g;
}

inline degree_vector degrees(const bipartite_graph& g) {
    degree_vector d(g.num_nodes(), 0);
    for (node_index u = 0; u < g.num_users; ++u) d[u] = g.user_degree(u);
    for (node_index i = 0; i < g.num_items; ++i) d[g.num_users + i] = g.item_degree(i);
    return d;
}

// L = D^{-1/2} A D^{-1/2}; with weights, degrees are the weighted row sums.
// The unweighted call is the weights-all-one case.
inline normalized_adjacency normalize_adjacency(const bipartite_graph& g,
                                                const std::vector<double>* edge_weights = nullptr) {
    normalized_adjacency L;
    L.graph = &g;
    L.weighted_degree.assign(g.num_nodes(), 0.0);
    for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
        const double w = edge_weights ? (*edge_weights)[e] : 1.0;
        L.weighted_degree[g.edges[e].user] += w;
        L.weighted_degree[g.num_users + g.edges[e].item] += w;
    }
    std::vector<double> inv_sqrt(g.num_nodes());
    for (std::size_t n = 0; n < g.num_nodes(); ++n)
        inv_sqrt[n] = inv_sqrt_or_zero(L.weighted_degree[n]);
    L.edge_value.resize(g.edges.size());
    for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
        const double w = edge_weights ? (*edge_weights)[e] : 1.0;
        L.edge_value[e] = w * inv_sqrt[g.edges[e].user] * inv_sqrt[g.num_users + g.edges[e].item];
    }
    return L;
}

}  // namespace graphfair
