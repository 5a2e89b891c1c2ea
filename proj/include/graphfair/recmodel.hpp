#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/evalstat.hpp"
#include "graphfair/graph.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

enum class backbone_variant { layer_average, single_layer_linear };

inline std::string to_string(backbone_variant v) {
    return v == backbone_variant::layer_average ? "layer-average" : "single-layer-linear";
}

inline backbone_variant backbone_variant_from(const std::string& s) {
    if (s == "layer-average") return backbone_variant::layer_average;
    if (s == "single-layer-linear") return backbone_variant::single_layer_linear;
    throw input_error("unknown backbone variant: " + s);
}

// Frozen recommender weights: the embedding table and how deep it propagates.
// The explainer never mutates these.
struct model_parameters {
    matrix embeddings;  // (num_users + num_items) x d
    std::uint32_t depth = 2;
    backbone_variant variant = backbone_variant::layer_average;

    std::size_t dim() const { return embeddings.cols; }
};

using relevance_matrix = matrix;  // num_users x num_items

struct recommendation_lists {
    std::uint32_t k = 0;
    std::vector<std::uint32_t> items;  // row-major, num_users x k

    std::span<const std::uint32_t> row(std::size_t u) const {
        return {items.data() + u * k, k};
    }
    friend bool operator==(const recommendation_lists&, const recommendation_lists&) = default;
};

// Layer stack X_0 = E, X_k = L X_{k-1}; kept around so reverse mode can walk
// back through the propagation.
inline std::vector<matrix> propagate_layers(const normalized_adjacency& L, const matrix& E,
                                            std::uint32_t depth) {
    std::vector<matrix> layers;
    layers.reserve(depth + 1);
    layers.push_back(E);
    for (std::uint32_t k = 0; k < depth; ++k) {
        matrix next(E.rows, E.cols);
        L.multiply(layers.back(), next);
        layers.push_back(std::move(next));
    }
    return layers;
}

inline matrix propagate(const normalized_adjacency& L, const matrix& E, std::uint32_t depth,
                        backbone_variant variant) {
    if (variant == backbone_variant::single_layer_linear) {
        matrix out(E.rows, E.cols);
        L.multiply(E, out);
        return out;
    }
    std::vector<matrix> layers = propagate_layers(L, E, depth);
    matrix out(E.rows, E.cols);
    const double scale = 1.0 / double(depth + 1);
    for (const matrix& x : layers)
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += scale * x.data[i];
    return out;
}

inline matrix propagate(const normalized_adjacency& L, const model_parameters& params) {
    return propagate(L, params.embeddings, params.depth, params.variant);
}

inline relevance_matrix score(const matrix& final_embeddings, node_index num_users, node_index num_items) {
    relevance_matrix R(num_users, num_items);
    const std::size_t d = final_embeddings.cols;
    for (node_index u = 0; u < num_users; ++u) {
        const double* eu = final_embeddings.row(u);
        double* ru = R.row(u);
        for (node_index i = 0; i < num_items; ++i)
            ru[i] = dot(eu, final_embeddings.row(num_users + i), d);
    }
    return R;
}

// Top-k with the user's training history masked out before sorting; ties break
// toward the smaller item index.
inline recommendation_lists topk(const relevance_matrix& R, const bipartite_graph& train_graph,
                                 std::uint32_t k) {
    recommendation_lists out;
    out.k = k;
    out.items.resize(std::size_t(R.rows) * k);
    std::vector<char> masked(R.cols);
    std::vector<std::uint32_t> cand;
    cand.reserve(R.cols);
    for (std::size_t u = 0; u < R.rows; ++u) {
        std::fill(masked.begin(), masked.end(), 0);
        for (std::uint32_t e : train_graph.user_incident(node_index(u)))
            masked[train_graph.edges[e].item] = 1;
        cand.clear();
        for (std::uint32_t i = 0; i < R.cols; ++i)
            if (!masked[i]) cand.push_back(i);
        if (cand.size() < k) throw k_too_large(train_graph.user_ids[u]);
        const double* ru = R.row(u);
        auto better = [&](std::uint32_t a, std::uint32_t b) {
            if (ru[a] != ru[b]) return ru[a] > ru[b];
            return a < b;
        };
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
        std::copy(cand.begin(), cand.begin() + k, out.items.begin() + u * k);
    }
    return out;
}

struct bpr_triple {
    node_index user, pos_item, neg_item;
};

// Pairwise ranking loss over propagated embeddings: mean of -log sigmoid(
// score(u,i) - score(u,j)) over the triples, with its analytic gradient wrt
// the raw embedding table. The forward pass is linear in E, so the gradient
// propagates back through the same operator.
inline double bpr_loss_and_grad(const normalized_adjacency& L, const matrix& E, std::uint32_t depth,
                                backbone_variant variant, node_index num_users,
                                const std::vector<bpr_triple>& triples, matrix* grad_out) {
    const matrix estar = propagate(L, E, depth, variant);
    const std::size_t d = E.cols;
    matrix gstar(E.rows, E.cols);
    double loss = 0.0;
    const double inv_n = 1.0 / double(triples.size());
    for (const bpr_triple& t : triples) {
        const double* eu = estar.row(t.user);
        const double* ei = estar.row(num_users + t.pos_item);
        const double* ej = estar.row(num_users + t.neg_item);
        const double x = dot(eu, ei, d) - dot(eu, ej, d);
        const double s = logistic(x);
        loss += x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
        if (grad_out) {
            const double c = (s - 1.0) * inv_n;
            double* gu = gstar.row(t.user);
            double* gi = gstar.row(num_users + t.pos_item);
            double* gj = gstar.row(num_users + t.neg_item);
            for (std::size_t kk = 0; kk < d; ++kk) {
                gu[kk] += c * (ei[kk] - ej[kk]);
                gi[kk] += c * eu[kk];
                gj[kk] -= c * eu[kk];
            }
        }
    }
    if (grad_out) *grad_out = propagate(L, gstar, depth, variant);
    return loss * inv_n;
}

struct backbone_config {
    std::size_t dim = 64;
    std::uint32_t depth = 2;
    backbone_variant variant = backbone_variant::layer_average;
    std::uint32_t epochs = 300;
    double learning_rate = 1e-3;
    std::uint32_t neg_samples = 1;
    std::uint64_t seed = 1;
};

namespace detail {

struct adam_state {
    std::vector<double> m, v;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::uint64_t t = 0;

    explicit adam_state(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(b1, double(t));
        const double c2 = 1.0 - std::pow(b2, double(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

}  // namespace detail

inline double mean_ndcg_at_k(const relevance_matrix& R, const bipartite_graph& train_graph,
                             const eval_labels& labels, std::uint32_t k) {
    recommendation_lists lists = topk(R, train_graph, k);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t u = 0; u < labels.size(); ++u) {
        if (labels[u].empty()) continue;
        total += ndcg_at_k(lists.row(u), labels[u], k);
        ++counted;
    }
    return counted ? total / double(counted) : 0.0;
}

// Full-batch pairwise-ranking training with uniform negative sampling. When
// validation labels are given, the epoch with the best validation NDCG@10 is
// the one returned.
inline model_parameters train_backbone(const bipartite_graph& train_graph, const backbone_config& cfg,
                                       const eval_labels* validation = nullptr) {
    if (train_graph.num_edges() == 0) throw empty_graph();
    rng_t rng(cfg.seed);
    model_parameters params;
    params.depth = cfg.depth;
    params.variant = cfg.variant;
    params.embeddings = matrix(train_graph.num_nodes(), cfg.dim);
    const double init_scale = 0.1 / std::sqrt(double(cfg.dim));
    for (double& x : params.embeddings.data) x = init_scale * gaussian(rng);

    std::vector<std::vector<node_index>> history(train_graph.num_users);
    for (node_index u = 0; u < train_graph.num_users; ++u) {
        for (std::uint32_t e : train_graph.user_incident(u)) history[u].push_back(train_graph.edges[e].item);
        std::sort(history[u].begin(), history[u].end());
    }

    detail::adam_state opt(params.embeddings.data.size());
    std::vector<std::uint32_t> order(train_graph.num_edges());
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<node_index> item_dist(0, train_graph.num_items - 1);

    matrix best = params.embeddings;
    double best_ndcg = -1.0;
    matrix grad;
    std::vector<bpr_triple> triples;
    const normalized_adjacency L = normalize_adjacency(train_graph);
    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        triples.clear();
        for (std::uint32_t e : order) {
            const edge ed = train_graph.edges[e];
            if (history[ed.user].size() >= train_graph.num_items) continue;  // nothing unseen
            for (std::uint32_t s = 0; s < cfg.neg_samples; ++s) {
                node_index j;
                do {
                    j = item_dist(rng);
                } while (std::binary_search(history[ed.user].begin(), history[ed.user].end(), j));
                triples.push_back({ed.user, ed.item, j});
            }
        }
        if (triples.empty()) break;
        const double loss = bpr_loss_and_grad(L, params.embeddings, cfg.depth, cfg.variant,
                                              train_graph.num_users, triples, &grad);
        if (!std::isfinite(loss)) throw diverged_training("loss became non-finite at epoch " + std::to_string(epoch));
        opt.step(params.embeddings.data, grad.data, cfg.learning_rate);
        if (!params.embeddings.all_finite())
            throw diverged_training("embeddings became non-finite at epoch " + std::to_string(epoch));
        if (validation) {
            matrix estar = propagate(L, params);
            relevance_matrix R = score(estar, train_graph.num_users, train_graph.num_items);
            const double v = mean_ndcg_at_k(R, train_graph, *validation, 10);
            if (v > best_ndcg) {
                best_ndcg = v;
                best = params.embeddings;
            }
        }
    }
    if (validation && best_ndcg >= 0.0) params.embeddings = std::move(best);
    return params;
}

// ---- checkpoint io ----------------------------------------------------

inline void save_checkpoint(const std::string& path, const model_parameters& params,
                            node_index num_users, node_index num_items, const std::string& fingerprint) {
    std::string payload;
    payload += "d=" + std::to_string(params.dim()) + "\n";
    payload += "depth=" + std::to_string(params.depth) + "\n";
    payload += "variant=" + to_string(params.variant) + "\n";
    payload += "num_users=" + std::to_string(num_users) + "\n";
    payload += "num_items=" + std::to_string(num_items) + "\n";
    for (std::size_t r = 0; r < params.embeddings.rows; ++r) {
        for (std::size_t c = 0; c < params.embeddings.cols; ++c) {
            if (c) payload += '\t';
            payload += format_double(params.embeddings(r, c));
        }
        payload += '\n';
    }
    std::ofstream out(path);
    if (!out) throw input_error("cannot write checkpoint " + path);
    out << "# graphfair checkpoint v1\n";
    out << "# fingerprint: " << fingerprint << "\n";
    out << "# checksum: " << hex64(fnv1a64(payload)) << "\n";
    out << payload;
}

struct checkpoint {
    model_parameters params;
    node_index num_users = 0, num_items = 0;
    std::string fingerprint;
};

inline checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open checkpoint " + path);
    std::string line;
    if (!std::getline(in, line) || line != "# graphfair checkpoint v1")
        throw parse_error(path, 1, "not a graphfair checkpoint");
    checkpoint ck;
    std::string checksum;
    if (std::getline(in, line) && line.rfind("# fingerprint: ", 0) == 0)
        ck.fingerprint = line.substr(15);
    if (std::getline(in, line) && line.rfind("# checksum: ", 0) == 0) checksum = line.substr(12);
    std::string payload;
    while (std::getline(in, line)) payload += line + "\n";
    if (checksum.empty() || hex64(fnv1a64(payload)) != checksum)
        throw parse_error(path, 3, "checkpoint checksum mismatch");
    std::size_t d = 0;
    std::size_t pos = 0, row = 0;
    std::vector<std::string> lines = split(payload, "\n");
    auto kv = [&](const std::string& l, const char* key) -> std::optional<std::string> {
        std::string prefix = std::string(key) + "=";
        if (l.rfind(prefix, 0) == 0) return l.substr(prefix.size());
        return std::nullopt;
    };
    for (; pos < lines.size(); ++pos) {
        const std::string& l = lines[pos];
        if (l.empty()) continue;
        if (auto v = kv(l, "d")) d = std::stoul(*v);
        else if (auto v2 = kv(l, "depth")) ck.params.depth = std::uint32_t(std::stoul(*v2));
        else if (auto v3 = kv(l, "variant")) ck.params.variant = backbone_variant_from(*v3);
        else if (auto v4 = kv(l, "num_users")) ck.num_users = node_index(std::stoul(*v4));
        else if (auto v5 = kv(l, "num_items")) ck.num_items = node_index(std::stoul(*v5));
        else break;
    }
    const std::size_t rows = std::size_t(ck.num_users) + ck.num_items;
    if (d == 0 || rows == 0) throw parse_error(path, pos + 4, "incomplete checkpoint header");
    ck.params.embeddings = matrix(rows, d);
    for (; pos < lines.size() && row < rows; ++pos, ++row) {
        std::vector<std::string> vals = split(lines[pos], "\t");
        if (vals.size() != d) throw parse_error(path, pos + 4, "bad embedding row");
        for (std::size_t c = 0; c < d; ++c) ck.params.embeddings(row, c) = std::stod(vals[c]);
    }
    if (row != rows) throw parse_error(path, pos + 4, "truncated checkpoint");
    return ck;
}

}  // namespace graphfair
