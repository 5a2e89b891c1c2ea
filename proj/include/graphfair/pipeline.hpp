#pragma once

#include <string>
#include <vector>

#include "graphfair/data_io.hpp"
#include "graphfair/graph.hpp"
#include "graphfair/losses.hpp"

namespace graphfair {

// Glue between the record-level world (string ids, attribute tables) and the
// dense-index world the numerics run on.

inline bipartite_graph graph_from_records(const std::vector<interaction_record>& records) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(records.size());
    for (const auto& r : records) pairs.emplace_back(r.user_id, r.item_id);
    return build_graph(pairs);
}

// Evaluation labels in the train graph's index space. Records whose item never
// appears in the training catalogue cannot be recommended and are skipped;
// users whose user id is unknown to the graph are skipped too.
inline eval_labels labels_from_records(const bipartite_graph& train_graph,
                                       const std::vector<interaction_record>& records) {
    eval_labels labels(train_graph.num_users);
    for (const auto& r : records) {
        auto uit = train_graph.user_index.find(r.user_id);
        auto iit = train_graph.item_index.find(r.item_id);
        if (uit == train_graph.user_index.end() || iit == train_graph.item_index.end()) continue;
        labels[uit->second].push_back(iit->second);
    }
    for (auto& l : labels) {
        std::sort(l.begin(), l.end());
        l.erase(std::unique(l.begin(), l.end()), l.end());
    }
    return labels;
}

// Binary group labels from the attribute table; label 0/1 follow the sorted
// order of the two distinct label strings so the mapping is deterministic.
inline group_assignment groups_from_attributes(const bipartite_graph& graph,
                                               const user_attribute_table& table,
                                               const std::string& attribute) {
    std::vector<std::string> raw(graph.num_users);
    std::string lo, hi;
    for (node_index u = 0; u < graph.num_users; ++u) {
        raw[u] = table.label(graph.user_ids[u], attribute);
        if (lo.empty() || raw[u] < lo) lo = raw[u];
        if (hi.empty() || raw[u] > hi) hi = raw[u];
    }
    if (lo == hi) throw degenerate_group("attribute '" + attribute + "' has a single label: " + lo);
    group_assignment groups;
    groups.name0 = lo;
    groups.name1 = hi;
    groups.label.resize(graph.num_users);
    for (node_index u = 0; u < graph.num_users; ++u) {
        if (raw[u] != lo && raw[u] != hi)
            throw degenerate_group("attribute '" + attribute + "' has more than two labels");
        groups.label[u] = raw[u] == hi ? 1 : 0;
    }
    groups.validate();
    return groups;
}

}  // namespace graphfair
