#pragma once

#include <stdexcept>
#include <string>

namespace graphfair {

// Base for all library errors. CLI maps subclasses to exit codes:
// input/data problems -> 2, training failure -> 3, explainer abort -> 4.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct input_error : error {
    using error::error;
};

struct duplicate_edge : input_error {
    duplicate_edge(const std::string& user, const std::string& item)
        : input_error("duplicate edge (" + user + ", " + item + ")") {}
};

struct empty_graph : input_error {
    empty_graph() : input_error("no interactions to build a graph from") {}
};

struct parse_error : input_error {
    parse_error(const std::string& path, std::size_t line, const std::string& what)
        : input_error(path + ":" + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

struct missing_attribute : input_error {
    explicit missing_attribute(const std::string& users)
        : input_error("users without attribute rows: " + users) {}
};

struct too_few_interactions : input_error {
    explicit too_few_interactions(const std::string& user)
        : input_error("user " + user + " has fewer than 3 interactions, cannot split") {}
};

struct degenerate_group : input_error {
    explicit degenerate_group(const std::string& what) : input_error(what) {}
};

struct diverged_training : error {
    explicit diverged_training(const std::string& what) : error(what) {}
};

struct k_too_large : input_error {
    explicit k_too_large(const std::string& user)
        : input_error("k exceeds unseen-item count for user " + user) {}
};

struct no_relevant_items : input_error {
    no_relevant_items() : input_error("relevance vector has no positive entry") {}
};

struct invalid_init : input_error {
    explicit invalid_init(double alpha)
        : input_error("alpha " + std::to_string(alpha) +
                      " binarizes to 0; initial perturbed graph would differ from the input graph") {}
};

struct non_finite_gradient : error {
    non_finite_gradient() : error("gradient contains a non-finite value") {}
};

struct invalid_step : input_error {
    invalid_step() : input_error("finite-difference step must be positive") {}
};

struct node_emptied : error {
    explicit node_emptied(const std::string& node)
        : error("all edges of node " + node + " would be deleted") {}
};

struct batch_too_large : input_error {
    batch_too_large(std::size_t batch, std::size_t users)
        : input_error("batch size " + std::to_string(batch) + " does not split " +
                      std::to_string(users) + " users into at least five partitions") {}
};

struct all_zero_differences : input_error {
    all_zero_differences() : input_error("all paired differences are zero") {}
};

struct all_zero_values : input_error {
    all_zero_values() : input_error("gini is undefined for all-zero values") {}
};

struct group_too_small : input_error {
    explicit group_too_small(std::size_t n)
        : input_error("quartile partition needs at least 4 nodes, got " + std::to_string(n)) {}
};

struct no_deletions : input_error {
    no_deletions() : input_error("deleted-edge distribution needs at least one deleted edge") {}
};

struct fingerprint_mismatch : input_error {
    fingerprint_mismatch(const std::string& expected, const std::string& found)
        : input_error("config fingerprint mismatch: expected " + expected + ", found " + found) {}
};

}  // namespace graphfair
