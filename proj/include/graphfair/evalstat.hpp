#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/losses.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

// Exact NDCG@k with binary gains; the ideal DCG assumes min(k, |relevant|)
// hits at the top.
inline double ndcg_at_k(std::span<const node_index> ranked, const std::vector<node_index>& relevant,
                        std::uint32_t k) {
    if (relevant.empty()) throw no_relevant_items();
    if (ranked.size() != k) throw input_error("ranked list length must equal k");
    double dcg = 0.0;
    for (std::uint32_t p = 0; p < k; ++p)
        if (std::find(relevant.begin(), relevant.end(), ranked[p]) != relevant.end())
            dcg += 1.0 / log2p(2.0 + double(p));
    double ideal = 0.0;
    const std::size_t hits = std::min<std::size_t>(k, relevant.size());
    for (std::size_t p = 1; p <= hits; ++p) ideal += 1.0 / log2p(1.0 + double(p));
    return dcg / ideal;
}

struct subgroup_sample {
    std::vector<node_index> users;
};

// 100 user samples of batch size, each drawn without replacement and holding
// the dataset's group proportions (largest-remainder allocation, so within
// one user of exact). The batch must split the users in at least five
// partitions, keeping resampled subgroups mostly distinct.
inline std::vector<subgroup_sample> sample_subgroups(std::span<const node_index> users,
                                                     const group_assignment& groups,
                                                     std::size_t batch_size, std::size_t count,
                                                     std::uint64_t seed) {
    if (batch_size == 0 || batch_size * 5 > users.size()) throw batch_too_large(batch_size, users.size());
    std::vector<node_index> g0, g1;
    for (node_index u : users) (groups.label[u] ? g1 : g0).push_back(u);
    if (g0.empty() || g1.empty()) throw degenerate_group("both groups must appear among the sampled users");
    // largest-remainder allocation of the batch between the two groups
    const double share0 = double(g0.size()) / double(users.size());
    const double exact0 = share0 * double(batch_size);
    const double exact1 = double(batch_size) - exact0;
    auto n0 = std::size_t(std::floor(exact0));
    auto n1 = std::size_t(std::floor(exact1));
    if (n0 + n1 < batch_size) {
        if (exact0 - double(n0) >= exact1 - double(n1)) ++n0;
        else ++n1;
    }
    n0 = std::min(n0, g0.size());
    n1 = std::min(batch_size - n0, g1.size());

    rng_t rng(seed);
    std::vector<subgroup_sample> samples(count);
    auto draw = [&](std::vector<node_index>& pool, std::size_t n, std::vector<node_index>& out) {
        // partial Fisher-Yates
        for (std::size_t t = 0; t < n; ++t) {
            std::uniform_int_distribution<std::size_t> pick(t, pool.size() - 1);
            std::swap(pool[t], pool[pick(rng)]);
            out.push_back(pool[t]);
        }
    };
    for (auto& s : samples) {
        s.users.reserve(n0 + n1);
        draw(g0, n0, s.users);
        draw(g1, n1, s.users);
    }
    return samples;
}

// Signed utility gap per sample: mean NDCG of the unprotected members minus
// the protected ones, no modulus.
inline std::vector<double> delta_ndcg(const std::vector<subgroup_sample>& samples,
                                      std::span<const double> per_user_ndcg,
                                      const group_assignment& groups) {
    std::vector<double> out;
    out.reserve(samples.size());
    const std::uint8_t unprot = groups.unprotected_label();
    for (const auto& s : samples) {
        double sum_u = 0.0, sum_p = 0.0;
        std::size_t n_u = 0, n_p = 0;
        for (node_index u : s.users) {
            if (groups.label[u] == unprot) {
                sum_u += per_user_ndcg[u];
                ++n_u;
            } else {
                sum_p += per_user_ndcg[u];
                ++n_p;
            }
        }
        const double mean_u = n_u ? sum_u / double(n_u) : 0.0;
        const double mean_p = n_p ? sum_p / double(n_p) : 0.0;
        out.push_back(mean_u - mean_p);
    }
    return out;
}

enum class signed_rank_method { exact, normal_approximation };

struct signed_rank_result {
    double statistic = 0.0;  // W = min(W+, W-)
    double p_value = 1.0;    // two-sided
    std::size_t n = 0;       // after dropping zero differences
    signed_rank_method method = signed_rank_method::exact;
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Wilcoxon signed-rank test, two-sided. Zero differences are dropped, tied
// absolute differences get average ranks. Exact null distribution (subset-sum
// counting over doubled ranks) for n <= 25, else normal approximation with
// tie and continuity corrections.
inline signed_rank_result wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 5)
        throw input_error("signed-rank test needs paired samples of equal length >= 5");
    std::vector<double> diff;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d != 0.0) diff.push_back(d);
    }
    if (diff.empty()) throw all_zero_differences();
    const std::size_t n = diff.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return std::abs(diff[a]) < std::abs(diff[b]); });
    std::vector<double> rank(n);
    std::vector<std::size_t> tie_sizes;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(diff[order[j]]) == std::abs(diff[order[i]])) ++j;
        const double avg = (double(i + 1) + double(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) rank[order[t]] = avg;
        tie_sizes.push_back(j - i);
        i = j;
    }
    double w_pos = 0.0, w_neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) (diff[i] > 0 ? w_pos : w_neg) += rank[i];

    signed_rank_result res;
    res.n = n;
    res.statistic = std::min(w_pos, w_neg);
    if (n <= 25) {
        res.method = signed_rank_method::exact;
        // distribution of 2*W+ over all 2^n sign assignments
        std::vector<std::uint64_t> doubled(n);
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            doubled[i] = std::uint64_t(std::llround(2.0 * rank[i]));
            total += doubled[i];
        }
        std::vector<double> count(total + 1, 0.0);
        count[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = total + 1; s-- > doubled[i];) count[s] += count[s - doubled[i]];
        const double denom = std::pow(2.0, double(n));
        const auto s_obs = std::uint64_t(std::llround(2.0 * w_pos));
        double below = 0.0, above = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            if (s <= s_obs) below += count[s];
            if (s >= s_obs) above += count[s];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(below, above) / denom);
    } else {
        res.method = signed_rank_method::normal_approximation;
        const double nn = double(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
        for (std::size_t t : tie_sizes) {
            const double tt = double(t);
            var -= tt * (tt * tt - 1.0) / 48.0;
        }
        if (var <= 0.0) throw all_zero_differences();
        const double z = (res.statistic - mean + 0.5) / std::sqrt(var);
        res.p_value = std::min(1.0, 2.0 * detail::normal_cdf(z));
    }
    if (res.p_value <= 0.0) res.p_value = std::nextafter(0.0, 1.0);
    return res;
}

// Strict threshold: flag_i = (p_i < 0.05 / m).
inline std::vector<bool> bonferroni(std::span<const double> p_values, std::size_t m) {
    if (m < 1) throw input_error("bonferroni needs m >= 1");
    std::vector<bool> flags(p_values.size());
    for (std::size_t i = 0; i < p_values.size(); ++i) flags[i] = p_values[i] < 0.05 / double(m);
    return flags;
}

struct group_change {
    std::uint8_t label = 0;
    std::string name;
    bool unprotected = false;
    double ndcg_before = 0.0;
    double ndcg_after = 0.0;
    double relative_change = 0.0;  // (after - before) / before
    double p_value = 1.0;
    bool significant = false;
};

struct utility_report {
    std::vector<group_change> groups;  // unprotected first
};

// Table-2-shaped report: per group, the mean NDCG before and after the
// perturbation, the relative change, and the significance of the per-subgroup
// average shifts under the signed-rank test with Bonferroni correction over
// the report's tests.
inline utility_report utility_change_report(std::span<const double> before, std::span<const double> after,
                                            const group_assignment& groups,
                                            const std::vector<subgroup_sample>& samples) {
    utility_report report;
    std::vector<double> pvals;
    for (std::uint8_t lab : {groups.unprotected_label(), groups.protected_label}) {
        group_change gc;
        gc.label = lab;
        gc.name = groups.name(lab);
        gc.unprotected = lab == groups.unprotected_label();
        double sb = 0.0, sa = 0.0;
        std::size_t cnt = 0;
        for (std::size_t u = 0; u < groups.label.size(); ++u) {
            if (groups.label[u] != lab || std::isnan(before[u])) continue;
            sb += before[u];
            sa += after[u];
            ++cnt;
        }
        if (cnt == 0) throw degenerate_group("group " + gc.name + " has no evaluated users");
        gc.ndcg_before = sb / double(cnt);
        gc.ndcg_after = sa / double(cnt);
        gc.relative_change = gc.ndcg_before != 0.0 ? (gc.ndcg_after - gc.ndcg_before) / gc.ndcg_before : 0.0;
        std::vector<double> avg_before, avg_after;
        for (const auto& s : samples) {
            double b = 0.0, a = 0.0;
            std::size_t k = 0;
            for (node_index u : s.users) {
                if (groups.label[u] != lab) continue;
                b += before[u];
                a += after[u];
                ++k;
            }
            if (k == 0) continue;
            avg_before.push_back(b / double(k));
            avg_after.push_back(a / double(k));
        }
        try {
            gc.p_value = wilcoxon_signed_rank(avg_before, avg_after).p_value;
        } catch (const all_zero_differences&) {
            gc.p_value = 1.0;
        }
        pvals.push_back(gc.p_value);
        report.groups.push_back(std::move(gc));
    }
    std::vector<bool> flags = bonferroni(pvals, pvals.size());
    for (std::size_t i = 0; i < report.groups.size(); ++i) report.groups[i].significant = flags[i];
    return report;
}

}  // namespace graphfair
