#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphfair/data_io.hpp"
#include "graphfair/error.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

// Desk-scale stand-in for the real corpora: two demographic groups with a
// planted utility gap (denser histories and a different popularity skew for
// group A). Group A users are labeled gender M / Younger, group B users F /
// Older. overlap in [0,1] controls how much of the item catalogue the two
// groups share; 0 means disjoint item pools.
struct synthetic_spec {
    std::uint32_t users_a = 50;
    std::uint32_t users_b = 50;
    std::uint32_t items = 200;
    double mean_degree_a = 20.0;
    double mean_degree_b = 10.0;
    double skew_a = 1.0;   // popularity exponent, >= 0
    double skew_b = 1.0;
    double overlap = 0.5;
    std::uint32_t min_item_degree = 0;  // 0 = no repair pass for rare items
    std::uint64_t seed = 7;

    void validate() const {
        if (users_a == 0 || users_b == 0 || items == 0) throw input_error("synthetic counts must be positive");
        if (mean_degree_a <= 0 || mean_degree_b <= 0) throw input_error("synthetic mean degrees must be positive");
        if (skew_a < 0 || skew_b < 0) throw input_error("synthetic skew exponents must be >= 0");
        if (overlap < 0 || overlap > 1) throw input_error("synthetic overlap must lie in [0,1]");
    }
};

namespace detail {

inline std::uint32_t poisson_knuth(rng_t& rng, double lambda) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double limit = std::exp(-lambda);
    double p = 1.0;
    std::uint32_t k = 0;
    do {
        ++k;
        p *= unit(rng);
    } while (p > limit);
    return k - 1;
}

}  // namespace detail

struct synthetic_data {
    std::vector<interaction_record> records;
    user_attribute_table attributes;
};

inline synthetic_data generate_synthetic(const synthetic_spec& spec) {
    spec.validate();
    rng_t rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto shared = std::uint32_t(std::lround(spec.overlap * spec.items));
    const std::uint32_t exclusive = spec.items - shared;
    const std::uint32_t ex_a = exclusive / 2 + exclusive % 2;

    // pools: shared items first, then the group-exclusive block
    std::vector<std::uint32_t> pool_a, pool_b;
    for (std::uint32_t i = 0; i < shared; ++i) {
        pool_a.push_back(i);
        pool_b.push_back(i);
    }
    for (std::uint32_t i = shared; i < shared + ex_a; ++i) pool_a.push_back(i);
    for (std::uint32_t i = shared + ex_a; i < spec.items; ++i) pool_b.push_back(i);

    auto weights_for = [](std::size_t n, double skew) {
        std::vector<double> w(n);
        for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(double(r + 1), -skew);
        return w;
    };
    const std::vector<double> w_a = weights_for(pool_a.size(), spec.skew_a);
    const std::vector<double> w_b = weights_for(pool_b.size(), spec.skew_b);

    synthetic_data out;
    std::int64_t clock = 0;
    auto emit_user = [&](const std::string& user, const std::vector<std::uint32_t>& pool,
                         const std::vector<double>& weights, double mean_degree) {
        const auto cap = std::uint32_t(pool.size());
        std::uint32_t n = std::min(cap, std::max(4u, detail::poisson_knuth(rng, mean_degree)));
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        std::vector<char> taken(pool.size(), 0);
        for (std::uint32_t k = 0; k < n; ++k) {
            std::size_t slot;
            do {
                slot = pick(rng);
            } while (taken[slot]);
            taken[slot] = 1;
            out.records.push_back({user, "i" + std::to_string(pool[slot]), clock++});
        }
    };

    for (std::uint32_t u = 0; u < spec.users_a; ++u) {
        const std::string user = "a" + std::to_string(u);
        emit_user(user, pool_a, w_a, spec.mean_degree_a);
        out.attributes.rows[user] = {"M", 25.0, "Younger"};
    }
    for (std::uint32_t u = 0; u < spec.users_b; ++u) {
        const std::string user = "b" + std::to_string(u);
        emit_user(user, pool_b, w_b, spec.mean_degree_b);
        out.attributes.rows[user] = {"F", 50.0, "Older"};
    }

    if (spec.min_item_degree > 0) {
        // pad items that were sampled but stayed rare with extra interactions
        // from users whose pool contains them
        std::map<std::string, std::set<std::string>> users_of;
        for (const auto& r : out.records) users_of[r.item_id].insert(r.user_id);
        std::vector<char> in_pool_a(spec.items, 0), in_pool_b(spec.items, 0);
        for (std::uint32_t i : pool_a) in_pool_a[i] = 1;
        for (std::uint32_t i : pool_b) in_pool_b[i] = 1;
        for (auto& [item, users] : users_of) {
            const auto idx = std::uint32_t(std::stoul(item.substr(1)));
            std::vector<std::string> donors;
            if (in_pool_a[idx])
                for (std::uint32_t u = 0; u < spec.users_a; ++u) donors.push_back("a" + std::to_string(u));
            if (in_pool_b[idx])
                for (std::uint32_t u = 0; u < spec.users_b; ++u) donors.push_back("b" + std::to_string(u));
            while (users.size() < spec.min_item_degree && users.size() < donors.size()) {
                const std::string& pick = donors[rng() % donors.size()];
                if (!users.insert(pick).second) continue;
                out.records.push_back({pick, item, clock++});
            }
        }
    }
    return out;
}

}  // namespace graphfair
