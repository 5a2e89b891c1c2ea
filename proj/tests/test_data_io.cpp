#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "graphfair/data_io.hpp"
#include "graphfair/graph.hpp"
#include "graphfair/synthetic.hpp"

using namespace graphfair;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
    fs::path p = fs::path(testing::TempDir()) / name;
    std::ofstream out(p);
    out << content;
    return p;
}

std::vector<interaction_record> recs(std::initializer_list<interaction_record> rs) { return rs; }

}  // namespace

TEST(Ingest, DedupKeepsLatestTimestamp) {
    auto inter = write_temp("inter1.tsv", "user_id\titem_id\ttimestamp\nu\ti\t5\nu\ti\t9\n");
    auto attrs = write_temp("attr1.tsv", "user_id\tgender\tage\nu\tM\t30\n");
    ingest_result r = ingest(inter.string(), attrs.string(), format_spec{});
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(*r.records[0].timestamp, 9);
}

TEST(Ingest, ParseErrorCarriesLineNumber) {
    auto inter = write_temp("inter2.tsv", "user_id\titem_id\ttimestamp\nu\ti\t5\na\tb\n");
    auto attrs = write_temp("attr2.tsv", "user_id\tgender\tage\nu\tM\t30\n");
    try {
        ingest(inter.string(), attrs.string(), format_spec{});
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_EQ(e.line, 3u);
    }
}

TEST(Ingest, MissingAttributeListsUsers) {
    auto inter = write_temp("inter3.tsv", "user_id\titem_id\ttimestamp\nu\ti\t5\nv\ti\t6\n");
    auto attrs = write_temp("attr3.tsv", "user_id\tgender\tage\nu\tM\t30\n");
    try {
        ingest(inter.string(), attrs.string(), format_spec{});
        FAIL() << "expected missing_attribute";
    } catch (const missing_attribute& e) {
        EXPECT_NE(std::string(e.what()).find("v"), std::string::npos);
    }
}

TEST(Ingest, HeaderlessMultiCharDelimiter) {
    format_spec fmt;
    fmt.delimiter = "::";
    fmt.has_header = false;
    fmt.user_col = "0";
    fmt.item_col = "1";
    fmt.timestamp_col = "3";
    fmt.attr_user_col = "0";
    fmt.gender_col = "1";
    fmt.age_col = "2";
    auto inter = write_temp("inter4.dat", "1::10::5::978300760\n1::11::3::978302109\n");
    auto attrs = write_temp("attr4.dat", "1::F::1\n");
    ingest_result r = ingest(inter.string(), attrs.string(), fmt);
    ASSERT_EQ(r.records.size(), 2u);
    EXPECT_EQ(r.records[0].user_id, "1");
    EXPECT_EQ(r.records[0].item_id, "10");
    EXPECT_EQ(*r.records[0].timestamp, 978300760);
    EXPECT_EQ(r.attributes.label("1", "gender"), "F");
}

TEST(Ingest, NormalizedOutputIsFixedPoint) {
    auto inter = write_temp("inter5.tsv", "user_id\titem_id\ttimestamp\nu\ti\t5\nu\tj\t7\nu\ti\t9\nv\ti\t2\n");
    auto attrs = write_temp("attr5.tsv", "user_id\tgender\tage\nu\tM\t30\nv\tF\t40\n");
    ingest_result first = ingest(inter.string(), attrs.string(), format_spec{});
    auto rewritten = fs::path(testing::TempDir()) / "inter5_rw.tsv";
    write_records(rewritten.string(), first.records);
    ingest_result second = ingest(rewritten.string(), attrs.string(), format_spec{});
    EXPECT_EQ(first.records, second.records);
}

TEST(GroupEvents, KeepsLastListenTimestamp) {
    auto grouped = group_events_by_item(recs({{"u", "a", 1}, {"u", "a", 4}, {"u", "a", 9}}));
    ASSERT_EQ(grouped.size(), 1u);
    EXPECT_EQ(*grouped[0].timestamp, 9);
}

TEST(GroupEvents, IdempotentOnUniqueRecords) {
    auto in = recs({{"u", "a", 3}, {"u", "b", 5}});
    EXPECT_EQ(group_events_by_item(in), in);
}

TEST(GroupEvents, IndependentPerUser) {
    auto grouped = group_events_by_item(recs({{"u", "a", 1}, {"v", "a", 7}, {"u", "a", 2}}));
    ASSERT_EQ(grouped.size(), 2u);
    EXPECT_EQ(*grouped[0].timestamp, 2);
    EXPECT_EQ(*grouped[1].timestamp, 7);
}

TEST(FilterMinDegree, DropsShortHistories) {
    std::vector<interaction_record> in;
    for (int i = 0; i < 4; ++i) in.push_back({"short", "i" + std::to_string(i), {}});
    for (int i = 0; i < 5; ++i) in.push_back({"long", "i" + std::to_string(i), {}});
    auto out = filter_min_degree(in, 5);
    EXPECT_EQ(out.size(), 5u);
    for (const auto& r : out) EXPECT_EQ(r.user_id, "long");
}

TEST(FilterMinDegree, KminOneIsIdentity) {
    auto in = recs({{"u", "a", 1}, {"v", "b", 2}});
    EXPECT_EQ(filter_min_degree(in, 1), in);
}

TEST(FilterMinDegree, AllBelowThresholdGivesEmpty) {
    auto out = filter_min_degree(recs({{"u", "a", 1}}), 5);
    EXPECT_TRUE(out.empty());
    EXPECT_THROW(build_graph({}), empty_graph);
}

TEST(BinarizeAge, ThresholdRule) {
    user_attribute_table t;
    t.rows["u"] = {"M", 30.0, ""};
    t.rows["v"] = {"F", 35.0, ""};
    t = binarize_age(std::move(t), 35.0);
    EXPECT_EQ(t.label("u", "age"), "Younger");
    EXPECT_EQ(t.label("v", "age"), "Older");
}

TEST(BinarizeAge, LowShareWarning) {
    user_attribute_table t;
    t.rows["u"] = {"M", 30.0, ""};
    t.rows["v"] = {"F", 30.0, ""};
    std::vector<std::string> warnings;
    t = binarize_age(std::move(t), 20.0, &warnings);  // threshold below min age
    EXPECT_EQ(t.label("u", "age"), "Older");
    EXPECT_EQ(t.label("v", "age"), "Older");
    ASSERT_EQ(warnings.size(), 1u);
}

TEST(Split, TenTimestampedRecords) {
    std::vector<interaction_record> in;
    for (int i = 0; i < 10; ++i) in.push_back({"u", "i" + std::to_string(i), i});
    dataset_split s = split(in, {}, 1);
    ASSERT_EQ(s.test.size(), 2u);
    ASSERT_EQ(s.validation.size(), 1u);
    ASSERT_EQ(s.train.size(), 7u);
    // most recent go to test, next most recent to validation
    EXPECT_EQ(s.test[0].item_id, "i8");
    EXPECT_EQ(s.test[1].item_id, "i9");
    EXPECT_EQ(s.validation[0].item_id, "i7");
}

TEST(Split, FiveRecordsRoundToZeroValidation) {
    std::vector<interaction_record> in;
    for (int i = 0; i < 5; ++i) in.push_back({"u", "i" + std::to_string(i), i});
    dataset_split s = split(in, {}, 1);
    EXPECT_EQ(s.test.size(), 1u);
    EXPECT_EQ(s.validation.size(), 0u);
    EXPECT_EQ(s.train.size(), 4u);
}

TEST(Split, TooFewInteractions) {
    EXPECT_THROW(split(recs({{"u", "a", 1}, {"u", "b", 2}}), {}, 1), too_few_interactions);
}

TEST(Split, PartitionAndTemporalOrderProperties) {
    rng_t rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<interaction_record> in;
        const int users = 1 + int(rng() % 8);
        const bool timestamped = trial % 2 == 0;
        for (int u = 0; u < users; ++u) {
            const int n = 3 + int(rng() % 20);
            for (int i = 0; i < n; ++i) {
                interaction_record r{"u" + std::to_string(u), "i" + std::to_string(i), {}};
                if (timestamped) r.timestamp = std::int64_t(rng() % 1000);
                in.push_back(r);
            }
        }
        dataset_split s = split(in, {}, 5);
        EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), in.size());
        // every user keeps at least one training record
        std::unordered_map<std::string, int> train_count;
        for (const auto& r : s.train) ++train_count[r.user_id];
        std::unordered_set<std::string> all_users;
        for (const auto& r : in) all_users.insert(r.user_id);
        for (const auto& u : all_users) EXPECT_GE(train_count[u], 1) << u;
        if (timestamped) {
            std::unordered_map<std::string, std::int64_t> max_train, min_test;
            for (const auto& r : s.train) {
                auto [it, fresh] = max_train.try_emplace(r.user_id, *r.timestamp);
                if (!fresh) it->second = std::max(it->second, *r.timestamp);
            }
            for (const auto& r : s.test) {
                auto [it, fresh] = min_test.try_emplace(r.user_id, *r.timestamp);
                if (!fresh) it->second = std::min(it->second, *r.timestamp);
            }
            for (const auto& [u, mt] : max_train) {
                if (min_test.count(u)) {
                    EXPECT_LE(mt, min_test[u]);
                }
            }
        }
    }
}

TEST(Split, DeterministicUnderSeed) {
    std::vector<interaction_record> in;
    for (int u = 0; u < 5; ++u)
        for (int i = 0; i < 9; ++i) in.push_back({"u" + std::to_string(u), "i" + std::to_string(i), {}});
    dataset_split a = split(in, {}, 42);
    dataset_split b = split(in, {}, 42);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
}

TEST(Synthetic, MeanDegreeNearTarget) {
    synthetic_spec spec;
    spec.seed = 7;
    synthetic_data d = generate_synthetic(spec);
    std::unordered_map<std::string, int> deg;
    for (const auto& r : d.records) ++deg[r.user_id];
    double mean_a = 0, mean_b = 0;
    for (const auto& [u, n] : deg) (u[0] == 'a' ? mean_a : mean_b) += n;
    mean_a /= spec.users_a;
    mean_b /= spec.users_b;
    EXPECT_NEAR(mean_a, spec.mean_degree_a, 0.1 * spec.mean_degree_a);
    EXPECT_NEAR(mean_b, spec.mean_degree_b, 0.1 * spec.mean_degree_b);
}

TEST(Synthetic, ZeroOverlapKeepsPoolsDisjoint) {
    synthetic_spec spec;
    spec.overlap = 0.0;
    synthetic_data d = generate_synthetic(spec);
    std::unordered_set<std::string> items_a, items_b;
    for (const auto& r : d.records) (r.user_id[0] == 'a' ? items_a : items_b).insert(r.item_id);
    for (const auto& i : items_a) EXPECT_EQ(items_b.count(i), 0u);
}

TEST(Synthetic, DeterministicUnderSeed) {
    synthetic_spec spec;
    synthetic_data a = generate_synthetic(spec);
    synthetic_data b = generate_synthetic(spec);
    EXPECT_EQ(a.records, b.records);
}

TEST(Manifests, RoundTripWithProvenance) {
    std::vector<interaction_record> in;
    for (int u = 0; u < 3; ++u)
        for (int i = 0; i < 6; ++i)
            in.push_back({"u" + std::to_string(u), "i" + std::to_string(i), u * 10 + i});
    dataset_split s = split(in, {}, 3);
    fs::path dir = fs::path(testing::TempDir()) / "split_out";
    write_split_manifests(dir, s, {}, 3, "cafe");
    EXPECT_EQ(read_manifest((dir / "train.tsv").string()), s.train);
    EXPECT_EQ(read_manifest((dir / "test.tsv").string()), s.test);
    std::ifstream check(dir / "train.tsv");
    std::string first;
    std::getline(check, first);
    EXPECT_NE(first.find("seed=3"), std::string::npos);
    EXPECT_NE(first.find("fingerprint=cafe"), std::string::npos);
}
