#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "graphfair/error.hpp"
#include "graphfair/util.hpp"

namespace graphfair {

struct interaction_record {
    std::string user_id;
    std::string item_id;
    std::optional<std::int64_t> timestamp;
    friend bool operator==(const interaction_record&, const interaction_record&) = default;
};

struct user_attributes {
    std::string gender;                // "M" / "F"
    std::optional<double> age;         // raw value
    std::string age_label;             // "Younger" / "Older" once binarized
};

struct user_attribute_table {
    std::unordered_map<std::string, user_attributes> rows;

    bool has(const std::string& user) const { return rows.count(user) != 0; }

    // label under the analysis attribute ("gender" or "age")
    const std::string& label(const std::string& user, const std::string& attribute) const {
        auto it = rows.find(user);
        if (it == rows.end()) throw missing_attribute(user);
        if (attribute == "gender") return it->second.gender;
        if (attribute == "age") {
            if (it->second.age_label.empty())
                throw input_error("age attribute requested before binarization");
            return it->second.age_label;
        }
        throw input_error("unknown attribute: " + attribute);
    }
};

// Columns are addressed by header name when has_header, by 0-based index
// written as a number otherwise. An empty timestamp column means none.
struct format_spec {
    std::string delimiter = "\t";
    bool has_header = true;
    std::string user_col = "user_id";
    std::string item_col = "item_id";
    std::string timestamp_col = "timestamp";
    std::string attr_user_col = "user_id";
    std::string gender_col = "gender";
    std::string age_col = "age";
};

struct dataset_split {
    std::vector<interaction_record> train, validation, test;
};

namespace detail {

inline int resolve_column(const std::vector<std::string>& header, const std::string& col,
                          bool has_header, const std::string& path) {
    if (col.empty()) return -1;
    if (!has_header) {
        try {
            return std::stoi(col);
        } catch (const std::exception&) {
            throw parse_error(path, 0, "column '" + col + "' must be a 0-based index when the file has no header");
        }
    }
    for (std::size_t i = 0; i < header.size(); ++i)
        if (trim(header[i]) == col) return int(i);
    throw parse_error(path, 1, "column '" + col + "' not found in header");
}

struct delimited_reader {
    std::ifstream in;
    std::string path;
    std::string delimiter;
    std::size_t line_no = 0;

    delimited_reader(const std::string& p, const std::string& delim) : path(p), delimiter(delim) {
        in.open(p);
        if (!in) throw parse_error(p, 0, "cannot open file");
    }

    // skips blank and '#'-comment lines; returns false at EOF
    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            fields = split(line, delimiter);
            return true;
        }
        return false;
    }

    std::string field(const std::vector<std::string>& fields, int idx) const {
        if (idx < 0 || std::size_t(idx) >= fields.size())
            throw parse_error(path, line_no, "expected at least " + std::to_string(idx + 1) +
                                                 " columns, got " + std::to_string(fields.size()));
        return trim(fields[idx]);
    }
};

}  // namespace detail

inline std::vector<interaction_record> read_interactions(const std::string& path, const format_spec& fmt) {
    detail::delimited_reader reader(path, fmt.delimiter);
    std::vector<std::string> fields, header;
    if (fmt.has_header) {
        if (!reader.next(header)) throw parse_error(path, reader.line_no, "missing header row");
    }
    const int uc = detail::resolve_column(header, fmt.user_col, fmt.has_header, path);
    const int ic = detail::resolve_column(header, fmt.item_col, fmt.has_header, path);
    const int tc = detail::resolve_column(header, fmt.timestamp_col, fmt.has_header, path);
    std::vector<interaction_record> out;
    while (reader.next(fields)) {
        interaction_record r;
        r.user_id = reader.field(fields, uc);
        r.item_id = reader.field(fields, ic);
        if (r.user_id.empty() || r.item_id.empty())
            throw parse_error(path, reader.line_no, "empty user or item id");
        if (tc >= 0) {
            const std::string t = reader.field(fields, tc);
            try {
                r.timestamp = std::stoll(t);
            } catch (const std::exception&) {
                throw parse_error(path, reader.line_no, "bad timestamp '" + t + "'");
            }
            if (*r.timestamp < 0) throw parse_error(path, reader.line_no, "negative timestamp");
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline user_attribute_table read_attributes(const std::string& path, const format_spec& fmt) {
    detail::delimited_reader reader(path, fmt.delimiter);
    std::vector<std::string> fields, header;
    if (fmt.has_header) {
        if (!reader.next(header)) throw parse_error(path, reader.line_no, "missing header row");
    }
    const int uc = detail::resolve_column(header, fmt.attr_user_col, fmt.has_header, path);
    const int gc = detail::resolve_column(header, fmt.gender_col, fmt.has_header, path);
    const int ac = detail::resolve_column(header, fmt.age_col, fmt.has_header, path);
    user_attribute_table table;
    while (reader.next(fields)) {
        const std::string user = reader.field(fields, uc);
        user_attributes attrs;
        if (gc >= 0) {
            attrs.gender = reader.field(fields, gc);
            if (!attrs.gender.empty() && attrs.gender != "M" && attrs.gender != "F")
                throw parse_error(path, reader.line_no, "gender must be M or F, got '" + attrs.gender + "'");
        }
        if (ac >= 0) {
            const std::string a = reader.field(fields, ac);
            try {
                attrs.age = std::stod(a);
            } catch (const std::exception&) {
                throw parse_error(path, reader.line_no, "bad age '" + a + "'");
            }
        }
        table.rows[user] = std::move(attrs);
    }
    return table;
}

// Collapses duplicate (user, item) pairs keeping the latest timestamp; output
// order is the first appearance of each pair.
inline std::vector<interaction_record> deduplicate(std::vector<interaction_record> records) {
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    std::vector<interaction_record> out;
    out.reserve(records.size());
    for (auto& r : records) {
        auto key = std::make_pair(r.user_id, r.item_id);
        auto it = seen.find(key);
        if (it == seen.end()) {
            seen.emplace(std::move(key), out.size());
            out.push_back(std::move(r));
        } else if (r.timestamp && (!out[it->second].timestamp || *r.timestamp > *out[it->second].timestamp)) {
            out[it->second].timestamp = r.timestamp;
        }
    }
    return out;
}

struct ingest_result {
    std::vector<interaction_record> records;
    user_attribute_table attributes;
};

inline ingest_result ingest(const std::string& interaction_path, const std::string& attribute_path,
                            const format_spec& fmt) {
    ingest_result res;
    res.records = deduplicate(read_interactions(interaction_path, fmt));
    res.attributes = read_attributes(attribute_path, fmt);
    std::vector<std::string> uncovered;
    std::unordered_set<std::string> checked;
    for (const auto& r : res.records)
        if (checked.insert(r.user_id).second && !res.attributes.has(r.user_id))
            uncovered.push_back(r.user_id);
    if (!uncovered.empty()) {
        std::sort(uncovered.begin(), uncovered.end());
        std::string msg;
        for (std::size_t i = 0; i < uncovered.size() && i < 10; ++i)
            msg += (i ? ", " : "") + uncovered[i];
        if (uncovered.size() > 10) msg += ", ... (" + std::to_string(uncovered.size()) + " total)";
        throw missing_attribute(msg);
    }
    return res;
}

// One record per (user, item) with the timestamp of the last event, mirroring
// play-log corpora where repeated listens collapse to a single interaction.
inline std::vector<interaction_record> group_events_by_item(std::vector<interaction_record> records) {
    for (const auto& r : records)
        if (!r.timestamp) throw input_error("group_events_by_item requires timestamps");
    return deduplicate(std::move(records));
}

inline std::vector<interaction_record> filter_min_degree(const std::vector<interaction_record>& records,
                                                         std::size_t k_min) {
    if (k_min < 1) throw input_error("k_min must be >= 1");
    std::unordered_map<std::string, std::unordered_set<std::string>> items_of;
    for (const auto& r : records) items_of[r.user_id].insert(r.item_id);
    std::vector<interaction_record> out;
    out.reserve(records.size());
    for (const auto& r : records)
        if (items_of[r.user_id].size() >= k_min) out.push_back(r);
    return out;
}

// age < threshold -> Younger, else Older. Warns (non-fatally) when the
// resulting Younger group is not the better represented one.
inline user_attribute_table binarize_age(user_attribute_table table, double threshold,
                                         std::vector<std::string>* warnings = nullptr) {
    std::size_t younger = 0, total = 0;
    for (auto& [user, attrs] : table.rows) {
        if (!attrs.age) throw input_error("user " + user + " has no age value");
        attrs.age_label = *attrs.age < threshold ? "Younger" : "Older";
        ++total;
        if (attrs.age_label == "Younger") ++younger;
    }
    if (warnings && total > 0 && younger * 2 <= total)
        warnings->push_back("Younger share is " + std::to_string(100.0 * double(younger) / double(total)) +
                            "% (expected the Younger group to be more represented)");
    return table;
}

struct split_ratios {
    double test = 0.2;            // fraction of each user's interactions
    double validation = 0.1;      // fraction of the per-user remainder
};

// Per user: n_test = round(test * n) clamped to [1, n-2]; from the remainder
// n_val = round(validation * remainder) clamped to [0, remainder-1]; picked
// most-recent-first when every record of the user is timestamped, else
// uniformly with the given seed. Users are processed in first-appearance
// order so the result is a pure function of (records, ratios, seed).
inline dataset_split split(const std::vector<interaction_record>& records, split_ratios ratios,
                           std::uint64_t seed) {
    std::vector<std::string> user_order;
    std::unordered_map<std::string, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = by_user.try_emplace(records[i].user_id);
        if (inserted) user_order.push_back(records[i].user_id);
        it->second.push_back(i);
    }
    rng_t rng(seed);
    dataset_split out;
    std::vector<char> bucket(records.size(), 't');
    for (const auto& user : user_order) {
        auto idx = by_user[user];
        const std::size_t n = idx.size();
        if (n < 3) throw too_few_interactions(user);
        const auto n_test = std::size_t(std::clamp<long>(std::lround(ratios.test * double(n)), 1, long(n) - 2));
        const std::size_t rem = n - n_test;
        const auto n_val =
            std::size_t(std::clamp<long>(std::lround(ratios.validation * double(rem)), 0, long(rem) - 1));
        const bool timestamped = std::all_of(idx.begin(), idx.end(),
                                             [&](std::size_t i) { return records[i].timestamp.has_value(); });
        if (timestamped) {
            // most recent first; ties resolved toward the later row
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                if (*records[a].timestamp != *records[b].timestamp)
                    return *records[a].timestamp > *records[b].timestamp;
                return a > b;
            });
        } else {
            std::shuffle(idx.begin(), idx.end(), rng);
        }
        for (std::size_t k = 0; k < n_test; ++k) bucket[idx[k]] = 'T';
        for (std::size_t k = n_test; k < n_test + n_val; ++k) bucket[idx[k]] = 'V';
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (bucket[i] == 'T') out.test.push_back(records[i]);
        else if (bucket[i] == 'V') out.validation.push_back(records[i]);
        else out.train.push_back(records[i]);
    }
    return out;
}

inline void write_records(const std::string& path, const std::vector<interaction_record>& records,
                          const std::string& provenance = {}) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write " + path);
    if (!provenance.empty()) out << "# " << provenance << "\n";
    out << "user_id\titem_id\ttimestamp\n";
    for (const auto& r : records) {
        out << r.user_id << '\t' << r.item_id << '\t';
        if (r.timestamp) out << *r.timestamp;
        out << '\n';
    }
}

inline void write_split_manifests(const std::filesystem::path& dir, const dataset_split& s,
                                  split_ratios ratios, std::uint64_t seed, const std::string& fingerprint) {
    std::filesystem::create_directories(dir);
    const std::string prov = "split seed=" + std::to_string(seed) +
                             " test_ratio=" + format_double(ratios.test) +
                             " val_ratio=" + format_double(ratios.validation) +
                             " fingerprint=" + fingerprint;
    write_records((dir / "train.tsv").string(), s.train, prov);
    write_records((dir / "validation.tsv").string(), s.validation, prov);
    write_records((dir / "test.tsv").string(), s.test, prov);
}

// Reads files written by write_records; an empty timestamp field means none.
inline std::vector<interaction_record> read_manifest(const std::string& path) {
    detail::delimited_reader reader(path, "\t");
    std::vector<std::string> fields;
    if (!reader.next(fields)) throw parse_error(path, reader.line_no, "missing header row");
    std::vector<interaction_record> out;
    while (reader.next(fields)) {
        interaction_record r;
        r.user_id = reader.field(fields, 0);
        r.item_id = reader.field(fields, 1);
        if (fields.size() > 2) {
            const std::string t = trim(fields[2]);
            if (!t.empty()) r.timestamp = std::stoll(t);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace graphfair
