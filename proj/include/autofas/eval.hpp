#pragma once

// Offline metrics: AUC, pre-ranking / ranking alignment recall and the
// leave-one-feature-out importance score statistics_AUC.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/supernet.hpp"
#include "autofas/teacher.hpp"

namespace autofas {

/// P(score of a random positive > score of a random negative), ties counting 1/2.
/// Rank statistic with midranks for ties.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ParameterError("auc: labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: needs at least one positive and one negative label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the positive rank sum keeps midranks integral.
    double twice_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double twice_midrank = static_cast<double>(i + 1 + j);  // ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) twice_rank_sum += twice_midrank;
        }
        i = j;
    }
    const double p = static_cast<double>(pos);
    const double twice_wins = twice_rank_sum - p * (p + 1.0);
    return twice_wins / 2.0 / (p * static_cast<double>(neg));
}

inline double auc(std::span<const double> scores, std::span<const double> labels) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(labels[i]);
    return auc(scores, std::span<const int>(y));
}

struct QueryGroup {
    std::uint64_t query_id = 0;
    std::vector<double> pre_scores;
    std::vector<double> teacher_scores;
    std::vector<int> labels;
};

/// Groups row-aligned scores by query id (ascending), keeping row order within a query.
inline std::vector<QueryGroup> group_by_query(std::span<const std::uint64_t> query_ids, std::span<const double> pre,
                                              std::span<const double> teacher, std::span<const int> labels) {
    if (pre.size() != query_ids.size() || teacher.size() != query_ids.size() || labels.size() != query_ids.size()) {
        throw DimensionError("group_by_query: inputs differ in length");
    }
    std::map<std::uint64_t, QueryGroup> groups;
    for (std::size_t i = 0; i < query_ids.size(); ++i) {
        auto& g = groups[query_ids[i]];
        g.query_id = query_ids[i];
        g.pre_scores.push_back(pre[i]);
        g.teacher_scores.push_back(teacher[i]);
        g.labels.push_back(labels[i]);
    }
    std::vector<QueryGroup> out;
    for (auto& [id, g] : groups) out.push_back(std::move(g));
    return out;
}

/// Items of the top n scores; ties to the lower item index.
inline std::vector<std::size_t> top_items(const std::vector<double>& scores, std::size_t n) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(n);
    std::sort(order.begin(), order.end());
    return order;
}

/// Mean over queries of |top-m(pre) & top-k(teacher)| / k.
inline double recall_alignment(const std::vector<QueryGroup>& groups, std::size_t k, std::size_t m) {
    if (groups.empty()) throw ParameterError("recall_alignment: no query groups");
    if (k == 0 || k > m) throw ParameterError("recall_alignment: need 1 <= k <= m");
    double total = 0.0;
    for (const auto& g : groups) {
        const auto n = g.pre_scores.size();
        if (n == 0 || g.teacher_scores.size() != n) throw DimensionError("recall_alignment: ragged query group");
        if (m > n) {
            throw ParameterError("recall_alignment: top-" + std::to_string(m) + " exceeds group size " + std::to_string(n) +
                                 " of query " + std::to_string(g.query_id));
        }
        const auto teacher_top = top_items(g.teacher_scores, k);
        const auto pre_top = top_items(g.pre_scores, m);
        std::vector<std::size_t> both;
        std::set_intersection(teacher_top.begin(), teacher_top.end(), pre_top.begin(), pre_top.end(), std::back_inserter(both));
        total += static_cast<double>(both.size()) / static_cast<double>(k);
    }
    return total / static_cast<double>(groups.size());
}

inline std::vector<int> labels_of(const Dataset& data, std::span<const std::size_t> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(data.examples.at(r).label);
    return out;
}

/// Teacher logits with the features whose gate is 0 zeroed at inference.
inline std::vector<double> teacher_scores(const TeacherModel& model, const Dataset& data, std::span<const std::size_t> rows,
                                          const FeatureMask& gates) {
    const auto theta = Tensor::vector(std::vector<double>(model.num_features(), 1.0));
    return score_rows(data, rows, [&](const Batch& b) { return model.forward_embedded(model.apply_mask(model.embed(b), theta, gates)); });
}

/// AUC with all features minus AUC with `feature_id`'s embedding zeroed.
inline double statistics_auc(const TeacherModel& model, const Dataset& data, std::span<const std::size_t> rows,
                             std::size_t feature_id) {
    if (feature_id >= model.num_features()) {
        throw ParameterError("statistics_auc: feature id " + std::to_string(feature_id) + " out of range");
    }
    const auto labels = labels_of(data, rows);
    auto gates = FeatureMask::ones(model.num_features());
    const double full = auc(teacher_scores(model, data, rows, gates), labels);
    gates.gates[feature_id] = 0.0;
    return full - auc(teacher_scores(model, data, rows, gates), labels);
}

inline std::vector<double> statistics_auc_all(const TeacherModel& model, const Dataset& data, std::span<const std::size_t> rows) {
    const auto labels = labels_of(data, rows);
    auto gates = FeatureMask::ones(model.num_features());
    const double full = auc(teacher_scores(model, data, rows, gates), labels);
    std::vector<double> out(model.num_features());
    for (std::size_t i = 0; i < out.size(); ++i) {
        gates.gates[i] = 0.0;
        out[i] = full - auc(teacher_scores(model, data, rows, gates), labels);
        gates.gates[i] = 1.0;
    }
    return out;
}

/// Top-n features by statistics_AUC, ties to the lower id; ascending ids.
inline std::vector<std::size_t> select_by_statistics_auc(const TeacherModel& model, const Dataset& data,
                                                         std::span<const std::size_t> rows, std::size_t n) {
    if (n > model.num_features()) throw ParameterError("select_by_statistics_auc: n exceeds feature count");
    return top_n_indices(statistics_auc_all(model, data, rows), n);
}

struct MetricRow {
    std::string metric;
    std::string name;
    double value = 0.0;
};

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
    out << "metric,name,value\n";
    for (const auto& r : rows) out << r.metric << ',' << r.name << ',' << detail::format_double(r.value) << '\n';
}

}  // namespace autofas
