#pragma once

// Synthetic click data with planted feature importance and per-feature
// retrieval latencies, plus the tab-separated on-disk formats.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "autofas/error.hpp"
#include "autofas/nn.hpp"

namespace autofas {

/// Latency category: passed along from the matching stage (F1) or fetched from the feature store (F2).
enum class FeatureGroup { PassedFromMatching, RetrievedFromStore };

inline std::string_view group_tag(FeatureGroup g) {
    return g == FeatureGroup::PassedFromMatching ? "F1" : "F2";
}

inline FeatureGroup parse_group(std::string_view tag, std::size_t line = 0) {
    if (tag == "F1") return FeatureGroup::PassedFromMatching;
    if (tag == "F2") return FeatureGroup::RetrievedFromStore;
    throw ParseError(line, "unknown feature group '" + std::string(tag) + "'");
}

struct FeatureSpec {
    std::size_t id = 0;
    std::string name;
    std::size_t vocab_size = 1;
    std::size_t embedding_dim = 1;
    FeatureGroup group = FeatureGroup::PassedFromMatching;
    double retrieval_latency_ms = 0.0;
    bool planted_informative = false;  // generator ground truth; never serialized

    bool operator==(const FeatureSpec&) const = default;
};

struct Example {
    std::uint64_t query_id = 0;
    std::vector<std::uint32_t> values;
    int label = 0;

    bool operator==(const Example&) const = default;
};

struct Dataset {
    std::vector<FeatureSpec> features;
    std::vector<Example> examples;

    std::size_t num_features() const { return features.size(); }
    bool operator==(const Dataset&) const = default;
};

struct DatasetSpec {
    std::size_t num_features = 50;
    std::size_t num_informative = 10;
    std::size_t num_examples = 100000;
    std::size_t queries = 2000;
    std::size_t items_per_query = 50;
    double label_noise = 0.05;  // probability a label is flipped
    std::uint64_t seed = 7;

    std::size_t vocab_size = 20;
    std::size_t embedding_dim = 4;
    double retrieved_fraction = 0.5;  // share of features in F2
    double f1_latency_min_ms = 0.5;
    double f1_latency_max_ms = 2.0;
    double f2_latency_min_ms = 2.0;
    double f2_latency_max_ms = 8.0;
    std::size_t hidden_dim = 4;
    double signal_scale = 4.0;  // std of the planted logit
    double score_noise_std = 0.5;
    double base_logit = -1.0;

    void validate() const {
        if (num_features == 0) throw ParameterError("dataset spec: num_features must be positive");
        if (num_informative > num_features) {
            throw ParameterError("dataset spec: num_informative (" + std::to_string(num_informative) +
                                 ") exceeds num_features (" + std::to_string(num_features) + ")");
        }
        if (queries * items_per_query != num_examples) {
            throw ParameterError("dataset spec: queries * items_per_query must equal num_examples");
        }
        if (!(label_noise >= 0.0 && label_noise <= 0.5)) throw ParameterError("dataset spec: label_noise outside [0, 0.5]");
        if (vocab_size == 0 || embedding_dim == 0 || hidden_dim == 0) {
            throw ParameterError("dataset spec: vocab_size, embedding_dim and hidden_dim must be positive");
        }
        if (retrieved_fraction < 0.0 || retrieved_fraction > 1.0) {
            throw ParameterError("dataset spec: retrieved_fraction outside [0, 1]");
        }
        if (f1_latency_min_ms < 0.0 || f1_latency_max_ms < f1_latency_min_ms || f2_latency_min_ms < 0.0 ||
            f2_latency_max_ms < f2_latency_min_ms) {
            throw ParameterError("dataset spec: latency ranges must be nonnegative and ordered");
        }
    }
};

struct GeneratedData {
    Dataset data;
    std::vector<std::size_t> planted;  // informative feature ids, ascending
};

/// Draws features, examples and the planted set. Deterministic in spec.seed.
///
/// Each informative feature owns hidden value embeddings (hidden_dim) and a
/// hidden weight vector; its per-value score is their dot product,
/// standardized over the vocabulary and scaled by a per-feature importance in
/// [0.5, 1.5]. The click logit is base_logit plus the sum of these scores and
/// Gaussian noise; labels are Bernoulli draws flipped with probability
/// label_noise. Non-informative features never touch the label.
inline GeneratedData generate(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t m = spec.num_features;

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto retrieved = static_cast<std::size_t>(std::lround(spec.retrieved_fraction * static_cast<double>(m)));
    std::vector<bool> in_f2(m, false);
    for (std::size_t i = 0; i < retrieved; ++i) in_f2[order[i]] = true;

    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> planted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.num_informative));
    std::sort(planted.begin(), planted.end());

    GeneratedData out;
    out.planted = planted;
    auto& features = out.data.features;
    std::uniform_real_distribution<double> f1_latency(spec.f1_latency_min_ms, spec.f1_latency_max_ms);
    std::uniform_real_distribution<double> f2_latency(spec.f2_latency_min_ms, spec.f2_latency_max_ms);
    for (std::size_t i = 0; i < m; ++i) {
        FeatureSpec f;
        f.id = i;
        f.name = "f" + std::to_string(i);
        f.vocab_size = spec.vocab_size;
        f.embedding_dim = spec.embedding_dim;
        f.group = in_f2[i] ? FeatureGroup::RetrievedFromStore : FeatureGroup::PassedFromMatching;
        f.retrieval_latency_ms = in_f2[i] ? f2_latency(rng) : f1_latency(rng);
        f.planted_informative = std::binary_search(planted.begin(), planted.end(), i);
        features.push_back(std::move(f));
    }

    // Hidden per-value scores for planted features.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> importance(0.5, 1.5);
    const double per_feature = spec.num_informative == 0
                                   ? 0.0
                                   : spec.signal_scale / std::sqrt(static_cast<double>(spec.num_informative));
    std::vector<std::vector<double>> score(m);
    for (auto id : planted) {
        std::vector<double> w(spec.hidden_dim);
        for (auto& v : w) v = normal(rng);
        const double a = importance(rng);
        auto& s = score[id];
        s.resize(spec.vocab_size);
        for (auto& v : s) {
            double dot = 0.0;
            for (std::size_t h = 0; h < spec.hidden_dim; ++h) dot += w[h] * normal(rng);
            v = dot;
        }
        const double mu = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
        double var = 0.0;
        for (double v : s) var += (v - mu) * (v - mu);
        const double sd = std::sqrt(var / static_cast<double>(s.size()));
        for (auto& v : s) v = sd > 0 ? a * per_feature * (v - mu) / sd : 0.0;
    }

    std::uniform_int_distribution<std::uint32_t> value(0, static_cast<std::uint32_t>(spec.vocab_size - 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    out.data.examples.reserve(spec.num_examples);
    for (std::size_t q = 0; q < spec.queries; ++q) {
        for (std::size_t item = 0; item < spec.items_per_query; ++item) {
            Example ex;
            ex.query_id = q;
            ex.values.resize(m);
            for (auto& v : ex.values) v = value(rng);
            double logit = spec.base_logit + spec.score_noise_std * normal(rng);
            for (auto id : planted) logit += score[id][ex.values[id]];
            int label = unit(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
            if (unit(rng) < spec.label_noise) label = 1 - label;
            ex.label = label;
            out.data.examples.push_back(std::move(ex));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
    T value{};
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
    }
    return value;
}

inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline bool read_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

}  // namespace detail

inline constexpr std::string_view kFeatureHeader = "id\tname\tvocab_size\tembedding_dim\tgroup\tlatency_ms";

inline void write_features(std::ostream& out, const std::vector<FeatureSpec>& features) {
    out << kFeatureHeader << '\n';
    for (const auto& f : features) {
        out << f.id << '\t' << f.name << '\t' << f.vocab_size << '\t' << f.embedding_dim << '\t' << group_tag(f.group)
            << '\t' << detail::format_double(f.retrieval_latency_ms) << '\n';
    }
}

inline std::vector<FeatureSpec> read_features(std::istream& in) {
    std::string line;
    std::size_t lineno = 1;
    if (!detail::read_line(in, line) || line != kFeatureHeader) throw ParseError(1, "missing feature header");
    std::vector<FeatureSpec> out;
    while (detail::read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = detail::split_tabs(line);
        if (cols.size() != 6) {
            throw ParseError(lineno, "expected 6 columns, found " + std::to_string(cols.size()));
        }
        FeatureSpec f;
        f.id = detail::parse_number<std::size_t>(cols[0], lineno, "feature id");
        f.name = std::string(cols[1]);
        f.vocab_size = detail::parse_number<std::size_t>(cols[2], lineno, "vocab_size");
        f.embedding_dim = detail::parse_number<std::size_t>(cols[3], lineno, "embedding_dim");
        f.group = parse_group(cols[4], lineno);
        f.retrieval_latency_ms = detail::parse_number<double>(cols[5], lineno, "latency");
        if (f.id != out.size()) throw ParseError(lineno, "feature ids must be 0..M-1 in order");
        if (f.vocab_size == 0 || f.embedding_dim == 0) throw ParseError(lineno, "vocab_size and embedding_dim must be positive");
        if (!(f.retrieval_latency_ms >= 0.0)) throw ParseError(lineno, "latency must be nonnegative");
        out.push_back(std::move(f));
    }
    return out;
}

inline void write_examples(std::ostream& out, std::size_t num_features, const std::vector<Example>& examples) {
    out << "query_id\tlabel";
    for (std::size_t i = 0; i < num_features; ++i) out << "\tv_" << i;
    out << '\n';
    std::string buf;
    for (const auto& ex : examples) {
        buf.clear();
        buf += std::to_string(ex.query_id);
        buf += '\t';
        buf += std::to_string(ex.label);
        for (auto v : ex.values) {
            buf += '\t';
            buf += std::to_string(v);
        }
        buf += '\n';
        out << buf;
    }
}

inline std::vector<Example> read_examples(std::istream& in, const std::vector<FeatureSpec>& features) {
    const std::size_t m = features.size();
    std::string line;
    if (!detail::read_line(in, line)) throw ParseError(1, "missing example header");
    if (detail::split_tabs(line).size() != m + 2) throw ParseError(1, "example header does not match feature count");
    std::vector<Example> out;
    std::size_t lineno = 1;
    while (detail::read_line(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = detail::split_tabs(line);
        if (cols.size() != m + 2) {
            throw ParseError(lineno, "expected " + std::to_string(m + 2) + " columns, found " + std::to_string(cols.size()));
        }
        Example ex;
        ex.query_id = detail::parse_number<std::uint64_t>(cols[0], lineno, "query_id");
        ex.label = detail::parse_number<int>(cols[1], lineno, "label");
        if (ex.label != 0 && ex.label != 1) throw ParseError(lineno, "label must be 0 or 1");
        ex.values.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
            ex.values[i] = detail::parse_number<std::uint32_t>(cols[i + 2], lineno, "feature value");
            if (ex.values[i] >= features[i].vocab_size) {
                throw ParseError(lineno, "value " + std::to_string(ex.values[i]) + " outside vocabulary of feature " +
                                             std::to_string(i));
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& features_path, const std::filesystem::path& examples_path,
                          const Dataset& data) {
    std::ofstream f(features_path, std::ios::binary);
    std::ofstream e(examples_path, std::ios::binary);
    if (!f || !e) throw ParameterError("cannot open dataset files for writing");
    write_features(f, data.features);
    write_examples(e, data.num_features(), data.examples);
    if (!f || !e) throw ParameterError("failed writing dataset files");
}

inline Dataset read_dataset(const std::filesystem::path& features_path, const std::filesystem::path& examples_path) {
    std::ifstream f(features_path, std::ios::binary);
    if (!f) throw ParameterError("cannot open " + features_path.string());
    std::ifstream e(examples_path, std::ios::binary);
    if (!e) throw ParameterError("cannot open " + examples_path.string());
    Dataset data;
    data.features = read_features(f);
    data.examples = read_examples(e, data.features);
    return data;
}

/// FNV-1a over every serialized field.
inline std::uint64_t dataset_checksum(const Dataset& data) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    for (const auto& f : data.features) {
        mix(f.id);
        for (char c : f.name) mix(static_cast<unsigned char>(c));
        mix(f.vocab_size);
        mix(f.embedding_dim);
        mix(static_cast<std::uint64_t>(f.group));
        std::uint64_t bits;
        std::memcpy(&bits, &f.retrieval_latency_ms, sizeof bits);
        mix(bits);
    }
    for (const auto& ex : data.examples) {
        mix(ex.query_id);
        mix(static_cast<std::uint64_t>(ex.label));
        for (auto v : ex.values) mix(v);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Splits and batches

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
};

/// Holds out whole queries: a seeded shuffle of query ids, the first
/// valid_fraction of them go to validation.
inline Split split_by_query(const Dataset& data, double valid_fraction, std::uint64_t seed) {
    std::vector<std::uint64_t> ids;
    for (const auto& ex : data.examples) ids.push_back(ex.query_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto held = static_cast<std::size_t>(std::lround(valid_fraction * static_cast<double>(ids.size())));
    std::vector<std::uint64_t> valid_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(held));
    std::sort(valid_ids.begin(), valid_ids.end());
    Split split;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        const bool held_out = std::binary_search(valid_ids.begin(), valid_ids.end(), data.examples[i].query_id);
        (held_out ? split.valid : split.train).push_back(i);
    }
    return split;
}

struct Batch {
    std::size_t size = 0;
    std::size_t num_features = 0;
    std::vector<std::uint32_t> ids;  // size x num_features
    std::vector<double> labels;
    std::vector<std::uint64_t> query_ids;
};

inline Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
    Batch b;
    b.size = rows.size();
    b.num_features = data.num_features();
    b.ids.reserve(b.size * b.num_features);
    for (auto r : rows) {
        const auto& ex = data.examples.at(r);
        if (ex.values.size() != b.num_features) throw DimensionError("example has wrong number of feature values");
        b.ids.insert(b.ids.end(), ex.values.begin(), ex.values.end());
        b.labels.push_back(ex.label);
        b.query_ids.push_back(ex.query_id);
    }
    return b;
}

/// Endless shuffled pass over a row set, reshuffling each epoch.
class BatchSampler {
   public:
    BatchSampler(std::vector<std::size_t> rows, std::size_t batch_size, std::uint64_t seed)
        : rows_(std::move(rows)), batch_size_(batch_size), rng_(seed) {
        if (rows_.empty() || batch_size_ == 0) throw ParameterError("batch sampler needs rows and a positive batch size");
        std::shuffle(rows_.begin(), rows_.end(), rng_);
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_size_);
        while (out.size() < batch_size_) {
            if (pos_ == rows_.size()) {
                std::shuffle(rows_.begin(), rows_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(rows_[pos_++]);
        }
        return out;
    }

   private:
    std::vector<std::size_t> rows_;
    std::size_t batch_size_;
    Rng rng_;
    std::size_t pos_ = 0;
};

}  // namespace autofas
