#pragma once

// Run configuration: sectioned key = value text with a schema check.
//
//   format_version = 1
//   [data]      path (directory with features.tsv/examples.tsv) or generator keys
//   [supernet]  num_mixops, unit_choices, include_zero
//   [search]    SearchConfig fields
//   [costs]     beta, gamma, lambda, lambda1, lambda2, count_mode
//   [latency]   table = synthetic | <path>, synthetic_scale, profile_repetitions, profile_rows
//   [output]    dir
//
// Relative paths are resolved against the config file's directory.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/latency.hpp"
#include "autofas/search.hpp"
#include "autofas/search_space.hpp"

namespace autofas {

inline constexpr int kConfigVersion = 1;

struct RunConfig {
    DatasetSpec data_spec;
    std::filesystem::path data_path;  // empty: generate from data_spec
    SupernetConfig supernet;
    SearchConfig search;
    std::string latency_table = "synthetic";  // "synthetic" or a table path
    double synthetic_scale = 1e-6;
    std::size_t profile_repetitions = 20;
    std::size_t profile_rows = 256;
    std::filesystem::path output_dir = "autofas-out";

    bool synthetic_latency() const { return latency_table == "synthetic"; }

    void validate() const {
        if (data_path.empty()) data_spec.validate();
        auto net = supernet;
        if (net.input_width == 0) net.input_width = 1;  // set from the data at run time
        net.validate();
        search.validate();
        if (!(synthetic_scale > 0)) throw ParameterError("latency: synthetic_scale must be positive");
        if (profile_repetitions < 10) throw ParameterError("latency: profile_repetitions must be at least 10");
        if (profile_rows == 0) throw ParameterError("latency: profile_rows must be positive");
    }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema{
        {"data",
         {"path", "num_features", "num_informative", "num_examples", "queries", "items_per_query", "label_noise", "seed",
          "vocab_size", "embedding_dim", "retrieved_fraction", "f1_latency_min_ms", "f1_latency_max_ms", "f2_latency_min_ms",
          "f2_latency_max_ms", "hidden_dim", "signal_scale", "score_noise_std", "base_logit"}},
        {"supernet", {"num_mixops", "unit_choices", "include_zero"}},
        {"search",
         {"seed", "warmup_steps", "search_steps", "retrain_steps", "batch_size", "lr", "arch_lr", "top_n_features",
          "gradient_block", "teacher_masked_kd", "per_example_masks", "teacher_tower", "valid_fraction", "trajectory_every",
          "recall_k", "recall_m"}},
        {"costs", {"beta", "gamma", "lambda", "lambda1", "lambda2", "count_mode"}},
        {"latency", {"table", "synthetic_scale", "profile_repetitions", "profile_rows"}},
        {"output", {"dir"}},
    };
    return schema;
}

class ConfigReader {
   public:
    explicit ConfigReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

    template <typename T>
    void get(const std::string& key, T& out) const {
        const auto node = tree_.get_child_optional(boost::property_tree::ptree::path_type(key, '.'));
        if (!node) return;
        const auto text = node->get_value<std::string>();
        if constexpr (std::is_same_v<T, std::string>) {
            out = text;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1") {
                out = true;
            } else if (text == "false" || text == "0") {
                out = false;
            } else {
                throw ParameterError("config " + key + ": expected true or false, got '" + text + "'");
            }
        } else {
            std::istringstream in(text);
            T value{};
            if (!(in >> value) || !(in >> std::ws).eof()) {
                throw ParameterError("config " + key + ": cannot parse '" + text + "'");
            }
            if constexpr (std::is_unsigned_v<T>) {
                if (text.find('-') != std::string::npos) throw ParameterError("config " + key + ": must be nonnegative");
            }
            out = value;
        }
    }

    void get_list(const std::string& key, std::vector<std::size_t>& out) const {
        std::string text;
        get(key, text);
        if (text.empty()) return;
        std::vector<std::size_t> values;
        std::istringstream in(text);
        std::string item;
        while (std::getline(in, item, ',')) {
            std::size_t v = 0;
            std::istringstream is(item);
            if (!(is >> v) || !(is >> std::ws).eof() || item.find('-') != std::string::npos) {
                throw ParameterError("config " + key + ": cannot parse list item '" + item + "'");
            }
            values.push_back(v);
        }
        out = values;
    }

   private:
    const boost::property_tree::ptree& tree_;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses config text; `base` anchors relative paths.
inline RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base = ".") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(e.line(), "config: " + e.message());
    }

    const auto& schema = detail::config_schema();
    bool has_version = false;
    for (const auto& [name, node] : tree) {
        const auto sec = schema.find(name);
        if (sec != schema.end()) {
            for (const auto& [key, _] : node) {
                if (!sec->second.count(key)) throw ParameterError("config: unknown key '" + key + "' in [" + name + "]");
            }
        } else if (name == "format_version" && node.empty()) {
            has_version = true;
            if (node.get_value<std::string>() != std::to_string(kConfigVersion)) {
                throw ParameterError("config: unsupported format_version " + node.get_value<std::string>());
            }
        } else {
            throw ParameterError("config: unknown section or key '" + name + "'");
        }
    }
    if (!has_version) throw ParameterError("config: missing format_version");

    RunConfig c;
    const detail::ConfigReader r(tree);
    std::string path;
    r.get("data.path", path);
    if (!path.empty()) c.data_path = detail::resolve(base, path);
    auto& d = c.data_spec;
    r.get("data.num_features", d.num_features);
    r.get("data.num_informative", d.num_informative);
    r.get("data.num_examples", d.num_examples);
    r.get("data.queries", d.queries);
    r.get("data.items_per_query", d.items_per_query);
    r.get("data.label_noise", d.label_noise);
    r.get("data.seed", d.seed);
    r.get("data.vocab_size", d.vocab_size);
    r.get("data.embedding_dim", d.embedding_dim);
    r.get("data.retrieved_fraction", d.retrieved_fraction);
    r.get("data.f1_latency_min_ms", d.f1_latency_min_ms);
    r.get("data.f1_latency_max_ms", d.f1_latency_max_ms);
    r.get("data.f2_latency_min_ms", d.f2_latency_min_ms);
    r.get("data.f2_latency_max_ms", d.f2_latency_max_ms);
    r.get("data.hidden_dim", d.hidden_dim);
    r.get("data.signal_scale", d.signal_scale);
    r.get("data.score_noise_std", d.score_noise_std);
    r.get("data.base_logit", d.base_logit);

    r.get("supernet.num_mixops", c.supernet.num_mixops);
    r.get_list("supernet.unit_choices", c.supernet.unit_choices);
    r.get("supernet.include_zero", c.supernet.include_zero);

    auto& s = c.search;
    r.get("search.seed", s.seed);
    r.get("search.warmup_steps", s.warmup_steps);
    r.get("search.search_steps", s.search_steps);
    r.get("search.retrain_steps", s.retrain_steps);
    r.get("search.batch_size", s.batch_size);
    r.get("search.lr", s.lr);
    r.get("search.arch_lr", s.arch_lr);
    r.get("search.top_n_features", s.top_n_features);
    r.get("search.gradient_block", s.gradient_block);
    r.get("search.teacher_masked_kd", s.teacher_masked_kd);
    r.get("search.per_example_masks", s.per_example_masks);
    r.get_list("search.teacher_tower", s.teacher_tower);
    r.get("search.valid_fraction", s.valid_fraction);
    r.get("search.trajectory_every", s.trajectory_every);
    r.get("search.recall_k", s.recall_k);
    r.get("search.recall_m", s.recall_m);

    r.get("costs.beta", s.costs.beta);
    r.get("costs.gamma", s.costs.gamma);
    r.get("costs.lambda", s.costs.lambda);
    r.get("costs.lambda1", s.costs.lambda1);
    r.get("costs.lambda2", s.costs.lambda2);
    std::string mode = "expected";
    r.get("costs.count_mode", mode);
    if (mode == "expected") {
        s.costs.count_mode = CountMode::Expected;
    } else if (mode == "fixed") {
        s.costs.count_mode = CountMode::Fixed;
    } else {
        throw ParameterError("config costs.count_mode: expected 'expected' or 'fixed', got '" + mode + "'");
    }

    r.get("latency.table", c.latency_table);
    if (!c.synthetic_latency()) c.latency_table = detail::resolve(base, c.latency_table).string();
    r.get("latency.synthetic_scale", c.synthetic_scale);
    r.get("latency.profile_repetitions", c.profile_repetitions);
    r.get("latency.profile_rows", c.profile_rows);

    std::string out;
    r.get("output.dir", out);
    if (!out.empty()) c.output_dir = detail::resolve(base, out);

    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config " + path.string());
    return parse_run_config(in, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace autofas
