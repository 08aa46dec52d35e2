#pragma once

// Differentiable latency models: expected feature retrieval latency and
// expected architecture latency over the supernet, with an exhaustive
// enumeration oracle and a wall-clock profiler for the lookup table.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/nn.hpp"
#include "autofas/search_space.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

/// Milliseconds per MLP shape (in_dim, out_dim). The zero operator costs 0.
class LatencyTable {
   public:
    void set(std::size_t in, std::size_t out, double ms) {
        if (!(ms >= 0.0)) throw ParameterError("latency entries must be nonnegative");
        entries_[{in, out}] = ms;
    }

    double lookup(std::size_t in, std::size_t out) const {
        const auto it = entries_.find({in, out});
        if (it == entries_.end()) {
            throw MissingLatencyError("no latency entry for MLP " + std::to_string(in) + "x" + std::to_string(out));
        }
        return it->second;
    }

    bool contains(std::size_t in, std::size_t out) const { return entries_.count({in, out}) != 0; }
    static constexpr double zero_op_latency() { return 0.0; }
    std::size_t size() const { return entries_.size(); }
    const std::map<std::pair<std::size_t, std::size_t>, double>& entries() const { return entries_; }

    bool operator==(const LatencyTable&) const = default;

   private:
    std::map<std::pair<std::size_t, std::size_t>, double> entries_;
};

/// Every (source width, target width) MLP shape the search space can execute.
inline std::set<std::pair<std::size_t, std::size_t>> required_shapes(const SupernetConfig& config) {
    const auto states = width_states(config);
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < config.num_mixops; ++i)
        for (auto s : states[i])
            for (auto w : config.unit_choices) out.emplace(s, w);
    return out;
}

/// T(a, b) = scale * a * b: a FLOP proxy usable without profiling.
inline LatencyTable synthetic_latency_table(const SupernetConfig& config, double scale = 1e-6) {
    LatencyTable table;
    for (const auto& [in, out] : required_shapes(config)) {
        table.set(in, out, scale * static_cast<double>(in) * static_cast<double>(out));
    }
    return table;
}

inline void check_table(const LatencyTable& table, const SupernetConfig& config) {
    for (const auto& [in, out] : required_shapes(config)) table.lookup(in, out);
}

inline void write_latency_table(std::ostream& out, const LatencyTable& table) {
    for (const auto& [shape, ms] : table.entries()) {
        out << shape.first << '\t' << shape.second << '\t' << detail::format_double(ms) << '\n';
    }
}

inline LatencyTable read_latency_table(std::istream& in) {
    LatencyTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cols = detail::split_tabs(line);
        if (cols.size() != 3) throw ParseError(lineno, "expected in_dim, out_dim, ms");
        const auto ms = detail::parse_number<double>(cols[2], lineno, "latency");
        if (!(ms >= 0.0)) throw ParseError(lineno, "latency must be nonnegative");
        table.set(detail::parse_number<std::size_t>(cols[0], lineno, "in_dim"),
                  detail::parse_number<std::size_t>(cols[1], lineno, "out_dim"), ms);
    }
    return table;
}

inline void save_latency_table(const std::string& path, const LatencyTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot write " + path);
    write_latency_table(out, table);
}

inline LatencyTable load_latency_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open " + path);
    return read_latency_table(in);
}

// ---------------------------------------------------------------------------
// Feature latency

/// How the per-group concurrency overhead counts features.
enum class CountMode {
    Expected,  // sum of theta over the group (differentiable)
    Fixed,     // number of features in the group (constant)
};

struct ConcurrencyParams {
    double beta = 0.1;      // F1 per-feature overhead, ms
    double gamma = 0.1;     // F2 per-feature overhead, ms
    double lambda = 0.003;  // feature latency weight in Loss1
    double lambda1 = 0.5;   // distillation weight in Loss2, in [0, 1]
    double lambda2 = 0.1;   // architecture latency weight in Loss2
    CountMode count_mode = CountMode::Expected;

    void validate() const {
        if (beta < 0 || gamma < 0 || lambda < 0 || lambda2 < 0) {
            throw ParameterError("concurrency params: beta, gamma, lambda, lambda2 must be nonnegative");
        }
        if (lambda1 < 0 || lambda1 > 1) throw ParameterError("concurrency params: lambda1 must lie in [0, 1]");
    }
};

inline double expected_feature_latency_i(double theta, double latency_ms) { return theta * latency_ms; }

inline Tensor expected_feature_latency_i(const Tensor& theta, double latency_ms) { return scale(theta, latency_ms); }

/// max over groups of (max_i theta_i L_i + overhead * count); empty groups give 0,
/// ties route the gradient to F1.
inline Tensor expected_feature_latency(const Tensor& theta, const std::vector<FeatureSpec>& specs,
                                      const ConcurrencyParams& cp) {
    if (theta.size() != specs.size()) {
        throw DimensionError("feature latency: " + std::to_string(theta.size()) + " thetas for " +
                             std::to_string(specs.size()) + " features");
    }
    std::vector<double> lat(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) lat[i] = specs[i].retrieval_latency_ms;
    const Tensor weighted = mul(reshape(theta, {theta.size()}), Tensor::vector(lat));

    std::vector<Tensor> branches;
    for (auto group : {FeatureGroup::PassedFromMatching, FeatureGroup::RetrievedFromStore}) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].group == group) ids.push_back(i);
        }
        if (ids.empty()) {
            branches.push_back(Tensor::scalar(0.0));
            continue;
        }
        const double overhead = group == FeatureGroup::PassedFromMatching ? cp.beta : cp.gamma;
        const Tensor count = cp.count_mode == CountMode::Expected
                                 ? sum(gather(reshape(theta, {theta.size()}), ids))
                                 : Tensor::scalar(static_cast<double>(ids.size()));
        branches.push_back(add(max(gather(weighted, ids)), scale(count, overhead)));
    }
    return max(stack(branches));
}

/// Feature latency of a hard selection (theta = 1 on `selected`, 0 elsewhere).
inline double selected_feature_latency(const std::vector<std::size_t>& selected, const std::vector<FeatureSpec>& specs,
                                       const ConcurrencyParams& cp) {
    std::vector<double> theta(specs.size(), 0.0);
    for (auto id : selected) theta.at(id) = 1.0;
    auto hard = cp;
    hard.count_mode = CountMode::Expected;  // with binary theta this is the selected count
    return expected_feature_latency(Tensor::vector(theta), specs, hard).item();
}

// ---------------------------------------------------------------------------
// Architecture latency

/// Expected latency of the supernet under its operator strengths.
///
/// Carries, per reachable width t after each Mixop, the probability mass m_t
/// of ending at width t and U_t = E[accumulated latency; width = t]:
///   U_t' = sum_{s,k -> t} p_k (U_s + m_s T(s, w_k)),   m_t' = sum_{s,k -> t} p_k m_s
/// where the zero operator maps s -> s at no cost. The answer is sum_t U_t
/// after the last Mixop. Without the zero operator this is the per-path
/// recursion E_k = sum_j p_j (E_j + T(dim_j, dim_k)) with E_k = U_k / m_k.
inline Tensor expected_arch_latency(const ArchParams& arch, const SupernetConfig& config, const LatencyTable& table) {
    config.validate();
    check_arch(arch, config);
    const auto states = width_states(config);
    std::vector<Tensor> mass{Tensor::scalar(1.0)};
    std::vector<Tensor> acc{Tensor::scalar(0.0)};
    const auto n_mlp = config.unit_choices.size();
    for (std::size_t i = 0; i < config.num_mixops; ++i) {
        const Tensor p = arch.strengths(i);
        std::vector<Tensor> pk;
        for (std::size_t k = 0; k < config.num_ops(); ++k) pk.push_back(pick(p, k));
        const auto& sources = states[i];
        std::vector<Tensor> next_mass, next_acc;
        for (auto t : states[i + 1]) {
            std::vector<Tensor> m_terms, u_terms;
            for (std::size_t si = 0; si < sources.size(); ++si) {
                const auto s = sources[si];
                for (std::size_t k = 0; k < n_mlp; ++k) {
                    if (config.unit_choices[k] != t) continue;
                    m_terms.push_back(mul(pk[k], mass[si]));
                    const Tensor cost = add(acc[si], scale(mass[si], table.lookup(s, t)));
                    u_terms.push_back(mul(pk[k], cost));
                }
                if (config.include_zero && s == t) {
                    m_terms.push_back(mul(pk[n_mlp], mass[si]));
                    u_terms.push_back(mul(pk[n_mlp], acc[si]));
                }
            }
            next_mass.push_back(sum(stack(m_terms)));
            next_acc.push_back(sum(stack(u_terms)));
        }
        mass = std::move(next_mass);
        acc = std::move(next_acc);
    }
    return sum(stack(acc));
}

/// Summed latency of one operator assignment (one op index per Mixop).
inline double path_latency(const SupernetConfig& config, const std::vector<std::size_t>& ops, const LatencyTable& table) {
    if (ops.size() != config.num_mixops) throw DimensionError("path has wrong number of Mixops");
    std::size_t width = config.input_width;
    double total = 0.0;
    for (auto k : ops) {
        if (k >= config.num_ops()) throw DimensionError("operator index out of range");
        if (config.is_zero_op(k)) continue;
        const auto w = config.unit_choices[k];
        total += table.lookup(width, w);
        width = w;
    }
    return total;
}

inline constexpr double kMaxEnumeratedPaths = 1e6;

/// Exact expected latency by visiting all N^L operator assignments.
inline double enumerate_arch_latency(const ArchParams& arch, const SupernetConfig& config, const LatencyTable& table) {
    config.validate();
    check_arch(arch, config);
    const auto n = config.num_ops();
    const auto l = config.num_mixops;
    if (std::pow(static_cast<double>(n), static_cast<double>(l)) > kMaxEnumeratedPaths) {
        throw ParameterError("enumerate_arch_latency: N^L = " + std::to_string(n) + "^" + std::to_string(l) +
                             " exceeds the bound of 1e6 paths");
    }
    std::vector<std::vector<double>> p(l);
    for (std::size_t i = 0; i < l; ++i) p[i] = arch.strength_values(i);

    std::vector<std::size_t> ops(l, 0);
    double expected = 0.0;
    while (true) {
        double prob = 1.0;
        for (std::size_t i = 0; i < l; ++i) prob *= p[i][ops[i]];
        expected += prob * path_latency(config, ops, table);
        std::size_t i = 0;
        while (i < l && ++ops[i] == n) ops[i++] = 0;
        if (i == l) break;
    }
    return expected;
}

// ---------------------------------------------------------------------------
// Profiling

/// Median wall-clock ms of one Linear+ReLU forward on `rows` inputs.
inline double measure_mlp_ms(std::size_t in, std::size_t out, std::size_t repetitions, std::size_t rows = 256,
                             std::uint64_t seed = 0) {
    if (repetitions < 10) throw ParameterError("profiling needs at least 10 repetitions");
    Rng rng(seed);
    auto layer = Linear::init(in, out, rng);
    set_trainable({layer.weight, layer.bias}, false);
    const auto x = uniform_tensor({rows, in}, 1.0, rng, false);
    volatile double sink = relu(layer(x))[0];  // warm caches
    std::vector<double> times;
    for (std::size_t r = 0; r < repetitions; ++r) {
        const auto start = std::chrono::steady_clock::now();
        const auto y = relu(layer(x));
        const auto stop = std::chrono::steady_clock::now();
        sink = sink + y[0];
        times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    return times[times.size() / 2];
}

/// Measures every shape the search space needs on this machine.
inline LatencyTable profile_latency_table(const SupernetConfig& config, std::size_t repetitions, std::size_t rows = 256) {
    config.validate();
    LatencyTable table;
    for (const auto& [in, out] : required_shapes(config)) table.set(in, out, measure_mlp_ms(in, out, repetitions, rows));
    return table;
}

}  // namespace autofas
