#pragma once

// Joint feature/architecture search: the two losses, the gradient-blocked
// optimization loop, derivation, retraining from scratch and the report.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/eval.hpp"
#include "autofas/latency.hpp"
#include "autofas/nn.hpp"
#include "autofas/search_space.hpp"
#include "autofas/supernet.hpp"
#include "autofas/teacher.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

struct SearchConfig {
    std::size_t warmup_steps = 20000;
    std::size_t search_steps = 3000;
    std::size_t retrain_steps = 5000;
    std::size_t batch_size = 50;
    double lr = 0.01;       // Adagrad rate for network weights
    double arch_lr = 0.01;  // Adagrad rate for mask logits and alpha
    std::size_t top_n_features = 10;
    std::uint64_t seed = 1;
    bool gradient_block = true;
    bool teacher_masked_kd = false;
    bool per_example_masks = false;
    ConcurrencyParams costs;
    std::vector<std::size_t> teacher_tower{256, 128, 64};
    double valid_fraction = 0.2;
    std::size_t trajectory_every = 100;
    std::size_t recall_k = 10;
    std::size_t recall_m = 20;

    void validate() const {
        costs.validate();
        if (batch_size == 0) throw ParameterError("search config: batch_size must be positive");
        if (!(lr > 0) || !(arch_lr > 0)) throw ParameterError("search config: learning rates must be positive");
        if (!(valid_fraction > 0 && valid_fraction < 1)) throw ParameterError("search config: valid_fraction must lie in (0, 1)");
        if (trajectory_every == 0) throw ParameterError("search config: trajectory_every must be positive");
        if (recall_k == 0 || recall_k > recall_m) throw ParameterError("search config: need 1 <= recall_k <= recall_m");
    }
};

/// Independent RNG stream per purpose, derived from the run seed (splitmix64).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

enum StreamTag : std::uint64_t { kSplit, kTeacherInit, kWarmupBatches, kSupernetInit, kSearchBatches, kMaskDraws, kRetrainInit, kRetrainBatches };

// ---------------------------------------------------------------------------
// Losses

/// BCE of the masked teacher plus lambda times the expected feature latency.
inline Tensor loss1(const Tensor& teacher_logits_masked, std::span<const double> labels, const Tensor& theta,
                    const std::vector<FeatureSpec>& specs, const ConcurrencyParams& cp) {
    const Tensor bce = binary_cross_entropy(teacher_logits_masked, labels);
    if (cp.lambda == 0.0) return bce;
    return add(bce, scale(expected_feature_latency(theta, specs, cp), cp.lambda));
}

/// Squared distance between click probabilities, averaged over the batch.
inline Tensor distillation_distance(const Tensor& teacher_logits, const Tensor& pre_logits) {
    return mean(square(sub(sigmoid(reshape(teacher_logits, {teacher_logits.size()})), sigmoid(reshape(pre_logits, {pre_logits.size()})))));
}

/// (1 - lambda1) BCE(p) + lambda1 ||sigma(r) - sigma(p)||^2 + lambda2 E[arch latency].
inline Tensor loss2(const Tensor& pre_logits, const Tensor& teacher_logits, std::span<const double> labels,
                    const ArchParams& arch, const SupernetConfig& config, const LatencyTable& table,
                    const ConcurrencyParams& cp) {
    if (cp.lambda1 < 0 || cp.lambda1 > 1) throw ParameterError("loss2: lambda1 must lie in [0, 1]");
    Tensor total = scale(binary_cross_entropy(pre_logits, labels), 1.0 - cp.lambda1);
    if (cp.lambda1 != 0.0) total = add(total, scale(distillation_distance(teacher_logits.detach(), pre_logits), cp.lambda1));
    if (cp.lambda2 != 0.0) total = add(total, scale(expected_arch_latency(arch, config, table), cp.lambda2));
    return total;
}

// ---------------------------------------------------------------------------
// Search state and one step

struct SearchState {
    MaskParams mask;
    ArchParams arch;
    Supernet net;

    static SearchState init(const SupernetConfig& config, std::size_t num_features, Rng& rng) {
        return {MaskParams::init(num_features), ArchParams::init(config), Supernet::init(config, rng)};
    }
};

enum class KdSource { Unmasked, Masked };

struct StepLosses {
    Tensor loss1;
    Tensor loss2;
    Tensor total;
    Tensor teacher_logits_masked;
    Tensor kd_target;
    KdSource kd_source = KdSource::Unmasked;
};

/// Builds Loss = Loss1 + Loss2 for one batch under a fixed mask draw.
///
/// The supernet input is the masked embedding. With gradient_block it is
/// detached, so Loss2 reaches only alpha and supernet weights while Loss1
/// reaches only the mask logits (the teacher is frozen).
inline StepLosses step_losses(const TeacherModel& teacher, const SearchState& state, const Batch& batch,
                              const FeatureMask& g, const SearchConfig& cfg, const LatencyTable& table) {
    StepLosses out;
    const Tensor x = teacher.embed(batch);
    const Tensor theta = state.mask.theta();
    const Tensor masked = teacher.apply_mask(x, theta, g);
    out.teacher_logits_masked = teacher.forward_embedded(masked);
    out.loss1 = loss1(out.teacher_logits_masked, batch.labels, theta, teacher.features(), cfg.costs);

    if (cfg.teacher_masked_kd) {
        out.kd_target = out.teacher_logits_masked.detach();
        out.kd_source = KdSource::Masked;
    } else {
        out.kd_target = teacher.forward_unmasked(batch).detach();
        out.kd_source = KdSource::Unmasked;
    }
    const Tensor pre = state.net.forward(cfg.gradient_block ? masked.detach() : masked, state.arch);
    out.loss2 = loss2(pre, out.kd_target, batch.labels, state.arch, state.net.config(), table, cfg.costs);
    out.total = add(out.loss1, out.loss2);
    return out;
}

struct TrajectoryPoint {
    std::size_t step = 0;
    std::string kind;  // "theta" or "strength"
    std::size_t index = 0;  // feature id, or mixop * N + op
    double value = 0.0;
};

inline void record_trajectory(std::vector<TrajectoryPoint>& out, std::size_t step, const SearchState& state) {
    const auto theta = state.mask.theta_values();
    for (std::size_t i = 0; i < theta.size(); ++i) out.push_back({step, "theta", i, theta[i]});
    const auto n = state.arch.num_ops();
    for (std::size_t l = 0; l < state.arch.num_mixops(); ++l) {
        const auto p = state.arch.strength_values(l);
        for (std::size_t k = 0; k < n; ++k) out.push_back({step, "strength", l * n + k, p[k]});
    }
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& points) {
    out << "step,kind,index,value\n";
    for (const auto& p : points) out << p.step << ',' << p.kind << ',' << p.index << ',' << detail::format_double(p.value) << '\n';
}

struct SearchTrace {
    std::vector<TrajectoryPoint> trajectory;
    double last_loss1 = 0.0;
    double last_loss2 = 0.0;
};

/// Runs the joint optimization for cfg.search_steps steps on a frozen teacher.
inline SearchTrace search(const TeacherModel& teacher, SearchState& state, const Dataset& data,
                          const std::vector<std::size_t>& train_rows, const SearchConfig& cfg, const LatencyTable& table) {
    cfg.validate();
    check_table(table, state.net.config());
    SearchTrace trace;
    Adagrad weight_opt(state.net.parameters(), cfg.lr);
    Adagrad arch_opt({state.mask.phi, state.arch.alpha}, cfg.arch_lr);
    BatchSampler sampler(train_rows, cfg.batch_size, stream_seed(cfg.seed, kSearchBatches));
    Rng mask_rng(stream_seed(cfg.seed, kMaskDraws));

    record_trajectory(trace.trajectory, 0, state);
    for (std::size_t step = 0; step < cfg.search_steps; ++step) {
        const auto batch = make_batch(data, sampler.next());
        const auto g = sample_masks(state.mask, mask_rng, cfg.per_example_masks ? batch.size : 1);
        weight_opt.zero_grad();
        arch_opt.zero_grad();
        const auto losses = step_losses(teacher, state, batch, g, cfg, table);
        if (!std::isfinite(losses.total.item())) throw DivergenceError(step, "search loss is not finite");
        losses.total.backward();
        weight_opt.step();
        arch_opt.step();
        trace.last_loss1 = losses.loss1.item();
        trace.last_loss2 = losses.loss2.item();
        if ((step + 1) % cfg.trajectory_every == 0 || step + 1 == cfg.search_steps) {
            record_trajectory(trace.trajectory, step + 1, state);
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Retraining

struct RetrainResult {
    PreRankingModel model;
    double valid_auc = 0.0;
};

/// Trains a freshly initialized model of the given architecture with BCE only.
inline RetrainResult retrain(const DerivedArchitecture& arch, const Dataset& data, const Split& split, std::size_t steps,
                             std::size_t batch_size, double lr, std::uint64_t seed) {
    if (steps == 0) throw ParameterError("retrain: steps must be at least 1");
    Rng init_rng(stream_seed(seed, kRetrainInit));
    RetrainResult out{PreRankingModel::instantiate(arch, data.features, init_rng), 0.0};
    Adagrad opt(out.model.parameters(), lr);
    BatchSampler sampler(split.train, batch_size, stream_seed(seed, kRetrainBatches));
    for (std::size_t step = 0; step < steps; ++step) {
        const auto batch = make_batch(data, sampler.next());
        opt.zero_grad();
        const auto loss = binary_cross_entropy(out.model.forward(batch), batch.labels);
        if (!std::isfinite(loss.item())) throw DivergenceError(step, "retrain loss is not finite");
        loss.backward();
        opt.step();
    }
    opt.zero_grad();
    set_trainable(out.model.parameters(), false);
    const auto scores = score_rows(data, split.valid, [&](const Batch& b) { return out.model.forward(b); });
    out.valid_auc = auc(scores, labels_of(data, split.valid));
    return out;
}

// ---------------------------------------------------------------------------
// Report

struct SearchReport {
    std::uint64_t seed = 0;
    std::uint64_t dataset_checksum = 0;
    std::size_t num_features = 0;
    std::size_t num_examples = 0;
    DerivedArchitecture architecture;
    std::vector<double> theta;
    std::vector<std::vector<double>> strengths;
    double selected_feature_latency_ms = 0.0;
    double derived_arch_latency_ms = 0.0;
    double expected_feature_latency_ms = 0.0;  // theta-weighted, end of search
    double expected_arch_latency_ms = 0.0;     // strength-weighted, end of search
    double teacher_auc = 0.0;
    double prerank_auc = 0.0;
    double recall = 0.0;
    double last_loss1 = 0.0;
    double last_loss2 = 0.0;
    std::vector<std::pair<std::string, std::string>> config;  // echo, in write order
};

namespace detail {

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        if constexpr (std::is_floating_point_v<T>) {
            out << format_double(v[i]);
        } else {
            out << v[i];
        }
    }
    return out.str();
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> config_echo(const SearchConfig& c, const SupernetConfig& s) {
    auto f = detail::format_double;
    return {
        {"search.seed", std::to_string(c.seed)},
        {"search.warmup_steps", std::to_string(c.warmup_steps)},
        {"search.search_steps", std::to_string(c.search_steps)},
        {"search.retrain_steps", std::to_string(c.retrain_steps)},
        {"search.batch_size", std::to_string(c.batch_size)},
        {"search.lr", f(c.lr)},
        {"search.arch_lr", f(c.arch_lr)},
        {"search.top_n_features", std::to_string(c.top_n_features)},
        {"search.gradient_block", c.gradient_block ? "true" : "false"},
        {"search.teacher_masked_kd", c.teacher_masked_kd ? "true" : "false"},
        {"search.per_example_masks", c.per_example_masks ? "true" : "false"},
        {"search.teacher_tower", detail::join(c.teacher_tower)},
        {"search.valid_fraction", f(c.valid_fraction)},
        {"search.recall_k", std::to_string(c.recall_k)},
        {"search.recall_m", std::to_string(c.recall_m)},
        {"costs.beta", f(c.costs.beta)},
        {"costs.gamma", f(c.costs.gamma)},
        {"costs.lambda", f(c.costs.lambda)},
        {"costs.lambda1", f(c.costs.lambda1)},
        {"costs.lambda2", f(c.costs.lambda2)},
        {"costs.count_mode", c.costs.count_mode == CountMode::Expected ? "expected" : "fixed"},
        {"supernet.num_mixops", std::to_string(s.num_mixops)},
        {"supernet.unit_choices", detail::join(s.unit_choices)},
        {"supernet.include_zero", s.include_zero ? "true" : "false"},
        {"supernet.input_width", std::to_string(s.input_width)},
    };
}

/// Sectioned key = value text. Sections nest by dotted names.
inline void write_report(std::ostream& out, const SearchReport& r) {
    auto f = detail::format_double;
    out << "format_version = 1\n\n";
    out << "[run]\n";
    out << "seed = " << r.seed << '\n';
    out << "dataset_checksum = " << r.dataset_checksum << '\n';
    out << "num_features = " << r.num_features << '\n';
    out << "num_examples = " << r.num_examples << "\n\n";

    out << "[selection]\n";
    out << "features = " << detail::join(r.architecture.features) << '\n';
    out << "num_features = " << r.architecture.features.size() << '\n';
    out << "operators = " << detail::join(r.architecture.ops) << '\n';
    out << "operator_names = " << detail::join(r.architecture.op_names) << '\n';
    out << "hidden_widths = " << detail::join(r.architecture.hidden_widths) << "\n\n";

    out << "[latency]\n";
    out << "selected_feature_ms = " << f(r.selected_feature_latency_ms) << '\n';
    out << "derived_arch_ms = " << f(r.derived_arch_latency_ms) << '\n';
    out << "expected_feature_ms = " << f(r.expected_feature_latency_ms) << '\n';
    out << "expected_arch_ms = " << f(r.expected_arch_latency_ms) << "\n\n";

    out << "[metrics]\n";
    out << "teacher_auc = " << f(r.teacher_auc) << '\n';
    out << "prerank_auc = " << f(r.prerank_auc) << '\n';
    out << "recall = " << f(r.recall) << '\n';
    out << "last_loss1 = " << f(r.last_loss1) << '\n';
    out << "last_loss2 = " << f(r.last_loss2) << "\n\n";

    out << "[parameters.theta]\n";
    out << "values = " << detail::join(r.theta) << "\n\n";
    out << "[parameters.strengths]\n";
    for (std::size_t i = 0; i < r.strengths.size(); ++i) out << "mixop" << i << " = " << detail::join(r.strengths[i]) << '\n';
    out << '\n';

    std::string section;
    for (const auto& [key, value] : r.config) {
        const auto dot = key.find('.');
        const auto sec = "config." + key.substr(0, dot);
        if (sec != section) {
            out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
}

inline std::string report_string(const SearchReport& r) {
    std::ostringstream out;
    write_report(out, r);
    return out.str();
}

/// Parsed report: section -> key -> value (top-level keys under "").
using ReportDocument = std::map<std::string, std::map<std::string, std::string>>;

inline ReportDocument parse_report(std::istream& in) {
    ReportDocument doc;
    std::string line, section;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(lineno, "unterminated section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
        doc[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (doc[""]["format_version"] != "1") throw ParseError(0, "report format_version missing or unsupported");
    return doc;
}

// ---------------------------------------------------------------------------
// Whole pipeline

struct SearchOutcome {
    SearchReport report;
    TeacherModel teacher;
    SearchState state;
    PreRankingModel student;
    SearchTrace trace;
    Split split;
};

/// Warms up a teacher on the training split (deterministic in cfg.seed).
inline TeacherModel train_teacher(const Dataset& data, const Split& split, const SearchConfig& cfg,
                                  WarmupStats* stats = nullptr) {
    Rng rng(stream_seed(cfg.seed, kTeacherInit));
    auto teacher = TeacherModel::init(data.features, cfg.teacher_tower, rng);
    const auto s = warmup(teacher, data, split.train, cfg.warmup_steps, cfg.batch_size, cfg.lr,
                          stream_seed(cfg.seed, kWarmupBatches));
    if (stats) *stats = s;
    return teacher;
}

/// Warmup, search, derivation, retraining and evaluation.
///
/// `warmed` may supply an already warmed teacher for this dataset and seed
/// (it is cloned, never modified); otherwise one is trained for
/// cfg.warmup_steps steps.
inline SearchOutcome run_search(const Dataset& data, SupernetConfig net_config, const LatencyTable& table,
                                const SearchConfig& cfg, const TeacherModel* warmed = nullptr) {
    cfg.validate();
    if (cfg.top_n_features > data.num_features()) throw ParameterError("top_n_features exceeds feature count");
    SearchOutcome out;
    out.split = split_by_query(data, cfg.valid_fraction, stream_seed(cfg.seed, kSplit));
    if (out.split.train.empty() || out.split.valid.empty()) throw ParameterError("dataset too small to split");

    out.teacher = warmed ? warmed->clone() : train_teacher(data, out.split, cfg);
    out.teacher.freeze();

    net_config.input_width = out.teacher.input_width();
    net_config.validate();
    check_table(table, net_config);
    Rng net_rng(stream_seed(cfg.seed, kSupernetInit));
    out.state = SearchState::init(net_config, data.num_features(), net_rng);
    out.trace = search(out.teacher, out.state, data, out.split.train, cfg, table);

    const auto arch = derive_architecture(out.state.arch, out.state.mask, cfg.top_n_features, net_config);
    auto retrained = retrain(arch, data, out.split, cfg.retrain_steps, cfg.batch_size, cfg.lr, cfg.seed);
    out.student = retrained.model;

    auto& r = out.report;
    r.seed = cfg.seed;
    r.dataset_checksum = dataset_checksum(data);
    r.num_features = data.num_features();
    r.num_examples = data.examples.size();
    r.architecture = arch;
    r.theta = out.state.mask.theta_values();
    for (std::size_t i = 0; i < net_config.num_mixops; ++i) r.strengths.push_back(out.state.arch.strength_values(i));
    r.selected_feature_latency_ms = selected_feature_latency(arch.features, data.features, cfg.costs);
    r.derived_arch_latency_ms = path_latency(net_config, arch.ops, table);
    r.expected_feature_latency_ms = expected_feature_latency(out.state.mask.theta(), data.features, cfg.costs).item();
    r.expected_arch_latency_ms = expected_arch_latency(out.state.arch, net_config, table).item();

    const auto& valid = out.split.valid;
    const auto labels = labels_of(data, valid);
    const auto teacher_logits = score_rows(data, valid, [&](const Batch& b) { return out.teacher.forward_unmasked(b); });
    const auto student_logits = score_rows(data, valid, [&](const Batch& b) { return out.student.forward(b); });
    std::vector<std::uint64_t> qids;
    for (auto row : valid) qids.push_back(data.examples[row].query_id);
    r.teacher_auc = auc(teacher_logits, labels);
    r.prerank_auc = retrained.valid_auc;
    r.recall = recall_alignment(group_by_query(qids, student_logits, teacher_logits, labels), cfg.recall_k, cfg.recall_m);
    r.last_loss1 = out.trace.last_loss1;
    r.last_loss2 = out.trace.last_loss2;
    r.config = config_echo(cfg, net_config);
    return out;
}

}  // namespace autofas
