// autofas: data generation, latency profiling, warmup, search, retrain,
// evaluation and report rendering driven by a run config file.
//
// Exit codes: 0 ok, 2 config or input error, 3 numeric divergence,
// 4 missing latency table entry.

#include <spawn.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "autofas/config.hpp"
#include "autofas/eval.hpp"
#include "autofas/search.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace autofas;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitMissingLatency = 4;

struct Common {
    std::string config;
    std::string out;
    bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Run config file")->required();
    cmd->add_option("-o,--out", c.out, "Output directory (overrides AUTOFAS_OUTPUT_DIR and [output] dir)");
    cmd->add_flag("--overwrite", c.overwrite, "Replace existing output files");
}

struct Context {
    RunConfig cfg;
    fs::path out;
    bool overwrite = false;
};

Context load_context(const Common& c) {
    Context ctx{load_run_config(c.config), {}, c.overwrite};
    if (!c.out.empty()) {
        ctx.out = c.out;
    } else if (const char* env = std::getenv("AUTOFAS_OUTPUT_DIR"); env && *env) {
        ctx.out = env;
    } else {
        ctx.out = ctx.cfg.output_dir;
    }
    return ctx;
}

/// Refuses to replace existing files unless --overwrite was given.
void claim_outputs(const Context& ctx, const std::vector<fs::path>& files) {
    if (!ctx.overwrite) {
        for (const auto& f : files) {
            if (fs::exists(f)) throw ParameterError("refusing to overwrite " + f.string() + " (pass --overwrite)");
        }
    }
    for (const auto& f : files) fs::create_directories(f.parent_path());
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParameterError("cannot write " + path.string());
    fn(out);
    if (!out) throw ParameterError("error writing " + path.string());
}

Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.data_path.empty()) return generate(cfg.data_spec).data;
    return read_dataset(cfg.data_path / "features.tsv", cfg.data_path / "examples.tsv");
}

std::size_t embedding_width(const std::vector<FeatureSpec>& features) {
    std::size_t w = 0;
    for (const auto& f : features) w += f.embedding_dim;
    return w;
}

LatencyTable load_table(const RunConfig& cfg, SupernetConfig net) {
    if (cfg.synthetic_latency()) return synthetic_latency_table(net, cfg.synthetic_scale);
    return load_latency_table(cfg.latency_table);
}

SupernetConfig net_config(const RunConfig& cfg, const Dataset& data) {
    auto net = cfg.supernet;
    net.input_width = embedding_width(data.features);
    return net;
}

TeacherModel load_teacher(const std::string& path, const Dataset& data) {
    return TeacherModel::from_checkpoint(load_checkpoint(path), data.features);
}

void write_config_echo(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& echo) {
    out << "format_version = " << kConfigVersion << '\n';
    std::string section;
    for (const auto& [key, value] : echo) {
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c) {
    const auto ctx = load_context(c);
    const auto dir = ctx.out / "data";
    claim_outputs(ctx, {dir / "features.tsv", dir / "examples.tsv", dir / "planted.txt"});
    const auto gen = generate(ctx.cfg.data_spec);
    write_dataset(dir / "features.tsv", dir / "examples.tsv", gen.data);
    write_file(dir / "planted.txt", [&](std::ostream& out) {
        for (auto id : gen.planted) out << id << '\n';
    });
    std::cout << "wrote " << gen.data.examples.size() << " examples, " << gen.data.num_features() << " features to "
              << dir.string() << '\n';
    return 0;
}

int cmd_profile(const Common& c) {
    const auto ctx = load_context(c);
    const auto path = ctx.out / "latency.tsv";
    claim_outputs(ctx, {path});
    const auto data = load_dataset(ctx.cfg);
    const auto net = net_config(ctx.cfg, data);
    const auto table = profile_latency_table(net, ctx.cfg.profile_repetitions, ctx.cfg.profile_rows);
    save_latency_table(path.string(), table);
    std::cout << "wrote " << required_shapes(net).size() << " entries to " << path.string() << '\n';
    return 0;
}

int cmd_warmup(const Common& c) {
    const auto ctx = load_context(c);
    const auto path = ctx.out / "teacher.ckpt";
    claim_outputs(ctx, {path});
    const auto data = load_dataset(ctx.cfg);
    const auto& sc = ctx.cfg.search;
    const auto split = split_by_query(data, sc.valid_fraction, stream_seed(sc.seed, kSplit));
    WarmupStats stats;
    const auto teacher = train_teacher(data, split, sc, &stats);
    save_checkpoint(path.string(), teacher.to_checkpoint());
    const auto scores = score_rows(data, split.valid, [&](const Batch& b) { return teacher.forward_unmasked(b); });
    std::cout << "teacher valid_auc " << detail::format_double(auc(scores, labels_of(data, split.valid))) << " -> "
              << path.string() << '\n';
    return 0;
}

struct SearchOptions {
    Common common;
    std::string teacher;
    std::vector<std::string> ablate;
    std::optional<std::uint64_t> seed;
    std::string seeds;
};

int spawn_seed_runs(const SearchOptions& o, const char* self) {
    const auto ctx = load_context(o.common);
    std::vector<std::uint64_t> seeds;
    std::istringstream in(o.seeds);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ParameterError("--seeds: cannot parse '" + item + "'");
        }
    }
    if (seeds.empty()) throw ParameterError("--seeds: empty list");

    std::vector<pid_t> children;
    for (auto seed : seeds) {
        std::vector<std::string> args{self, "search", "-c", o.common.config, "--seed", std::to_string(seed), "-o",
                                      (ctx.out / ("seed-" + std::to_string(seed))).string()};
        if (o.common.overwrite) args.push_back("--overwrite");
        if (!o.teacher.empty()) args.insert(args.end(), {"--teacher", o.teacher});
        for (const auto& a : o.ablate) args.insert(args.end(), {"--ablate", a});
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        pid_t pid = 0;
        if (posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, argv.data(), environ) != 0) {
            throw ParameterError("cannot spawn run for seed " + std::to_string(seed));
        }
        children.push_back(pid);
    }
    int worst = 0;
    for (std::size_t i = 0; i < children.size(); ++i) {
        int status = 0;
        waitpid(children[i], &status, 0);
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitInput;
        if (code != 0) std::cerr << "seed " << seeds[i] << " exited with " << code << '\n';
        worst = std::max(worst, code);
    }
    return worst;
}

int cmd_search(const SearchOptions& o, const char* self) {
    if (!o.seeds.empty()) return spawn_seed_runs(o, self);
    auto ctx = load_context(o.common);
    auto& sc = ctx.cfg.search;
    if (o.seed) sc.seed = *o.seed;
    for (const auto& a : o.ablate) {
        if (a == "no-gradient-block") {
            sc.gradient_block = false;
        } else if (a == "teacher-masked-kd") {
            sc.teacher_masked_kd = true;
        } else {
            throw ParameterError("--ablate: unknown ablation '" + a + "'");
        }
    }
    const auto& d = ctx.out;
    claim_outputs(ctx, {d / "config.ini", d / "teacher.ckpt", d / "search_state.ckpt", d / "architecture.txt",
                        d / "prerank.ckpt", d / "report.txt", d / "trajectories.csv", d / "metrics.csv"});

    const auto data = load_dataset(ctx.cfg);
    const auto net = net_config(ctx.cfg, data);
    const auto table = load_table(ctx.cfg, net);
    std::optional<TeacherModel> warmed;
    if (!o.teacher.empty()) warmed = load_teacher(o.teacher, data);
    const auto outcome = run_search(data, net, table, sc, warmed ? &*warmed : nullptr);
    const auto& r = outcome.report;

    write_file(d / "config.ini", [&](std::ostream& out) { write_config_echo(out, r.config); });
    save_checkpoint((d / "teacher.ckpt").string(), outcome.teacher.to_checkpoint());
    auto state = outcome.state.net.to_checkpoint();
    state.meta["kind"] = "search_state";
    state.add("mask.phi", outcome.state.mask.phi);
    state.add("arch.alpha", outcome.state.arch.alpha);
    save_checkpoint((d / "search_state.ckpt").string(), state);
    save_architecture((d / "architecture.txt").string(), r.architecture);
    save_checkpoint((d / "prerank.ckpt").string(), outcome.student.to_checkpoint());
    write_file(d / "report.txt", [&](std::ostream& out) { write_report(out, r); });
    write_file(d / "trajectories.csv", [&](std::ostream& out) { write_trajectory_csv(out, outcome.trace.trajectory); });
    write_file(d / "metrics.csv", [&](std::ostream& out) {
        write_metrics_csv(out, {{"auc", "teacher", r.teacher_auc},
                                {"auc", "prerank", r.prerank_auc},
                                {"recall", "prerank_vs_teacher", r.recall},
                                {"latency_ms", "selected_features", r.selected_feature_latency_ms},
                                {"latency_ms", "derived_arch", r.derived_arch_latency_ms}});
    });
    std::cout << "features " << detail::join(r.architecture.features) << "; ops " << detail::join(r.architecture.op_names)
              << "; prerank_auc " << detail::format_double(r.prerank_auc) << " -> " << d.string() << '\n';
    return 0;
}

int cmd_retrain(const Common& c, const std::string& arch_path) {
    const auto ctx = load_context(c);
    const auto dir = ctx.out / "retrain";
    claim_outputs(ctx, {dir / "prerank.ckpt", dir / "metrics.csv"});
    const auto arch = load_architecture(arch_path.empty() ? (ctx.out / "architecture.txt").string() : arch_path);
    const auto data = load_dataset(ctx.cfg);
    const auto& sc = ctx.cfg.search;
    const auto split = split_by_query(data, sc.valid_fraction, stream_seed(sc.seed, kSplit));
    const auto result = retrain(arch, data, split, sc.retrain_steps, sc.batch_size, sc.lr, sc.seed);
    save_checkpoint((dir / "prerank.ckpt").string(), result.model.to_checkpoint());
    write_file(dir / "metrics.csv", [&](std::ostream& out) { write_metrics_csv(out, {{"auc", "prerank", result.valid_auc}}); });
    std::cout << "retrained valid_auc " << detail::format_double(result.valid_auc) << " -> " << dir.string() << '\n';
    return 0;
}

/// Logits of a teacher or pre-ranking checkpoint on the given rows.
std::vector<double> model_scores(const std::string& path, const Dataset& data, const std::vector<std::size_t>& rows) {
    const auto ckpt = load_checkpoint(path);
    const auto& kind = ckpt.meta_value("kind");
    if (kind == "teacher") {
        const auto m = TeacherModel::from_checkpoint(ckpt, data.features);
        return score_rows(data, rows, [&](const Batch& b) { return m.forward_unmasked(b); });
    }
    if (kind == "prerank") {
        const auto m = PreRankingModel::from_checkpoint(ckpt);
        return score_rows(data, rows, [&](const Batch& b) { return m.forward(b); });
    }
    throw ParameterError(path + ": cannot evaluate a '" + kind + "' checkpoint");
}

int cmd_eval(const Common& c, const std::string& model, const std::string& teacher, const std::string& metrics_path) {
    const auto ctx = load_context(c);
    const auto data = load_dataset(ctx.cfg);
    const auto& sc = ctx.cfg.search;
    const auto split = split_by_query(data, sc.valid_fraction, stream_seed(sc.seed, kSplit));
    const auto& rows = split.valid;
    const auto labels = labels_of(data, rows);
    const auto scores = model_scores(model, data, rows);
    std::vector<MetricRow> metrics{{"auc", "model", auc(scores, labels)}};
    if (!teacher.empty()) {
        const auto reference = model_scores(teacher, data, rows);
        std::vector<std::uint64_t> qids;
        for (auto row : rows) qids.push_back(data.examples[row].query_id);
        metrics.push_back({"auc", "teacher", auc(reference, labels)});
        metrics.push_back({"recall", "model_vs_teacher",
                           recall_alignment(group_by_query(qids, scores, reference, labels), sc.recall_k, sc.recall_m)});
    }
    if (metrics_path.empty()) {
        write_metrics_csv(std::cout, metrics);
    } else {
        claim_outputs(ctx, {fs::path(metrics_path)});
        write_file(metrics_path, [&](std::ostream& out) { write_metrics_csv(out, metrics); });
    }
    return 0;
}

// ---------------------------------------------------------------------------
// report

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string item; std::getline(in, item, ',');) out.push_back(item);
    return out;
}

const std::string& field(const ReportDocument& doc, const std::string& section, const std::string& key) {
    const auto s = doc.find(section);
    if (s == doc.end() || !s->second.count(key)) throw ParseError(0, "report: missing " + section + "." + key);
    return s->second.at(key);
}

void render_architecture(std::ostream& out, const ReportDocument& doc) {
    const auto features = split_list(field(doc, "selection", "features"));
    const auto ops = split_list(field(doc, "selection", "operator_names"));
    out << "  [ embeddings of " << features.size() << " features ]\n";
    std::size_t layer = 0;
    for (const auto& op : ops) {
        out << "              |\n";
        if (op == "zero") {
            out << "  ( Mixop " << layer << ": zero, skipped )\n";
        } else {
            out << "  [ Mixop " << layer << ": " << op << " + ReLU ]\n";
        }
        ++layer;
    }
    out << "              |\n";
    out << "  [ head: 1 + sigmoid ]\n";
}

void write_plot_data(std::ostream& out, const fs::path& trajectories) {
    std::ifstream in(trajectories);
    if (!in) throw ParameterError("cannot open " + trajectories.string());
    std::string line;
    std::getline(in, line);
    if (line != "step,kind,index,value") throw ParseError(1, "trajectories: unexpected header");
    std::map<std::size_t, std::map<std::string, std::string>> rows;
    std::vector<std::string> columns;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto parts = split_list(line);
        if (parts.size() != 4) throw ParseError(lineno, "trajectories: expected 4 fields");
        const auto column = parts[1] + "_" + parts[2];
        if (seen.insert(column).second) columns.push_back(column);
        rows[std::stoul(parts[0])][column] = parts[3];
    }
    out << "step";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (const auto& [step, values] : rows) {
        out << step;
        for (const auto& c : columns) {
            const auto it = values.find(c);
            out << ',' << (it == values.end() ? "" : it->second);
        }
        out << '\n';
    }
}

int cmd_report(const std::string& report_path, const std::string& plot_path, bool overwrite) {
    std::ifstream in(report_path);
    if (!in) throw ParameterError("cannot open report " + report_path);
    const auto doc = parse_report(in);
    auto& out = std::cout;
    out << "search report: seed " << field(doc, "run", "seed") << ", " << field(doc, "run", "num_features") << " features, "
        << field(doc, "run", "num_examples") << " examples\n\n";
    out << "selected features (" << field(doc, "selection", "num_features") << "): " << field(doc, "selection", "features")
        << "\n\n";
    out << "architecture:\n";
    render_architecture(out, doc);
    out << "\nlatency (ms): features " << field(doc, "latency", "selected_feature_ms") << ", architecture "
        << field(doc, "latency", "derived_arch_ms") << '\n';
    out << "valid AUC: teacher " << field(doc, "metrics", "teacher_auc") << ", pre-ranking "
        << field(doc, "metrics", "prerank_auc") << "; recall " << field(doc, "metrics", "recall") << '\n';

    const auto theta = split_list(field(doc, "parameters.theta", "values"));
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < theta.size(); ++i) ranked.emplace_back(std::stod(theta[i]), i);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    out << "\ntop mask probabilities:\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(ranked.size(), 15); ++i) {
        const auto bar = static_cast<std::size_t>(std::lround(ranked[i].first * 40));
        out << "  " << std::setw(4) << ranked[i].second << "  " << std::fixed << std::setprecision(3) << ranked[i].first << ' '
            << std::string(bar, '#') << '\n';
    }
    out.unsetf(std::ios::fixed);

    if (!plot_path.empty()) {
        if (!overwrite && fs::exists(plot_path)) throw ParameterError("refusing to overwrite " + plot_path + " (pass --overwrite)");
        const auto trajectories = fs::path(report_path).parent_path() / "trajectories.csv";
        write_file(plot_path, [&](std::ostream& o) { write_plot_data(o, trajectories); });
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint feature and architecture search for pre-ranking models"};
    app.require_subcommand(1);

    Common gen_opts, profile_opts, warmup_opts, retrain_opts, eval_opts;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and its planted-feature sidecar");
    add_common(gen, gen_opts);

    auto* profile = app.add_subcommand("profile", "Measure MLP latencies for every shape of the search space");
    add_common(profile, profile_opts);

    auto* warm = app.add_subcommand("warmup", "Train the teacher model");
    add_common(warm, warmup_opts);

    SearchOptions search_opts;
    std::uint64_t seed_value = 0;
    auto* srch = app.add_subcommand("search", "Warmup, search, derive, retrain and evaluate");
    add_common(srch, search_opts.common);
    srch->add_option("--teacher", search_opts.teacher, "Use this warmed teacher checkpoint instead of training one");
    srch->add_option("--ablate", search_opts.ablate, "Ablation: no-gradient-block or teacher-masked-kd")
        ->check(CLI::IsMember({"no-gradient-block", "teacher-masked-kd"}));
    auto* seed_opt = srch->add_option("--seed", seed_value, "Override [search] seed");
    auto* seeds_opt = srch->add_option("--seeds", search_opts.seeds, "Comma-separated seeds, one child run each under <out>/seed-N");
    seeds_opt->excludes(seed_opt);

    std::string arch_path;
    auto* rt = app.add_subcommand("retrain", "Retrain a derived architecture from scratch");
    add_common(rt, retrain_opts);
    rt->add_option("--architecture", arch_path, "Architecture file (default <out>/architecture.txt)");

    std::string model_path, teacher_path, metrics_path;
    auto* ev = app.add_subcommand("eval", "AUC of a model, and recall against a reference teacher");
    add_common(ev, eval_opts);
    ev->add_option("--model", model_path, "Teacher or pre-ranking checkpoint")->required();
    ev->add_option("--teacher", teacher_path, "Reference teacher checkpoint for recall alignment");
    ev->add_option("--metrics", metrics_path, "Write the metrics CSV here instead of stdout");

    std::string report_path, plot_path;
    bool report_overwrite = false;
    auto* rep = app.add_subcommand("report", "Render a search report as text");
    rep->add_option("report", report_path, "report.txt of a search run")->required();
    rep->add_option("--plot-data", plot_path, "Write trajectories as a wide CSV (one column per parameter)");
    rep->add_flag("--overwrite", report_overwrite, "Replace an existing plot-data file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts);
        if (profile->parsed()) return cmd_profile(profile_opts);
        if (warm->parsed()) return cmd_warmup(warmup_opts);
        if (srch->parsed()) {
            if (seed_opt->count()) search_opts.seed = seed_value;
            return cmd_search(search_opts, argv[0]);
        }
        if (rt->parsed()) return cmd_retrain(retrain_opts, arch_path);
        if (ev->parsed()) return cmd_eval(eval_opts, model_path, teacher_path, metrics_path);
        if (rep->parsed()) return cmd_report(report_path, plot_path, report_overwrite);
    } catch (const MissingLatencyError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissingLatency;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
