#pragma once

// Subcommand implementations behind tools/kqkit. Each command writes its outputs plus one
// run_report.<command>.json into the output directory and returns the process exit status.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kqkit/error.hpp"
#include "kqkit/experiment.hpp"
#include "kqkit/metrics.hpp"
#include "kqkit/parallel.hpp"
#include "kqkit/plot.hpp"
#include "kqkit/repr_store.hpp"
#include "kqkit/select.hpp"

namespace kqkit {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitUsage = 2, kExitNotConverged = 3 };

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the compact JSON text; object keys are emitted sorted, so equal configs hash equally.
inline std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

struct RunReport {
    std::string command;
    nlohmann::json config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;
    double wall_time_s = 0.0;
    int exit_status = 0;

    nlohmann::json to_json() const {
        return {{"tool", "kqkit"},
                {"version", kVersion},
                {"command", command},
                {"config", config},
                {"config_hash", config_hash(config)},
                {"seeds", seeds},
                {"outputs", outputs},
                {"wall_time_s", wall_time_s},
                {"exit_status", exit_status}};
    }
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse error in " + path.string() + ": " + e.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void finish_report(RunReport& report, const std::filesystem::path& out_dir, const Stopwatch& clock) {
    report.wall_time_s = clock.seconds();
    const auto path = out_dir / ("run_report." + report.command + ".json");
    report.outputs.push_back(path.string());
    write_json(path, report.to_json());
}

inline std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
    std::filesystem::path manifest;
    std::filesystem::path out_dir;
    std::optional<std::size_t> cap = 2000;
    std::uint64_t seed = 0;
};

inline std::string metrics_csv(const std::vector<LayerMetrics>& metrics) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,S,I,E,Q,avgDPW,avgDPB,minDPW,minDistB,avgNorm,avgSVDE,globalEmbedDim,diagnostics\n";
    for (const auto& m : metrics) {
        std::string diag;
        for (const auto& d : m.diagnostics) diag += (diag.empty() ? "" : ";") + d;
        os << m.layer << ',' << m.S << ',' << m.I << ',' << m.E << ',' << m.Q << ',' << m.pair.avg_dpw << ','
           << m.pair.avg_dpb << ',' << m.pair.min_dpw << ',' << m.pair.min_dist_b << ',' << m.pair.avg_norm << ','
           << m.avg_svde << ',' << m.global_embed_dim << ",\"" << diag << "\"\n";
    }
    return os.str();
}

inline std::string metrics_svg(const std::vector<LayerMetrics>& metrics) {
    std::vector<double> x;
    Series s{"S", {}}, i{"I", {}}, e{"E", {}}, q{"Q", {}};
    for (const auto& m : metrics) {
        x.push_back(m.layer);
        s.y.push_back(m.S);
        i.y.push_back(m.I);
        e.y.push_back(m.E);
        q.y.push_back(m.Q);
    }
    return line_chart_svg("Per-layer knowledge quality", "layer", x, {s, i, e, q});
}

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& err = std::cerr) {
    const detail::Stopwatch clock;
    try {
        const auto manifest = read_manifest(opt.manifest);
        std::vector<RepresentationSet> sets;
        const auto diags = validate_manifest(manifest, &sets);
        if (!diags.empty()) {
            for (const auto& d : diags) err << "error: " << d << '\n';
            return kExitError;
        }
        std::vector<LayerMetrics> metrics(sets.size());
        parallel_for(sets.size(), worker_count(),
                     [&](std::size_t i) { metrics[i] = analyze_layer(sets[i], opt.cap, opt.seed); });
        std::sort(metrics.begin(), metrics.end(),
                  [](const LayerMetrics& a, const LayerMetrics& b) { return a.layer < b.layer; });

        std::filesystem::create_directories(opt.out_dir);
        RunReport report;
        report.command = "analyze";
        report.config = {{"manifest", manifest_to_json(manifest)},
                         {"cap", opt.cap ? nlohmann::json(*opt.cap) : nlohmann::json(nullptr)},
                         {"seed", opt.seed}};
        report.seeds = {opt.seed};
        auto j = nlohmann::json::array();
        for (const auto& m : metrics) j.push_back(to_json(m));
        const auto json_path = opt.out_dir / "metrics.json";
        const auto csv_path = opt.out_dir / "metrics.csv";
        const auto svg_path = opt.out_dir / "metrics.svg";
        detail::write_json(json_path, j);
        detail::write_text(csv_path, metrics_csv(metrics));
        detail::write_text(svg_path, metrics_svg(metrics));
        report.outputs = {json_path.string(), csv_path.string(), svg_path.string()};
        detail::finish_report(report, opt.out_dir, clock);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

// ---------------------------------------------------------------------------
// select

struct SelectOptions {
    std::filesystem::path metrics;
    std::string method = "kq";
    std::size_t k = 4;
    std::string criterion = "Q";
    std::optional<std::filesystem::path> manifest;  // stage annotations for stage_end
    std::vector<std::uint32_t> layers;              // manual
    std::optional<std::filesystem::path> out;       // default: selection.json next to the metrics
};

inline std::vector<LayerMetrics> read_metrics(const std::filesystem::path& path) {
    const auto j = detail::read_json_file(path);
    if (!j.is_array()) throw Error("metrics file must hold a JSON array");
    std::vector<LayerMetrics> out;
    for (const auto& item : j) out.push_back(layer_metrics_from_json(item));
    return out;
}

inline int cmd_select(const SelectOptions& opt, std::ostream& err = std::cerr) {
    const detail::Stopwatch clock;
    try {
        const auto metrics = read_metrics(opt.metrics);
        SelectionResult sel;
        if (opt.method == "kq") {
            sel = variant_select(metrics, parse_criterion(opt.criterion), opt.k);
        } else if (opt.method == "stage_end") {
            if (opt.manifest) {
                sel = stage_end_selection(read_manifest(*opt.manifest), opt.k);
            } else {
                std::vector<std::uint32_t> layers;
                for (const auto& m : metrics) layers.push_back(m.layer);
                std::sort(layers.begin(), layers.end());
                sel = stage_end_selection(layers, opt.k);
            }
            sel.ranking = rank_layers(metrics, Criterion::Q);
        } else if (opt.method == "manual") {
            sel = manual_selection(opt.layers);
            for (auto l : sel.selected) {
                if (std::none_of(metrics.begin(), metrics.end(), [&](const LayerMetrics& m) { return m.layer == l; })) {
                    throw Error("layer " + std::to_string(l) + " is not in the metrics");
                }
            }
            sel.ranking = rank_layers(metrics, Criterion::Q);
        } else {
            throw Error("unknown method: " + opt.method);
        }
        const auto out = opt.out.value_or(opt.metrics.parent_path() / "selection.json");
        const auto out_dir = out.has_parent_path() ? out.parent_path() : std::filesystem::path(".");
        std::filesystem::create_directories(out_dir);
        detail::write_json(out, to_json(sel));
        RunReport report;
        report.command = "select";
        report.config = {{"metrics", config_hash(detail::read_json_file(opt.metrics))},
                         {"method", opt.method},
                         {"k", opt.k},
                         {"criterion", opt.criterion},
                         {"layers", opt.layers}};
        report.outputs = {out.string()};
        detail::finish_report(report, out_dir, clock);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

// ---------------------------------------------------------------------------
// distill

struct DistillOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir = ".";
    bool strict = false;    // exit 3 when any run failed to converge
    bool parallel = false;  // run cells concurrently regardless of the config
};

inline int cmd_distill(const DistillOptions& opt, std::ostream& err = std::cerr) {
    const detail::Stopwatch clock;
    try {
        const auto raw = detail::read_json_file(opt.config);
        auto cfg = experiment_config_from_json(raw, opt.config.parent_path());
        if (opt.parallel) cfg.parallel = true;
        const auto result = run_experiment(cfg);
        std::filesystem::create_directories(opt.out_dir);
        auto j = to_json(result, cfg);
        j["config"] = raw;
        const auto path = opt.out_dir / "results.json";
        detail::write_json(path, j);
        RunReport report;
        report.command = "distill";
        report.config = raw;
        report.seeds = cfg.seeds;
        report.outputs = {path.string()};
        const bool failed = !result.all_converged();
        report.exit_status = failed && opt.strict ? kExitNotConverged : kExitOk;
        detail::finish_report(report, opt.out_dir, clock);
        if (failed) err << "warning: some runs failed to converge\n";
        return report.exit_status;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::filesystem::path results;
    std::filesystem::path out_dir;
};

inline int cmd_report(const ReportOptions& opt, std::ostream& err = std::cerr) {
    const detail::Stopwatch clock;
    try {
        const auto j = detail::read_json_file(opt.results);
        for (const char* key : {"summary", "ari"}) {
            if (!j.contains(key)) throw Error(std::string("results missing field \"") + key + "\"");
        }
        std::map<std::string, std::string> ari_text;
        for (const auto& a : j.at("ari").at("cells")) {
            const auto& v = a.at("value");
            char buf[32];
            if (v.is_number()) std::snprintf(buf, sizeof buf, "%+.3f", v.get<double>());
            ari_text[a.at("cell").get<std::string>()] =
                v.is_number() ? buf : (a.at("unstable").is_boolean() ? "unstable" : "—");
        }
        const std::string reference = j.at("ari").at("reference").get<std::string>();
        const std::string baseline = j.at("ari").at("baseline").get<std::string>();

        std::ostringstream md;
        md << "| cell | top-1 (%) | runs | failed | ARI vs " << reference << " |\n";
        md << "|---|---|---|---|---|\n";
        std::vector<Bar> bars;
        for (const auto& s : j.at("summary")) {
            for (const char* key : {"cell", "runs", "failed", "mean", "sd"}) {
                if (!s.contains(key)) throw Error(std::string("summary entry missing field \"") + key + "\"");
            }
            const auto cell = s.at("cell").get<std::string>();
            const bool ok = s.at("mean").is_number();
            const std::string acc =
                ok ? detail::percent(s.at("mean").get<double>()) + " ± " + detail::percent(s.at("sd").get<double>())
                   : "—";
            std::string a = "—";
            if (cell == reference) a = "(reference)";
            else if (cell == baseline) a = "(baseline)";
            else if (auto it = ari_text.find(cell); it != ari_text.end()) a = it->second;
            md << "| " << cell << " | " << acc << " | " << s.at("runs").get<std::size_t>() << " | "
               << s.at("failed").get<std::size_t>() << " | " << a << " |\n";
            bars.push_back({cell, ok ? 100.0 * s.at("mean").get<double>() : std::nan(""),
                            ok ? 100.0 * s.at("sd").get<double>() : 0.0});
        }
        std::filesystem::create_directories(opt.out_dir);
        const auto md_path = opt.out_dir / "report.md";
        const auto svg_path = opt.out_dir / "accuracy.svg";
        detail::write_text(md_path, md.str());
        detail::write_text(svg_path, bar_chart_svg("Final test accuracy", "top-1 (%)", bars));
        RunReport report;
        report.command = "report";
        report.config = {{"results", config_hash(j)}};
        if (j.contains("config") && j.at("config").contains("seeds")) {
            report.seeds = j.at("config").at("seeds").get<std::vector<std::uint64_t>>();
        }
        report.outputs = {md_path.string(), svg_path.string()};
        detail::finish_report(report, opt.out_dir, clock);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

}  // namespace kqkit
