// kqkit: layer knowledge-quality analysis, teacher layer selection and desk-scale distillation.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kqkit/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-quality layer analysis and feature distillation"};
    app.set_version_flag("--version", kqkit::kVersion);
    app.require_subcommand(1);

    kqkit::AnalyzeOptions analyze;
    std::size_t cap = 2000;
    auto* a = app.add_subcommand("analyze", "Compute per-layer metrics for a manifest of RDMP dumps");
    a->add_option("--manifest", analyze.manifest, "Layer manifest (JSON)")->required()->check(CLI::ExistingFile);
    a->add_option("--out", analyze.out_dir, "Output directory")->required();
    a->add_option("--cap", cap, "Per-class sample cap for pairwise terms, 0 = no cap")->capture_default_str();
    a->add_option("--seed", analyze.seed, "Subsampling seed")->capture_default_str();

    kqkit::SelectOptions select;
    std::string select_manifest, select_out;
    auto* s = app.add_subcommand("select", "Choose teacher layers from metrics.json");
    s->add_option("--metrics", select.metrics, "metrics.json from analyze")->required()->check(CLI::ExistingFile);
    s->add_option("--method", select.method, "kq | stage_end | manual")
        ->check(CLI::IsMember({"kq", "stage_end", "manual"}))
        ->capture_default_str();
    s->add_option("--k", select.k, "Number of layers")->capture_default_str();
    s->add_option("--criterion", select.criterion, "Ranking key for kq")
        ->check(CLI::IsMember({"S", "I", "E", "IE", "Q"}))
        ->capture_default_str();
    s->add_option("--manifest", select_manifest, "Manifest with stage annotations (stage_end)");
    s->add_option("--layers", select.layers, "Layer indices (manual)")->delimiter(',');
    s->add_option("--out", select_out, "Output file (default: selection.json beside the metrics)");

    kqkit::DistillOptions distill;
    auto* d = app.add_subcommand("distill", "Run a recipe x selection grid over seeds");
    d->add_option("--config", distill.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    d->add_option("--out", distill.out_dir, "Output directory")->capture_default_str();
    d->add_flag("--strict", distill.strict, "Exit 3 if any run failed to converge");
    d->add_flag("--parallel", distill.parallel, "Train runs concurrently (KQKIT_THREADS caps workers)");

    kqkit::ReportOptions report;
    auto* r = app.add_subcommand("report", "Summarise results.json as markdown and SVG");
    r->add_option("--results", report.results, "results.json from distill")->required()->check(CLI::ExistingFile);
    r->add_option("--out", report.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kqkit::kExitUsage;
    }

    if (a->parsed()) {
        analyze.cap = cap == 0 ? std::nullopt : std::optional<std::size_t>(cap);
        return kqkit::cmd_analyze(analyze);
    }
    if (s->parsed()) {
        if (!select_manifest.empty()) select.manifest = select_manifest;
        if (!select_out.empty()) select.out = select_out;
        return kqkit::cmd_select(select);
    }
    if (d->parsed()) return kqkit::cmd_distill(distill);
    return kqkit::cmd_report(report);
}
