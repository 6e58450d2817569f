#pragma once

// Recipe x layer-selection grids: build or load a teacher, analyse its layers, pick teacher
// layers per cell, train students over seeds and summarise with ARI.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kqkit/data.hpp"
#include "kqkit/distill.hpp"
#include "kqkit/error.hpp"
#include "kqkit/metrics.hpp"
#include "kqkit/parallel.hpp"
#include "kqkit/repr_store.hpp"
#include "kqkit/select.hpp"

namespace kqkit {

/// Synthetic teacher trace over a labelled dataset. Entry i describes layer i: nullopt copies
/// the inputs; a value p gives relu(class prototype + Gaussian noise), where a fraction p of
/// samples take the prototype of a uniformly drawn label instead of their own.
struct TraceSpec {
    std::vector<std::optional<double>> layer_mix;
    int width = 32;
    double noise = 0.3;
    std::uint64_t seed = 0;
};

inline TeacherFeatures make_label_mixing_trace(const Dataset& train, const TraceSpec& spec) {
    if (spec.width < 1 || spec.layer_mix.empty()) throw Error("invalid trace specification");
    Rng rng(mix_seed(spec.seed, 0x7ACE));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_label(0, train.classes - 1);
    Eigen::MatrixXd proto(train.classes, spec.width);
    for (Eigen::Index c = 0; c < proto.rows(); ++c) {
        for (Eigen::Index k = 0; k < proto.cols(); ++k) proto(c, k) = normal(rng);
    }
    TeacherFeatures t;
    for (std::size_t l = 0; l < spec.layer_mix.size(); ++l) {
        const auto layer = static_cast<std::uint32_t>(l);
        if (!spec.layer_mix[l]) {
            t.layers[layer] = train.x;
            continue;
        }
        const double p = *spec.layer_mix[l];
        if (p < 0.0 || p > 1.0) throw Error("label mixing fraction must lie in [0, 1]");
        Eigen::MatrixXd m(train.size(), spec.width);
        for (Eigen::Index i = 0; i < train.size(); ++i) {
            int y = train.y[static_cast<std::size_t>(i)];
            if (unit(rng) < p) y = any_label(rng);
            for (Eigen::Index k = 0; k < spec.width; ++k) {
                m(i, k) = std::max(0.0, proto(y, k) + spec.noise * normal(rng));
            }
        }
        t.layers[layer] = std::move(m);
    }
    return t;
}

struct CellSpec {
    std::string name;
    RecipeKind recipe = RecipeKind::ours;
    std::string selection;  // kq | stage_end | manual | none; empty = recipe default
    Criterion criterion = Criterion::Q;
    std::vector<std::uint32_t> layers;  // manual selection
};

struct ExperimentConfig {
    // data
    std::string data_kind = "blobs";  // blobs | dumps
    BlobSpec blobs;
    std::filesystem::path train_dump, test_dump;
    // teacher
    std::string teacher_source = "train";  // train | manifest | trace
    std::vector<int> teacher_hidden{64, 64, 64, 64, 64, 64, 64, 64};
    int teacher_epochs = 40;
    double teacher_lr = 0.005;
    std::uint64_t teacher_seed = 123;
    std::filesystem::path teacher_manifest;
    TraceSpec trace;
    // student
    std::vector<int> student_hidden{64, 64, 64, 64};
    int student_epochs = 50;
    double student_lr = 0.005;
    int batch_size = 128;
    bool train_projector = false;
    bool pool_projector = true;
    // losses
    double beta = 1.0;
    double temperature = 4.0;
    bool kl_swap = false;
    // selection
    std::size_t k = 4;
    std::optional<std::size_t> cap = 2000;
    std::uint64_t metric_seed = 0;
    // grid
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<CellSpec> cells;
    std::string reference = "base_fkd";
    std::string baseline = "ce_only";
    bool parallel = false;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw Error(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw Error("unknown key \"" + key + "\" in " + where);
    }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig c;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    try {
        detail::reject_unknown(j,
                               {"data", "teacher", "student", "beta", "temperature", "kl_swap", "k", "cap",
                                "metric_seed", "seeds", "cells", "reference", "baseline", "parallel"},
                               "config");
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::reject_unknown(d,
                                   {"kind", "classes", "dim", "train", "test", "clusters_per_class", "center_scale",
                                    "noise", "seed"},
                                   "data");
            detail::read_opt(d, "kind", c.data_kind);
            if (c.data_kind == "blobs") {
                detail::read_opt(d, "classes", c.blobs.classes);
                detail::read_opt(d, "dim", c.blobs.dim);
                detail::read_opt(d, "train", c.blobs.train);
                detail::read_opt(d, "test", c.blobs.test);
                detail::read_opt(d, "clusters_per_class", c.blobs.clusters_per_class);
                detail::read_opt(d, "center_scale", c.blobs.center_scale);
                detail::read_opt(d, "noise", c.blobs.noise);
                detail::read_opt(d, "seed", c.blobs.seed);
            } else if (c.data_kind == "dumps") {
                c.train_dump = resolve(d.at("train").get<std::string>());
                c.test_dump = resolve(d.at("test").get<std::string>());
            } else {
                throw Error("unknown data kind: " + c.data_kind);
            }
        }
        if (j.contains("teacher")) {
            const auto& t = j.at("teacher");
            detail::reject_unknown(t, {"source", "hidden", "epochs", "max_lr", "seed", "manifest", "trace"}, "teacher");
            detail::read_opt(t, "source", c.teacher_source);
            detail::read_opt(t, "hidden", c.teacher_hidden);
            detail::read_opt(t, "epochs", c.teacher_epochs);
            detail::read_opt(t, "max_lr", c.teacher_lr);
            detail::read_opt(t, "seed", c.teacher_seed);
            if (t.contains("manifest")) c.teacher_manifest = resolve(t.at("manifest").get<std::string>());
            if (t.contains("trace")) {
                const auto& tr = t.at("trace");
                detail::reject_unknown(tr, {"layer_mix", "width", "noise", "seed"}, "teacher.trace");
                for (const auto& v : tr.at("layer_mix")) {
                    c.trace.layer_mix.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
                }
                detail::read_opt(tr, "width", c.trace.width);
                detail::read_opt(tr, "noise", c.trace.noise);
                detail::read_opt(tr, "seed", c.trace.seed);
            }
            if (c.teacher_source != "train" && c.teacher_source != "manifest" && c.teacher_source != "trace") {
                throw Error("unknown teacher source: " + c.teacher_source);
            }
            if (c.teacher_source == "manifest" && c.teacher_manifest.empty()) throw Error("teacher.manifest is required");
            if (c.teacher_source == "trace" && c.trace.layer_mix.empty()) throw Error("teacher.trace.layer_mix is required");
        }
        if (j.contains("student")) {
            const auto& s = j.at("student");
            detail::reject_unknown(s, {"hidden", "epochs", "max_lr", "batch_size", "train_projector", "pool_projector"},
                                   "student");
            detail::read_opt(s, "hidden", c.student_hidden);
            detail::read_opt(s, "epochs", c.student_epochs);
            detail::read_opt(s, "max_lr", c.student_lr);
            detail::read_opt(s, "batch_size", c.batch_size);
            detail::read_opt(s, "train_projector", c.train_projector);
            detail::read_opt(s, "pool_projector", c.pool_projector);
        }
        detail::read_opt(j, "beta", c.beta);
        detail::read_opt(j, "temperature", c.temperature);
        detail::read_opt(j, "kl_swap", c.kl_swap);
        detail::read_opt(j, "k", c.k);
        if (j.contains("cap")) {
            c.cap = j.at("cap").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("cap").get<std::size_t>());
        }
        detail::read_opt(j, "metric_seed", c.metric_seed);
        detail::read_opt(j, "seeds", c.seeds);
        detail::read_opt(j, "reference", c.reference);
        detail::read_opt(j, "baseline", c.baseline);
        detail::read_opt(j, "parallel", c.parallel);
        if (!j.contains("cells") || !j.at("cells").is_array() || j.at("cells").empty()) {
            throw Error("config needs a non-empty \"cells\" array");
        }
        for (const auto& cj : j.at("cells")) {
            detail::reject_unknown(cj, {"name", "recipe", "selection", "criterion", "layers"}, "cell");
            CellSpec cell;
            cell.recipe = parse_recipe(cj.at("recipe").get<std::string>());
            cell.name = cj.value("name", std::string(to_string(cell.recipe)));
            detail::read_opt(cj, "selection", cell.selection);
            if (cj.contains("criterion")) cell.criterion = parse_criterion(cj.at("criterion").get<std::string>());
            detail::read_opt(cj, "layers", cell.layers);
            c.cells.push_back(std::move(cell));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config error: ") + e.what());
    }

    std::set<std::string> names;
    for (auto& cell : c.cells) {
        if (!names.insert(cell.name).second) throw Error("duplicate cell name: " + cell.name);
        if (cell.selection.empty()) cell.selection = default_selection_method(cell.recipe);
        const bool features = make_recipe(cell.recipe).uses_features;
        if (features && cell.selection == "none") throw Error("cell " + cell.name + " needs a layer selection");
        if (cell.selection != "kq" && cell.selection != "stage_end" && cell.selection != "manual" &&
            cell.selection != "none") {
            throw Error("unknown selection method: " + cell.selection);
        }
        if (cell.selection == "manual" && cell.layers.empty()) throw Error("manual selection needs \"layers\"");
    }
    if (c.seeds.empty()) throw Error("config needs at least one seed");
    if (c.k == 0) throw Error("k must be positive");
    return c;
}

/// One student training run.
struct RunRecord {
    std::string cell;
    RecipeKind recipe = RecipeKind::ours;
    std::string selection;
    std::uint64_t seed = 0;
    DistillResult result;
};

struct CellSummary {
    std::string cell;
    std::size_t runs = 0;
    std::size_t failed = 0;
    std::optional<double> mean;  // empty when any run failed to converge
    std::optional<double> sd;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    if (v.empty()) throw Error("mean of empty sample");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

struct ExperimentResult {
    std::optional<double> teacher_test_acc;
    std::vector<LayerMetrics> metrics;
    std::map<std::string, SelectionResult> selections;  // keyed by cell name
    std::vector<RunRecord> runs;
    std::vector<CellSummary> summary;

    const CellSummary* cell(const std::string& name) const {
        for (const auto& s : summary) {
            if (s.cell == name) return &s;
        }
        return nullptr;
    }
    bool all_converged() const {
        for (const auto& s : summary) {
            if (s.failed > 0) return false;
        }
        return true;
    }
};

/// ARI of a cell against the reference cell, with the baseline cell as the zero point.
inline std::optional<Ari> cell_ari(const ExperimentResult& r, const std::string& cell, const std::string& reference,
                                   const std::string& baseline) {
    const auto* a = r.cell(cell);
    const auto* ref = r.cell(reference);
    const auto* base = r.cell(baseline);
    if (a == nullptr || ref == nullptr || base == nullptr || !a->mean || !ref->mean || !base->mean) return std::nullopt;
    return ari(*a->mean, *ref->mean, *base->mean);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult out;
    TrainTest data;
    if (cfg.data_kind == "blobs") {
        data = make_blobs(cfg.blobs);
    } else {
        data.train = dataset_from_dump(read_dump(cfg.train_dump));
        data.test = dataset_from_dump(read_dump(cfg.test_dump));
        if (data.train.width() != data.test.width() || data.train.classes != data.test.classes) {
            throw Error("train and test dumps disagree in width or class count");
        }
    }

    TeacherFeatures teacher;
    std::optional<LayerManifest> manifest;
    if (cfg.teacher_source == "train") {
        DistillConfig tc;
        tc.student_hidden = cfg.teacher_hidden;
        tc.recipe = make_recipe(RecipeKind::ce_only);
        tc.epochs = cfg.teacher_epochs;
        tc.max_lr = cfg.teacher_lr;
        tc.batch_size = cfg.batch_size;
        tc.seed = cfg.teacher_seed;
        const auto trained = train(tc, data.train, data.test);
        if (!trained.converged) throw Error("teacher failed to converge: " + trained.failure);
        out.teacher_test_acc = trained.final_test_acc;
        teacher = capture_teacher(trained.model, data.train);
    } else if (cfg.teacher_source == "manifest") {
        manifest = read_manifest(cfg.teacher_manifest);
        std::vector<RepresentationSet> sets;
        const auto diags = validate_manifest(*manifest, &sets);
        if (!diags.empty()) throw Error("teacher manifest: " + diags.front());
        teacher = teacher_from_sets(sets, data.train);
    } else {
        teacher = make_label_mixing_trace(data.train, cfg.trace);
    }

    const auto layers = teacher.available();
    out.metrics.resize(layers.size());
    parallel_for(layers.size(), worker_count(), [&](std::size_t i) {
        out.metrics[i] = analyze_layer(teacher_layer_set(teacher, layers[i], data.train), cfg.cap, cfg.metric_seed);
    });

    for (const auto& cell : cfg.cells) {
        if (make_recipe(cell.recipe).kl_weight > 0.0 && !teacher.logits) {
            throw Error("cell " + cell.name + " needs teacher logits, which this teacher source lacks");
        }
        if (cell.selection == "kq") {
            out.selections[cell.name] = variant_select(out.metrics, cell.criterion, cfg.k);
        } else if (cell.selection == "stage_end") {
            out.selections[cell.name] = manifest ? stage_end_selection(*manifest, cfg.k) : stage_end_selection(layers, cfg.k);
        } else if (cell.selection == "manual") {
            out.selections[cell.name] = manual_selection(cell.layers);
        }
    }

    for (const auto& cell : cfg.cells) {
        for (auto seed : cfg.seeds) out.runs.push_back({cell.name, cell.recipe, cell.selection, seed, {}});
    }
    parallel_for(out.runs.size(), cfg.parallel ? worker_count() : 1u, [&](std::size_t i) {
        auto& run = out.runs[i];
        DistillConfig dc;
        dc.student_hidden = cfg.student_hidden;
        dc.recipe = make_recipe(run.recipe, cfg.temperature, cfg.beta);
        dc.recipe.kl_swap = cfg.kl_swap;
        dc.epochs = cfg.student_epochs;
        dc.batch_size = cfg.batch_size;
        dc.max_lr = cfg.student_lr;
        dc.seed = run.seed;
        dc.train_projector = cfg.train_projector;
        dc.pool_projector = cfg.pool_projector;
        if (auto it = out.selections.find(run.cell); it != out.selections.end() && dc.recipe.uses_features) {
            dc.teacher_layers = it->second.selected;
            dc.mapping = it->second.mapping;
        }
        run.result = train(dc, data.train, data.test, &teacher);
    });

    for (const auto& cell : cfg.cells) {
        CellSummary s;
        s.cell = cell.name;
        std::vector<double> acc;
        for (const auto& run : out.runs) {
            if (run.cell != cell.name) continue;
            ++s.runs;
            if (!run.result.converged) ++s.failed;
            acc.push_back(run.result.final_test_acc);
        }
        if (s.failed == 0) {
            const auto [m, sd] = mean_sd(acc);
            s.mean = m;
            s.sd = sd;
        }
        out.summary.push_back(std::move(s));
    }
    return out;
}

inline nlohmann::json to_json(const ExperimentResult& r, const ExperimentConfig& cfg) {
    using nlohmann::json;
    json j;
    j["teacher"] = {{"test_acc", r.teacher_test_acc ? json(*r.teacher_test_acc) : json(nullptr)}};
    j["metrics"] = json::array();
    for (const auto& m : r.metrics) j["metrics"].push_back(to_json(m));
    j["selections"] = json::object();
    for (const auto& [name, s] : r.selections) j["selections"][name] = to_json(s);
    j["runs"] = json::array();
    for (const auto& run : r.runs) {
        auto rj = to_json(run.result);
        rj["cell"] = run.cell;
        rj["recipe"] = std::string(to_string(run.recipe));
        rj["selection"] = run.selection;
        rj["seed"] = run.seed;
        j["runs"].push_back(std::move(rj));
    }
    j["summary"] = json::array();
    for (const auto& s : r.summary) {
        j["summary"].push_back({{"cell", s.cell},
                                {"runs", s.runs},
                                {"failed", s.failed},
                                {"mean", s.mean ? json(*s.mean) : json(nullptr)},
                                {"sd", s.sd ? json(*s.sd) : json(nullptr)}});
    }
    j["ari"] = {{"reference", cfg.reference}, {"baseline", cfg.baseline}, {"cells", json::array()}};
    for (const auto& s : r.summary) {
        if (s.cell == cfg.reference || s.cell == cfg.baseline) continue;
        const auto a = cell_ari(r, s.cell, cfg.reference, cfg.baseline);
        json entry = {{"cell", s.cell}};
        if (!a) {
            entry["value"] = nullptr;
            entry["unstable"] = nullptr;
        } else {
            entry["value"] = a->unstable ? json(nullptr) : json(a->value);
            entry["unstable"] = a->unstable;
        }
        j["ari"]["cells"].push_back(std::move(entry));
    }
    return j;
}

}  // namespace kqkit
