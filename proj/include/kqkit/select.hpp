#pragma once

// Teacher layer selection: knowledge-quality top-k, single-component variants,
// and the conventional stage-end baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kqkit/error.hpp"
#include "kqkit/metrics.hpp"
#include "kqkit/repr_store.hpp"

namespace kqkit {

enum class Criterion { S, I, E, IE, Q };

inline std::string_view to_string(Criterion c) {
    switch (c) {
        case Criterion::S: return "S";
        case Criterion::I: return "I";
        case Criterion::E: return "E";
        case Criterion::IE: return "IE";
        case Criterion::Q: return "Q";
    }
    return "Q";
}

inline Criterion parse_criterion(std::string_view s) {
    if (s == "S") return Criterion::S;
    if (s == "I") return Criterion::I;
    if (s == "E") return Criterion::E;
    if (s == "IE") return Criterion::IE;
    if (s == "Q") return Criterion::Q;
    throw Error("unknown criterion: " + std::string(s));
}

inline double criterion_value(const LayerMetrics& m, Criterion c) {
    switch (c) {
        case Criterion::S: return m.S;
        case Criterion::I: return m.I;
        case Criterion::E: return m.E;
        case Criterion::IE: return std::sqrt(std::max(0.0, m.I * m.E));
        case Criterion::Q: return m.Q;
    }
    return m.Q;
}

struct RankedLayer {
    std::uint32_t layer = 0;
    double score = 0.0;
    friend bool operator==(const RankedLayer&, const RankedLayer&) = default;
};

struct SelectionResult {
    std::string method;  // "kq", "stage_end" or "manual"
    Criterion criterion = Criterion::Q;
    std::vector<RankedLayer> ranking;     // score descending
    std::vector<std::uint32_t> selected;  // ascending by depth
    std::vector<std::vector<double>> mapping;

    std::size_t k() const { return selected.size(); }
};

/// k x k one-to-one mapping with unit weights.
inline std::vector<std::vector<double>> identity_mapping(std::size_t k) {
    std::vector<std::vector<double>> a(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) a[i][i] = 1.0;
    return a;
}

/// Sorted by the criterion descending; equal scores rank the deeper layer first.
inline std::vector<RankedLayer> rank_layers(std::span<const LayerMetrics> metrics,
                                            Criterion criterion = Criterion::Q) {
    std::vector<RankedLayer> r;
    r.reserve(metrics.size());
    for (const auto& m : metrics) r.push_back({m.layer, criterion_value(m, criterion)});
    std::sort(r.begin(), r.end(), [](const RankedLayer& a, const RankedLayer& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.layer > b.layer;
    });
    return r;
}

inline SelectionResult variant_select(std::span<const LayerMetrics> metrics, Criterion criterion,
                                      std::size_t k) {
    if (k == 0) throw Error("k must be positive");
    if (k > metrics.size()) {
        throw Error("k = " + std::to_string(k) + " exceeds the " + std::to_string(metrics.size()) +
                    " available layers");
    }
    SelectionResult out;
    out.method = "kq";
    out.criterion = criterion;
    out.ranking = rank_layers(metrics, criterion);
    for (std::size_t i = 0; i < k; ++i) out.selected.push_back(out.ranking[i].layer);
    std::sort(out.selected.begin(), out.selected.end());
    if (std::adjacent_find(out.selected.begin(), out.selected.end()) != out.selected.end()) {
        throw Error("duplicate layer index in metrics");
    }
    out.mapping = identity_mapping(k);
    return out;
}

inline SelectionResult select_topk(std::span<const LayerMetrics> metrics, std::size_t k = 4) {
    return variant_select(metrics, Criterion::Q, k);
}

/// Relative depths used for models without stage annotations. For k = 4 these are the mean
/// relative depths of the stage-end layers of VGG19 ([3, 7, 11, 15] of 0..18) and
/// ResNet34 ([3, 7, 13, 16] of 0..17); other k interpolate linearly between the extremes.
inline std::vector<double> stageless_depths(std::size_t k) {
    if (k == 4) return {0.17, 0.40, 0.69, 0.89};
    if (k == 1) return {0.89};
    std::vector<double> f(k);
    for (std::size_t i = 0; i < k; ++i) {
        f[i] = 0.17 + (0.89 - 0.17) * static_cast<double>(i) / static_cast<double>(k - 1);
    }
    return f;
}

namespace detail {

// Round each relative depth to a position in [0, n), then force strictly increasing positions.
inline std::vector<std::size_t> depth_positions(std::size_t n, std::size_t k) {
    const auto depths = stageless_depths(k);
    std::vector<std::size_t> pos(k);
    for (std::size_t i = 0; i < k; ++i) {
        pos[i] = static_cast<std::size_t>(std::lround(depths[i] * static_cast<double>(n - 1)));
    }
    for (std::size_t i = 1; i < k; ++i) pos[i] = std::max(pos[i], pos[i - 1] + 1);
    // Pull back from the end if bumping overflowed.
    if (pos[k - 1] > n - 1) {
        pos[k - 1] = n - 1;
        for (std::size_t i = k - 1; i-- > 0;) pos[i] = std::min(pos[i], pos[i + 1] - 1);
    }
    return pos;
}

}  // namespace detail

/// Conventional selection: the last layer of each stage, using the deepest k stages.
/// When there are more than k stages the deepest stage (the one feeding the classifier)
/// is excluded first. Manifests without complete stage annotations, or with fewer than k
/// stages, fall back to fixed relative depths.
inline SelectionResult stage_end_selection(const LayerManifest& manifest, std::size_t k = 4) {
    if (k == 0) throw Error("k must be positive");
    if (manifest.entries.size() < k) {
        throw Error("fewer than k layers: manifest has " + std::to_string(manifest.entries.size()));
    }
    std::vector<ManifestEntry> entries = manifest.entries;
    std::sort(entries.begin(), entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.layer < b.layer; });

    SelectionResult out;
    out.method = "stage_end";

    const bool staged = std::all_of(entries.begin(), entries.end(),
                                    [](const ManifestEntry& e) { return e.stage.has_value(); });
    std::map<int, std::uint32_t> stage_end;
    if (staged) {
        for (const auto& e : entries) {
            auto [it, inserted] = stage_end.try_emplace(*e.stage, e.layer);
            if (!inserted) it->second = std::max(it->second, e.layer);
        }
    }
    if (staged && stage_end.size() >= k) {
        std::vector<std::uint32_t> ends;
        for (const auto& [stage, layer] : stage_end) ends.push_back(layer);
        if (ends.size() > k) ends.pop_back();
        out.selected.assign(ends.end() - static_cast<std::ptrdiff_t>(k), ends.end());
    } else {
        for (auto p : detail::depth_positions(entries.size(), k)) out.selected.push_back(entries[p].layer);
    }
    std::sort(out.selected.begin(), out.selected.end());
    out.mapping = identity_mapping(k);
    return out;
}

/// Stage-less convenience overload over a plain list of layer indices.
inline SelectionResult stage_end_selection(std::span<const std::uint32_t> layers, std::size_t k = 4) {
    LayerManifest m;
    for (auto l : layers) m.entries.push_back({l, {}, {}, {}});
    return stage_end_selection(m, k);
}

inline SelectionResult manual_selection(std::vector<std::uint32_t> layers) {
    if (layers.empty()) throw Error("manual selection needs at least one layer");
    std::sort(layers.begin(), layers.end());
    if (std::adjacent_find(layers.begin(), layers.end()) != layers.end()) {
        throw Error("manual selection has duplicate layers");
    }
    SelectionResult out;
    out.method = "manual";
    out.selected = std::move(layers);
    out.mapping = identity_mapping(out.selected.size());
    return out;
}

inline nlohmann::json to_json(const SelectionResult& s) {
    auto ranking = nlohmann::json::array();
    for (const auto& r : s.ranking) ranking.push_back(nlohmann::json::array({r.layer, r.score}));
    nlohmann::json j{{"method", s.method},
                     {"k", s.k()},
                     {"ranking", ranking},
                     {"selected", s.selected},
                     {"mapping", s.mapping}};
    if (s.method == "kq") j["criterion"] = std::string(to_string(s.criterion));
    return j;
}

inline SelectionResult selection_from_json(const nlohmann::json& j) {
    for (const char* key : {"method", "k", "ranking", "selected", "mapping"}) {
        if (!j.contains(key)) throw Error(std::string("selection missing field \"") + key + "\"");
    }
    SelectionResult s;
    s.method = j.at("method").get<std::string>();
    if (j.contains("criterion")) s.criterion = parse_criterion(j.at("criterion").get<std::string>());
    for (const auto& r : j.at("ranking")) s.ranking.push_back({r.at(0).get<std::uint32_t>(), r.at(1).get<double>()});
    s.selected = j.at("selected").get<std::vector<std::uint32_t>>();
    s.mapping = j.at("mapping").get<std::vector<std::vector<double>>>();
    if (j.at("k").get<std::size_t>() != s.selected.size()) throw Error("selection k does not match selected");
    return s;
}

}  // namespace kqkit
