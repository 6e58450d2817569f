#pragma once

// Representation sets and the RDMP on-disk dump format.
//
// RDMP layout (little-endian, independent of host byte order):
//   magic "RDMP" | version u32 = 1 | layer_index u32 | N u64 | d u64 | C u32
//   | labels: N x u32 | data: N*d x f32, row-major
//
// Feature maps are flattened by the exporter in row-major tensor order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "kqkit/error.hpp"

namespace kqkit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr char kDumpMagic[4] = {'R', 'D', 'M', 'P'};
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderBytes = 4 + 4 + 4 + 8 + 8 + 4;

/// One layer's representations of N samples: an N x d block of activations with class labels.
/// Immutable once validated; safe to share read-only between threads.
struct RepresentationSet {
    std::uint32_t layer_index = 0;
    std::uint64_t rows = 0;    // N
    std::uint64_t width = 0;   // d, the ambient dimension
    std::uint32_t classes = 0; // C
    std::vector<std::uint32_t> labels;
    std::vector<float> data;   // row-major, rows * width

    float at(std::size_t row, std::size_t col) const { return data[row * width + col]; }
    std::span<const float> row(std::size_t r) const {
        return {data.data() + r * width, static_cast<std::size_t>(width)};
    }

    /// Throws Error naming the first violated invariant.
    void validate() const {
        if (rows < 2) throw Error("need at least 2 samples");
        if (width < 1) throw Error("width must be at least 1");
        if (classes < 1) throw Error("class count must be at least 1");
        if (labels.size() != rows) throw Error("label count does not match row count");
        if (data.size() != rows * width) throw Error("data size does not match N x d");
        for (auto l : labels) {
            if (l >= classes) throw Error("label out of range");
        }
        for (float v : data) {
            if (!std::isfinite(v)) throw Error("non-finite value in data");
        }
    }

    /// Upcast to double for metric arithmetic.
    RowMatrix matrix() const {
        RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
        for (std::size_t i = 0; i < data.size(); ++i) m.data()[i] = static_cast<double>(data[i]);
        return m;
    }

    /// Bitwise equality, so -0.0f and 0.0f differ.
    friend bool operator==(const RepresentationSet& a, const RepresentationSet& b) {
        return a.layer_index == b.layer_index && a.rows == b.rows && a.width == b.width &&
               a.classes == b.classes && a.labels == b.labels && a.data.size() == b.data.size() &&
               (a.data.empty() ||
                std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    }
};

/// Build a set from a double matrix (rounded to f32 storage).
inline RepresentationSet make_representation_set(std::uint32_t layer, const RowMatrix& values,
                                                 std::vector<std::uint32_t> labels,
                                                 std::uint32_t classes) {
    RepresentationSet s;
    s.layer_index = layer;
    s.rows = static_cast<std::uint64_t>(values.rows());
    s.width = static_cast<std::uint64_t>(values.cols());
    s.classes = classes;
    s.labels = std::move(labels);
    s.data.resize(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) s.data[i] = static_cast<float>(values.data()[i]);
    return s;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

/// Serialize to the RDMP byte layout.
inline std::vector<unsigned char> encode_dump(const RepresentationSet& set) {
    set.validate();
    std::vector<unsigned char> out;
    out.reserve(kDumpHeaderBytes + set.labels.size() * 4 + set.data.size() * 4);
    out.insert(out.end(), std::begin(kDumpMagic), std::end(kDumpMagic));
    detail::put_u32(out, kDumpVersion);
    detail::put_u32(out, set.layer_index);
    detail::put_u64(out, set.rows);
    detail::put_u64(out, set.width);
    detail::put_u32(out, set.classes);
    for (auto l : set.labels) detail::put_u32(out, l);
    for (float v : set.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline RepresentationSet decode_dump(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4) throw Error("truncated");
    if (std::memcmp(bytes.data(), kDumpMagic, 4) != 0) throw Error("bad magic");
    if (bytes.size() < kDumpHeaderBytes) throw Error("truncated");
    const unsigned char* p = bytes.data() + 4;
    if (detail::get_u32(p) != kDumpVersion) throw Error("unsupported version");
    RepresentationSet s;
    s.layer_index = detail::get_u32(p + 4);
    s.rows = detail::get_u64(p + 8);
    s.width = detail::get_u64(p + 16);
    s.classes = detail::get_u32(p + 24);

    const std::uint64_t payload = bytes.size() - kDumpHeaderBytes;
    // Guard the multiplication before trusting header sizes.
    if (s.rows > payload / 4) throw Error("truncated");
    const std::uint64_t label_bytes = s.rows * 4;
    if (s.width != 0 && s.rows > (payload - label_bytes) / 4 / s.width) throw Error("truncated");
    const std::uint64_t data_bytes = s.rows * s.width * 4;
    if (label_bytes + data_bytes != payload) {
        throw Error(label_bytes + data_bytes > payload ? "truncated" : "trailing bytes");
    }

    const unsigned char* q = bytes.data() + kDumpHeaderBytes;
    s.labels.resize(s.rows);
    for (std::uint64_t i = 0; i < s.rows; ++i) s.labels[i] = detail::get_u32(q + 4 * i);
    q += label_bytes;
    s.data.resize(s.rows * s.width);
    for (std::uint64_t i = 0; i < s.data.size(); ++i) {
        s.data[i] = std::bit_cast<float>(detail::get_u32(q + 4 * i));
    }
    for (auto l : s.labels) {
        if (l >= s.classes) throw Error("invalid labels");
    }
    s.validate();
    return s;
}

inline void write_dump(const RepresentationSet& set, const std::filesystem::path& path) {
    const auto bytes = encode_dump(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

inline RepresentationSet read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_dump(bytes);
}

// ---------------------------------------------------------------------------
// Manifest: one RDMP file per layer, listed in a JSON array.

struct ManifestEntry {
    std::uint32_t layer = 0;
    std::string file;
    std::optional<int> stage;
    std::optional<std::string> desc;
};

struct LayerManifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // relative file paths resolve against this

    std::filesystem::path resolve(const ManifestEntry& e) const {
        std::filesystem::path p(e.file);
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline LayerManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir = {}) {
    if (!j.is_array()) throw Error("manifest must be a JSON array");
    LayerManifest m;
    m.base_dir = std::move(base_dir);
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("layer") || !item.contains("file")) {
            throw Error("manifest entry needs \"layer\" and \"file\"");
        }
        ManifestEntry e;
        const auto layer = item.at("layer").get<long long>();
        if (layer < 0) throw Error("negative layer index in manifest");
        e.layer = static_cast<std::uint32_t>(layer);
        e.file = item.at("file").get<std::string>();
        if (item.contains("stage") && !item.at("stage").is_null()) e.stage = item.at("stage").get<int>();
        if (item.contains("desc") && !item.at("desc").is_null()) e.desc = item.at("desc").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline nlohmann::json manifest_to_json(const LayerManifest& m) {
    auto j = nlohmann::json::array();
    for (const auto& e : m.entries) {
        j.push_back({{"layer", e.layer},
                     {"file", e.file},
                     {"stage", e.stage ? nlohmann::json(*e.stage) : nlohmann::json(nullptr)},
                     {"desc", e.desc ? nlohmann::json(*e.desc) : nlohmann::json(nullptr)}});
    }
    return j;
}

inline LayerManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("manifest parse error: ") + e.what());
    }
    return manifest_from_json(j, path.parent_path());
}

inline void write_manifest(const LayerManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << manifest_to_json(m).dump(2) << '\n';
}

/// Checks structure and loads every file. Empty result means the manifest is usable.
/// Loaded sets are appended to `loaded` (in manifest order) when provided.
inline Diagnostics validate_manifest(const LayerManifest& m, std::vector<RepresentationSet>* loaded = nullptr) {
    Diagnostics diags;
    if (m.entries.empty()) diags.push_back("empty manifest");
    for (std::size_t i = 1; i < m.entries.size(); ++i) {
        const auto& prev = m.entries[i - 1];
        const auto& cur = m.entries[i];
        if (cur.layer == prev.layer) {
            diags.push_back("duplicate layer " + std::to_string(cur.layer));
        } else if (cur.layer < prev.layer) {
            diags.push_back("layer indices not increasing at " + std::to_string(cur.layer));
        }
        if (prev.stage && cur.stage && *cur.stage < *prev.stage) {
            diags.push_back("stage decreases at layer " + std::to_string(cur.layer));
        }
    }

    std::optional<RepresentationSet> first;
    for (const auto& e : m.entries) {
        RepresentationSet s;
        try {
            s = read_dump(m.resolve(e));
        } catch (const Error& err) {
            diags.push_back("cannot load layer " + std::to_string(e.layer) + ": " + err.what());
            continue;
        }
        if (s.layer_index != e.layer) {
            diags.push_back("layer index mismatch in " + e.file + ": file says " +
                            std::to_string(s.layer_index));
        }
        if (!first) {
            first = s;
        } else {
            if (s.rows != first->rows) {
                diags.push_back("sample count mismatch at layer " + std::to_string(e.layer));
            } else if (s.labels != first->labels) {
                diags.push_back("label mismatch at layer " + std::to_string(e.layer));
            }
            if (s.classes != first->classes) {
                diags.push_back("class count mismatch at layer " + std::to_string(e.layer));
            }
        }
        if (loaded != nullptr) loaded->push_back(std::move(s));
    }
    return diags;
}

}  // namespace kqkit
