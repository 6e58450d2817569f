#pragma once

// Per-layer geometry statistics and the composite knowledge-quality score
//   Q = S + sqrt(I * E)
// where S is class separation, I is within-class information and E is packing efficiency.
// All arithmetic is double precision regardless of storage precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "kqkit/error.hpp"
#include "kqkit/random.hpp"
#include "kqkit/repr_store.hpp"

namespace kqkit {

inline constexpr double kDefaultVarianceThreshold = 0.95;

struct PairStats {
    double avg_dpw = 0.0;     // mean within-class cosine
    double avg_dpb = 0.0;     // mean between-class cosine
    double min_dpw = 0.0;     // class-average of the smallest |cosine| within a class
    double min_dist_b = 0.0;  // class-pair-average of the smallest between-class distance
    double avg_norm = 0.0;    // mean L2 norm over all samples
};

struct LayerMetrics {
    std::uint32_t layer = 0;
    PairStats pair;
    double avg_svde = 0.0;
    int global_embed_dim = 0;
    double S = 0.0;
    double I = 0.0;
    double E = 0.0;
    double Q = 0.0;
    Diagnostics diagnostics;
};

namespace detail {

// Row indices grouped by label, ascending within each class.
inline std::vector<std::vector<Eigen::Index>> class_members(std::span<const std::uint32_t> labels,
                                                            std::uint32_t classes) {
    std::vector<std::vector<Eigen::Index>> members(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw Error("label out of range");
        members[labels[i]].push_back(static_cast<Eigen::Index>(i));
    }
    return members;
}

// Uniform sample of `cap` members without replacement, returned in ascending order.
inline std::vector<Eigen::Index> subsample(std::vector<Eigen::Index> members, std::size_t cap,
                                           std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < cap; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
        std::swap(members[i], members[pick(rng)]);
    }
    members.resize(cap);
    std::sort(members.begin(), members.end());
    return members;
}

inline RowMatrix gather_rows(const RowMatrix& m, const std::vector<Eigen::Index>& idx) {
    RowMatrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
    return out;
}

// Unit-normalized rows; zero rows stay zero so their cosine with anything is 0.
inline RowMatrix unit_rows(const RowMatrix& m, bool* saw_zero) {
    RowMatrix u = m;
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        const double n = u.row(r).norm();
        if (n > 0.0) {
            u.row(r) /= n;
        } else if (saw_zero != nullptr) {
            *saw_zero = true;
        }
    }
    return u;
}

// Descending variance spectrum (squared singular values) of the mean-centered rows.
// Returns an empty vector when the rows carry no variance.
inline std::vector<double> centered_variance_spectrum(const RowMatrix& rows) {
    if (rows.rows() < 2) return {};
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    const double total = centered.squaredNorm();
    const double raw = rows.squaredNorm();
    if (!(total > 1e-20 * raw) || total == 0.0) return {};
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
    const auto& sv = svd.singularValues();
    std::vector<double> var(static_cast<std::size_t>(sv.size()));
    for (Eigen::Index i = 0; i < sv.size(); ++i) var[static_cast<std::size_t>(i)] = sv[i] * sv[i];
    std::sort(var.begin(), var.end(), std::greater<>());
    return var;
}

inline int components_for_variance(const std::vector<double>& var, double threshold) {
    if (var.empty()) return 0;
    double total = 0.0;
    for (double v : var) total += v;
    if (total <= 0.0) return 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < var.size(); ++k) {
        acc += var[k];
        if (acc / total >= threshold - 1e-12) return static_cast<int>(k + 1);
    }
    return static_cast<int>(var.size());
}

}  // namespace detail

/// Cosine and distance statistics over class-labelled rows.
/// With `cap` set, classes larger than cap are uniformly subsampled (seeded) for the
/// O(N^2) terms; avgNorm always uses every row.
/// Rows of `x` carry labels in [0, classes).
inline PairStats pairwise_stats(const RowMatrix& x, std::span<const std::uint32_t> labels, std::uint32_t classes,
                                std::optional<std::size_t> cap, std::uint64_t seed, Diagnostics* diag = nullptr) {
    if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw Error("label count does not match row count");
    auto members = detail::class_members(labels, classes);

    PairStats out;
    double norm_sum = 0.0;
    bool saw_zero = false;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = x.row(r).norm();
        norm_sum += n;
        if (n == 0.0) saw_zero = true;
    }
    out.avg_norm = norm_sum / static_cast<double>(x.rows());

    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < members.size(); ++c) {
        if (members[c].empty()) {
            add_diagnostic(diag, "empty class excluded");
            continue;
        }
        present.push_back(c);
        if (cap && members[c].size() > *cap) {
            members[c] = detail::subsample(std::move(members[c]), *cap, mix_seed(seed, c));
            add_diagnostic(diag, "subsampled");
        }
    }
    if (present.size() < 2) throw Error("need >= 2 classes");

    std::vector<RowMatrix> raw(members.size());
    std::vector<RowMatrix> unit(members.size());
    std::vector<Eigen::VectorXd> sq_norms(members.size());
    for (auto c : present) {
        raw[c] = detail::gather_rows(x, members[c]);
        unit[c] = detail::unit_rows(raw[c], nullptr);
        sq_norms[c] = raw[c].rowwise().squaredNorm();
    }

    // Within-class: unordered distinct pairs (cosine is symmetric, so the ordered-pair mean is equal).
    double dpw_sum = 0.0;
    double min_dpw_sum = 0.0;
    std::size_t within_classes = 0;
    for (auto c : present) {
        const auto m = unit[c].rows();
        if (m < 2) {
            add_diagnostic(diag, "singleton class excluded");
            continue;
        }
        const Eigen::MatrixXd g = unit[c] * unit[c].transpose();
        double sum = 0.0;
        double min_abs = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = i + 1; j < m; ++j) {
                const double cosv = std::clamp(g(i, j), -1.0, 1.0);
                sum += cosv;
                min_abs = std::min(min_abs, std::abs(cosv));
            }
        }
        const double pairs = static_cast<double>(m) * static_cast<double>(m - 1) / 2.0;
        dpw_sum += sum / pairs;
        min_dpw_sum += min_abs;
        ++within_classes;
    }
    if (within_classes == 0) throw Error("no within-class pairs");
    out.avg_dpw = dpw_sum / static_cast<double>(within_classes);
    out.min_dpw = min_dpw_sum / static_cast<double>(within_classes);

    // Between-class: every cross pair for every unordered class pair.
    double dpb_sum = 0.0;
    double dist_sum = 0.0;
    std::size_t class_pairs = 0;
    for (std::size_t a = 0; a < present.size(); ++a) {
        for (std::size_t b = a + 1; b < present.size(); ++b) {
            const auto ca = present[a];
            const auto cb = present[b];
            const Eigen::MatrixXd cosines = unit[ca] * unit[cb].transpose();
            double sum = 0.0;
            for (Eigen::Index i = 0; i < cosines.rows(); ++i) {
                for (Eigen::Index j = 0; j < cosines.cols(); ++j) sum += std::clamp(cosines(i, j), -1.0, 1.0);
            }
            dpb_sum += sum / static_cast<double>(cosines.size());

            // Gram-based squared distances locate candidates; candidates within the
            // cancellation error bound are recomputed directly.
            const Eigen::MatrixXd dots = raw[ca] * raw[cb].transpose();
            double best = std::numeric_limits<double>::infinity();
            const double max_sq = sq_norms[ca].maxCoeff() + sq_norms[cb].maxCoeff();
            Eigen::MatrixXd d2(dots.rows(), dots.cols());
            for (Eigen::Index i = 0; i < dots.rows(); ++i) {
                for (Eigen::Index j = 0; j < dots.cols(); ++j) {
                    d2(i, j) = sq_norms[ca][i] + sq_norms[cb][j] - 2.0 * dots(i, j);
                    best = std::min(best, d2(i, j));
                }
            }
            const double slack = 64.0 * std::numeric_limits<double>::epsilon() * max_sq;
            double exact = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < d2.rows(); ++i) {
                for (Eigen::Index j = 0; j < d2.cols(); ++j) {
                    if (d2(i, j) <= best + slack) {
                        exact = std::min(exact, (raw[ca].row(i) - raw[cb].row(j)).norm());
                    }
                }
            }
            dist_sum += exact;
            ++class_pairs;
        }
    }
    out.avg_dpb = dpb_sum / static_cast<double>(class_pairs);
    out.min_dist_b = dist_sum / static_cast<double>(class_pairs);

    if (saw_zero) add_diagnostic(diag, "zero vector present");
    return out;
}

inline PairStats pairwise_stats(const RepresentationSet& set, std::optional<std::size_t> cap,
                                std::uint64_t seed, Diagnostics* diag = nullptr) {
    return pairwise_stats(set.matrix(), set.labels, set.classes, cap, seed, diag);
}

struct ClassEntropy {
    double entropy = 0.0;  // Shannon entropy of the variance spectrum over ln(N_c), in [0, 1]
    int embed_dim = 0;     // components needed to reach the variance threshold
};

/// Normalized SVD entropy of one class's mean-centered rows.
/// Identical points and singletons give {0, 0}.
inline ClassEntropy class_svd_entropy(const RowMatrix& class_rows,
                                      double variance_threshold = kDefaultVarianceThreshold) {
    ClassEntropy out;
    if (class_rows.rows() < 2) return out;
    const auto var = detail::centered_variance_spectrum(class_rows);
    if (var.empty()) return out;
    double total = 0.0;
    for (double v : var) total += v;
    double h = 0.0;
    for (double v : var) {
        const double p = v / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    out.entropy = std::clamp(h / std::log(static_cast<double>(class_rows.rows())), 0.0, 1.0);
    out.embed_dim = detail::components_for_variance(var, variance_threshold);
    return out;
}

/// Mean of class_svd_entropy over the classes present in the set.
inline double avg_svd_entropy(const RowMatrix& x, std::span<const std::uint32_t> labels, std::uint32_t classes,
                              Diagnostics* diag = nullptr) {
    const auto members = detail::class_members(labels, classes);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& idx : members) {
        if (idx.empty()) continue;
        if (idx.size() == 1) add_diagnostic(diag, "singleton class excluded");
        const auto ce = class_svd_entropy(detail::gather_rows(x, idx));
        sum += ce.entropy;
        ++count;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

inline double avg_svd_entropy(const RepresentationSet& set, Diagnostics* diag = nullptr) {
    return avg_svd_entropy(set.matrix(), set.labels, set.classes, diag);
}

/// PCA over all rows pooled (labels ignored): components needed to reach the variance threshold.
inline int global_embedding_dim(const RowMatrix& rows, double variance_threshold = kDefaultVarianceThreshold) {
    return detail::components_for_variance(detail::centered_variance_spectrum(rows), variance_threshold);
}

inline int global_embedding_dim(const RepresentationSet& set,
                                double variance_threshold = kDefaultVarianceThreshold) {
    return global_embedding_dim(set.matrix(), variance_threshold);
}

inline double separation(const PairStats& p) { return p.avg_dpw - p.avg_dpb; }

inline double information(const PairStats& p, double avg_svde) { return (1.0 - p.min_dpw) * avg_svde; }

/// Radius of the smallest origin-centred hypersphere whose non-negative orthant holds
/// `count` points at mutual distance >= min_distance in `dim` dimensions.
inline double packing_radius(double count, double min_distance, int dim) {
    if (dim < 2) throw Error("dimension too small for packing bound");
    if (!(count >= 1.0)) throw Error("packing bound needs at least one point");
    if (!(min_distance > 0.0)) throw Error("packing bound needs a positive minimum distance");
    return 2.0 * min_distance * std::pow(count / std::numbers::pi, 1.0 / static_cast<double>(dim - 1));
}

/// Packing radius over the empirical mean norm. Scale invariant.
inline double efficiency(const PairStats& p, int dim, std::uint64_t count, Diagnostics* diag = nullptr) {
    if (!(p.avg_norm > 0.0)) throw Error("all-zero representations");
    if (dim < 2 || !(p.min_dist_b > 0.0)) {
        add_diagnostic(diag, "degenerate efficiency");
        return 0.0;
    }
    return packing_radius(static_cast<double>(count), p.min_dist_b, dim) / p.avg_norm;
}

inline double knowledge_quality(double S, double I, double E) { return S + std::sqrt(std::max(0.0, I * E)); }

/// All statistics for one layer. Deterministic for a fixed seed.
/// Same as analyze_layer on double-precision rows, without the f32 storage round trip.
inline LayerMetrics analyze_rows(std::uint32_t layer, const RowMatrix& x, std::span<const std::uint32_t> labels,
                                 std::uint32_t classes, std::optional<std::size_t> cap, std::uint64_t seed) {
    if (x.rows() < 2) throw Error("need at least 2 samples");
    LayerMetrics m;
    m.layer = layer;
    m.pair = pairwise_stats(x, labels, classes, cap, seed, &m.diagnostics);
    m.avg_svde = avg_svd_entropy(x, labels, classes, &m.diagnostics);
    m.global_embed_dim = global_embedding_dim(x);
    if (m.global_embed_dim < 2) add_diagnostic(&m.diagnostics, "degenerate dimension");
    m.S = separation(m.pair);
    m.I = information(m.pair, m.avg_svde);
    m.E = efficiency(m.pair, m.global_embed_dim, static_cast<std::uint64_t>(x.rows()), &m.diagnostics);
    m.Q = knowledge_quality(m.S, m.I, m.E);
    return m;
}

inline LayerMetrics analyze_layer(const RepresentationSet& set, std::optional<std::size_t> cap,
                                  std::uint64_t seed) {
    set.validate();
    return analyze_rows(set.layer_index, set.matrix(), set.labels, set.classes, cap, seed);
}

inline nlohmann::json to_json(const LayerMetrics& m) {
    return nlohmann::json{{"layer", m.layer},
                          {"S", m.S},
                          {"I", m.I},
                          {"E", m.E},
                          {"Q", m.Q},
                          {"avgDPW", m.pair.avg_dpw},
                          {"avgDPB", m.pair.avg_dpb},
                          {"minDPW", m.pair.min_dpw},
                          {"minDistB", m.pair.min_dist_b},
                          {"avgNorm", m.pair.avg_norm},
                          {"avgSVDE", m.avg_svde},
                          {"globalEmbedDim", m.global_embed_dim},
                          {"diagnostics", m.diagnostics}};
}

inline LayerMetrics layer_metrics_from_json(const nlohmann::json& j) {
    static const char* const required[] = {"layer", "S", "I", "E", "Q", "avgDPW", "avgDPB",
                                            "minDPW", "minDistB", "avgNorm", "avgSVDE",
                                            "globalEmbedDim"};
    for (const char* key : required) {
        if (!j.contains(key)) throw Error(std::string("metrics entry missing field \"") + key + "\"");
    }
    LayerMetrics m;
    m.layer = j.at("layer").get<std::uint32_t>();
    m.S = j.at("S").get<double>();
    m.I = j.at("I").get<double>();
    m.E = j.at("E").get<double>();
    m.Q = j.at("Q").get<double>();
    m.pair.avg_dpw = j.at("avgDPW").get<double>();
    m.pair.avg_dpb = j.at("avgDPB").get<double>();
    m.pair.min_dpw = j.at("minDPW").get<double>();
    m.pair.min_dist_b = j.at("minDistB").get<double>();
    m.pair.avg_norm = j.at("avgNorm").get<double>();
    m.avg_svde = j.at("avgSVDE").get<double>();
    m.global_embed_dim = j.at("globalEmbedDim").get<int>();
    if (j.contains("diagnostics")) m.diagnostics = j.at("diagnostics").get<Diagnostics>();
    return m;
}

}  // namespace kqkit
