#pragma once

// Shared test helpers: random sets, brute-force oracles, temp directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kqkit/metrics.hpp"
#include "kqkit/repr_store.hpp"

namespace kqtest {

using kqkit::RepresentationSet;
using kqkit::RowMatrix;

/// Random labelled set; every class gets at least two samples.
inline RepresentationSet random_set(std::mt19937_64& rng, int n, int d, int classes, std::uint32_t layer = 0,
                                    double spread = 1.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    RowMatrix centers(classes, d);
    for (int c = 0; c < classes; ++c) {
        for (int k = 0; k < d; ++k) centers(c, k) = 2.0 * normal(rng);
    }
    RowMatrix x(n, d);
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
    std::uniform_int_distribution<int> pick(0, classes - 1);
    for (int i = 0; i < n; ++i) {
        const int c = i < 2 * classes ? i % classes : pick(rng);
        labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(c);
        for (int k = 0; k < d; ++k) x(i, k) = centers(c, k) + spread * normal(rng);
    }
    return kqkit::make_representation_set(layer, x, std::move(labels), static_cast<std::uint32_t>(classes));
}

/// Straight transcription of the pairwise definitions: every pair visited explicitly.
inline kqkit::PairStats naive_pair_stats(const RepresentationSet& s) {
    const auto n = static_cast<std::size_t>(s.rows);
    const auto d = static_cast<std::size_t>(s.width);
    auto dot = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(s.at(i, k)) * static_cast<double>(s.at(j, k));
        return acc;
    };
    auto norm = [&](std::size_t i) { return std::sqrt(dot(i, i)); };
    auto cosine = [&](std::size_t i, std::size_t j) {
        const double den = norm(i) * norm(j);
        return den > 0.0 ? dot(i, j) / den : 0.0;
    };
    auto dist = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(s.at(i, k)) - static_cast<double>(s.at(j, k));
            acc += diff * diff;
        }
        return std::sqrt(acc);
    };

    kqkit::PairStats p;
    for (std::size_t i = 0; i < n; ++i) p.avg_norm += norm(i);
    p.avg_norm /= static_cast<double>(n);

    std::vector<std::uint32_t> present;
    for (std::uint32_t c = 0; c < s.classes; ++c) {
        if (std::count(s.labels.begin(), s.labels.end(), c) > 0) present.push_back(c);
    }
    double dpw = 0.0, mindpw = 0.0;
    int within = 0;
    for (auto c : present) {
        double sum = 0.0, mn = 1e300;
        long pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (s.labels[i] != c || s.labels[j] != c) continue;
                const double cs = cosine(i, j);
                sum += cs;
                mn = std::min(mn, std::abs(cs));
                ++pairs;
            }
        }
        if (pairs == 0) continue;
        dpw += sum / static_cast<double>(pairs);
        mindpw += mn;
        ++within;
    }
    p.avg_dpw = dpw / within;
    p.min_dpw = mindpw / within;

    double dpb = 0.0, mind = 0.0;
    int class_pairs = 0;
    for (std::size_t a = 0; a < present.size(); ++a) {
        for (std::size_t b = a + 1; b < present.size(); ++b) {
            double sum = 0.0, mn = 1e300;
            long pairs = 0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (s.labels[i] != present[a] || s.labels[j] != present[b]) continue;
                    sum += cosine(i, j);
                    mn = std::min(mn, dist(i, j));
                    ++pairs;
                }
            }
            dpb += sum / static_cast<double>(pairs);
            mind += mn;
            ++class_pairs;
        }
    }
    p.avg_dpb = dpb / class_pairs;
    p.min_dist_b = mind / class_pairs;
    return p;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a) {
    const auto n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        }
        if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = std::max(0.0, a(i, i));
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

/// PCA dimension from the covariance eigenvalues.
inline int oracle_embed_dim(const RowMatrix& x, double threshold = 0.95) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mean;
    const auto ev = jacobi_eigenvalues(c.transpose() * c / static_cast<double>(x.rows() - 1));
    double total = 0.0;
    for (double v : ev) total += v;
    if (total <= 1e-300) return 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < ev.size(); ++k) {
        acc += ev[k];
        if (acc / total >= threshold - 1e-12) return static_cast<int>(k + 1);
    }
    return static_cast<int>(ev.size());
}

/// Random orthogonal matrix (QR of a Gaussian matrix).
inline Eigen::MatrixXd random_rotation(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return qr.householderQ();
}

inline double rel_err(double got, double want) {
    const double den = std::max(std::abs(want), 1e-300);
    return got == want ? 0.0 : std::abs(got - want) / den;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("kqkit_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace kqtest
