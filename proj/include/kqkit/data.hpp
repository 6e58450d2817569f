#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kqkit/error.hpp"
#include "kqkit/random.hpp"
#include "kqkit/repr_store.hpp"

namespace kqkit {

/// Labelled samples, one per row.
struct Dataset {
    Eigen::MatrixXd x;
    std::vector<int> y;
    int classes = 0;

    Eigen::Index size() const { return x.rows(); }
    Eigen::Index width() const { return x.cols(); }

    Dataset rows(std::span<const Eigen::Index> idx) const {
        Dataset out;
        out.classes = classes;
        out.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
        out.y.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.x.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
            out.y[i] = y[static_cast<std::size_t>(idx[i])];
        }
        return out;
    }
};

/// Isotropic Gaussian blobs. Each class is a mixture of `clusters_per_class` blobs whose
/// centres are drawn from N(0, center_scale^2 I); samples add N(0, noise^2 I).
struct BlobSpec {
    int classes = 10;
    int dim = 32;
    int train = 4000;
    int test = 1000;
    int clusters_per_class = 1;
    double center_scale = 1.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
};

struct TrainTest {
    Dataset train;
    Dataset test;
};

inline TrainTest make_blobs(const BlobSpec& spec) {
    if (spec.classes < 2 || spec.dim < 1 || spec.train < spec.classes || spec.test < 1 ||
        spec.clusters_per_class < 1) {
        throw Error("invalid blob specification");
    }
    Rng rng(mix_seed(spec.seed, 0xB10B));
    std::normal_distribution<double> normal(0.0, 1.0);
    const int centers = spec.classes * spec.clusters_per_class;
    Eigen::MatrixXd mu(centers, spec.dim);
    for (int c = 0; c < centers; ++c) {
        for (int k = 0; k < spec.dim; ++k) mu(c, k) = spec.center_scale * normal(rng);
    }
    std::uniform_int_distribution<int> pick_cluster(0, spec.clusters_per_class - 1);
    auto draw = [&](int n) {
        Dataset d;
        d.classes = spec.classes;
        d.x.resize(n, spec.dim);
        d.y.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int label = i % spec.classes;  // balanced classes
            const int center = label * spec.clusters_per_class + pick_cluster(rng);
            for (int k = 0; k < spec.dim; ++k) d.x(i, k) = mu(center, k) + spec.noise * normal(rng);
            d.y[static_cast<std::size_t>(i)] = label;
        }
        return d;
    };
    TrainTest out;
    out.train = draw(spec.train);
    out.test = draw(spec.test);
    return out;
}

/// Inputs stored as an RDMP dump (layer_index 0 by convention).
inline Dataset dataset_from_dump(const RepresentationSet& set) {
    set.validate();
    Dataset d;
    d.classes = static_cast<int>(set.classes);
    const RowMatrix m = set.matrix();
    d.x = m;
    d.y.assign(set.labels.begin(), set.labels.end());
    return d;
}

inline RepresentationSet dataset_to_dump(const Dataset& d, std::uint32_t layer = 0) {
    std::vector<std::uint32_t> labels(d.y.begin(), d.y.end());
    return make_representation_set(layer, RowMatrix(d.x), std::move(labels), static_cast<std::uint32_t>(d.classes));
}

inline double accuracy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
    if (logits.rows() == 0) return 0.0;
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        if (arg == labels[static_cast<std::size_t>(r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace kqkit
