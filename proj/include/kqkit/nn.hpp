#pragma once

// Small fully connected ReLU classifiers with explicit reverse-mode gradients.
//
// Layer indexing follows the activated-layer convention: hidden layer i (0-based) is a
// linear map followed by ReLU and its output is representation i. The final layer is a
// linear map producing logits.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "kqkit/error.hpp"
#include "kqkit/random.hpp"

namespace kqkit {

enum class Activation { relu, none };

struct Dense {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out; empty when the layer has no bias
    Activation activation = Activation::relu;

    bool has_bias() const { return bias.size() > 0; }
    Eigen::Index in_width() const { return weight.cols(); }
    Eigen::Index out_width() const { return weight.rows(); }
};

struct Network {
    std::vector<Dense> layers;

    std::size_t hidden_count() const { return layers.empty() ? 0 : layers.size() - 1; }
    Eigen::Index input_width() const { return layers.front().in_width(); }
    Eigen::Index classes() const { return layers.back().out_width(); }
    Eigen::Index hidden_width(std::size_t i) const { return layers.at(i).out_width(); }

    void validate() const {
        if (layers.empty()) throw Error("network has no layers");
        for (std::size_t i = 1; i < layers.size(); ++i) {
            if (layers[i].in_width() != layers[i - 1].out_width()) {
                throw Error("incompatible widths between layers " + std::to_string(i - 1) + " and " +
                            std::to_string(i));
            }
        }
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
            if (layers[i].activation != Activation::relu) throw Error("hidden layers must use relu");
        }
        if (layers.back().activation != Activation::none) throw Error("output layer must be linear");
    }

    /// He-initialized MLP: input -> hidden[0] -> ... -> classes. Biases start at zero.
    static Network mlp(Eigen::Index input_width, std::span<const int> hidden, Eigen::Index classes,
                       std::uint64_t seed) {
        Rng rng(seed);
        Network net;
        Eigen::Index in = input_width;
        auto make = [&](Eigen::Index out, Activation act) {
            Dense d;
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
            d.weight.resize(out, in);
            for (Eigen::Index c = 0; c < in; ++c) {
                for (Eigen::Index r = 0; r < out; ++r) d.weight(r, c) = normal(rng);
            }
            d.bias = Eigen::VectorXd::Zero(out);
            d.activation = act;
            net.layers.push_back(std::move(d));
            in = out;
        };
        for (int w : hidden) {
            if (w <= 0) throw Error("hidden width must be positive");
            make(w, Activation::relu);
        }
        make(classes, Activation::none);
        return net;
    }
};

/// Everything a backward pass needs, plus the captured representations.
struct ForwardCache {
    Eigen::MatrixXd input;                    // batch x in
    std::vector<Eigen::MatrixXd> pre;         // per layer, batch x out
    std::vector<Eigen::MatrixXd> post;        // per layer, after activation

    const Eigen::MatrixXd& logits() const { return post.back(); }
    const Eigen::MatrixXd& activation(std::size_t hidden_index) const { return post.at(hidden_index); }
    std::size_t hidden_count() const { return post.empty() ? 0 : post.size() - 1; }
};

/// Rows of `batch` are samples.
inline ForwardCache forward_capture(const Network& net, const Eigen::MatrixXd& batch) {
    if (net.layers.empty()) throw Error("network has no layers");
    if (batch.cols() != net.input_width()) {
        throw Error("shape mismatch: batch width " + std::to_string(batch.cols()) + ", network input " +
                    std::to_string(net.input_width()));
    }
    ForwardCache cache;
    cache.input = batch;
    const Eigen::MatrixXd* x = &cache.input;
    for (const auto& layer : net.layers) {
        Eigen::MatrixXd z = (*x) * layer.weight.transpose();
        if (layer.has_bias()) z.rowwise() += layer.bias.transpose();
        Eigen::MatrixXd a = layer.activation == Activation::relu ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
        cache.pre.push_back(std::move(z));
        cache.post.push_back(std::move(a));
        x = &cache.post.back();
    }
    return cache;
}

inline Eigen::MatrixXd predict_logits(const Network& net, const Eigen::MatrixXd& batch) {
    return forward_capture(net, batch).logits();
}

/// Same shapes as the network's parameters.
struct Gradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;

    static Gradients zeros_like(const Network& net) {
        Gradients g;
        for (const auto& l : net.layers) {
            g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
        }
        return g;
    }
};

/// Upstream gradients injected into a backward pass.
struct BackwardSeeds {
    Eigen::MatrixXd logits_grad;                           // dL/dlogits from logit losses; empty = none
    std::map<std::size_t, Eigen::MatrixXd> feature_grads;  // dL/d(representation i)
    // Logit-loss gradient is not propagated below this hidden representation.
    std::optional<std::size_t> stop_logit_grad_at;
};

/// Exact reverse-mode gradients. Feature-loss gradients enter at their representation;
/// the logit gradient flowing down from the head is dropped at the stop boundary.
inline Gradients backward(const Network& net, const ForwardCache& cache, const BackwardSeeds& seeds) {
    const std::size_t L = net.layers.size();
    const Eigen::Index batch = cache.input.rows();
    Gradients g = Gradients::zeros_like(net);

    // Gradient wrt the output of layer i, accumulated from above.
    Eigen::MatrixXd upstream =
        seeds.logits_grad.size() > 0 ? seeds.logits_grad : Eigen::MatrixXd::Zero(batch, net.classes());
    for (std::size_t li = L; li-- > 0;) {
        const auto& layer = net.layers[li];
        if (li + 1 < L) {
            if (seeds.stop_logit_grad_at && *seeds.stop_logit_grad_at == li) upstream.setZero();
            if (auto it = seeds.feature_grads.find(li); it != seeds.feature_grads.end()) upstream += it->second;
        }
        Eigen::MatrixXd dz = upstream;
        if (layer.activation == Activation::relu) {
            dz = (cache.pre[li].array() > 0.0).select(dz, 0.0);
        }
        const Eigen::MatrixXd& below = li == 0 ? cache.input : cache.post[li - 1];
        g.weight[li].noalias() = dz.transpose() * below;
        if (layer.has_bias()) g.bias[li] = dz.colwise().sum().transpose();
        if (li > 0) upstream = dz * layer.weight;
    }
    return g;
}

inline nlohmann::json to_json(const Network& net) {
    auto layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
        std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
        std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
        layers.push_back({{"in", l.in_width()},
                          {"out", l.out_width()},
                          {"activation", l.activation == Activation::relu ? "relu" : "none"},
                          {"weight_colmajor", w},
                          {"bias", b}});
    }
    return {{"layers", layers}};
}

}  // namespace kqkit
