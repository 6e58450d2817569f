#pragma once

// Feature distillation trainer.
//
// The "ours" recipe trains the student backbone (hidden layers up to the deepest distilled
// student layer) on feature losses only; cross-entropy trains the classifier head and its
// gradient is stopped at that boundary. Other recipes restore CE and/or KL in the backbone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "kqkit/data.hpp"
#include "kqkit/error.hpp"
#include "kqkit/losses.hpp"
#include "kqkit/metrics.hpp"
#include "kqkit/nn.hpp"
#include "kqkit/optim.hpp"
#include "kqkit/random.hpp"
#include "kqkit/repr_store.hpp"

namespace kqkit {

enum class RecipeKind { ours, base_fkd, base_fkd_minus_kl, ours_plus_ce, ours_plus_ll, vkd_only, ce_only };

inline std::string_view to_string(RecipeKind k) {
    switch (k) {
        case RecipeKind::ours: return "ours";
        case RecipeKind::base_fkd: return "base_fkd";
        case RecipeKind::base_fkd_minus_kl: return "base_fkd_minus_kl";
        case RecipeKind::ours_plus_ce: return "ours_plus_ce";
        case RecipeKind::ours_plus_ll: return "ours_plus_ll";
        case RecipeKind::vkd_only: return "vkd_only";
        case RecipeKind::ce_only: return "ce_only";
    }
    return "ours";
}

inline RecipeKind parse_recipe(std::string_view s) {
    for (auto k : {RecipeKind::ours, RecipeKind::base_fkd, RecipeKind::base_fkd_minus_kl, RecipeKind::ours_plus_ce,
                   RecipeKind::ours_plus_ll, RecipeKind::vkd_only, RecipeKind::ce_only}) {
        if (to_string(k) == s) return k;
    }
    throw Error("unknown recipe: " + std::string(s));
}

struct Recipe {
    RecipeKind kind = RecipeKind::ours;
    double temperature = 4.0;
    double feature_weight = 1.0;  // beta
    double kl_weight = 0.0;
    double ce_weight = 1.0;
    bool stop_ce_at_boundary = false;
    bool uses_features = true;
    bool kl_swap = false;  // KL(teacher || student) instead of KL(student || teacher)

    bool uses_teacher() const { return uses_features || kl_weight > 0.0; }
};

inline Recipe make_recipe(RecipeKind kind, double temperature = 4.0, double feature_weight = 1.0) {
    Recipe r;
    r.kind = kind;
    r.temperature = temperature;
    r.feature_weight = feature_weight;
    switch (kind) {
        case RecipeKind::ours:
            r.stop_ce_at_boundary = true;
            break;
        case RecipeKind::base_fkd:
        case RecipeKind::ours_plus_ll:
            r.kl_weight = 1.0;
            break;
        case RecipeKind::base_fkd_minus_kl:
        case RecipeKind::ours_plus_ce:
            break;
        case RecipeKind::vkd_only:
            r.kl_weight = 1.0;
            r.uses_features = false;
            break;
        case RecipeKind::ce_only:
            r.uses_features = false;
            break;
    }
    return r;
}

/// Layer selection conventionally paired with each recipe.
inline std::string default_selection_method(RecipeKind kind) {
    switch (kind) {
        case RecipeKind::ours:
        case RecipeKind::ours_plus_ce:
        case RecipeKind::ours_plus_ll: return "kq";
        case RecipeKind::base_fkd:
        case RecipeKind::base_fkd_minus_kl: return "stage_end";
        default: return "none";
    }
}

/// How gradients of the weighted loss terms reach the parameters.
struct RoutingPlan {
    double ce_weight = 1.0;
    double kl_weight = 0.0;
    double feature_weight = 1.0;
    bool stop_logit_grad_at_boundary = false;
};

struct LossBreakdown {
    double total = 0.0;
    double ce = 0.0;
    double kl = 0.0;
    double feature = 0.0;   // sum_ij A_ij L_F(i, j), before beta
    double backbone = 0.0;  // part whose gradient reaches the backbone
    double head = 0.0;      // part whose gradient reaches the classifier head
    RoutingPlan plan;
};

/// L = w_ce L_CE + w_kl L_KL + beta * sum_ij A_ij L_F(i, j).
inline LossBreakdown total_loss(const Recipe& recipe, std::span<const double> pair_feature_losses,
                                std::span<const double> pair_weights, double ce, double kl) {
    if (pair_feature_losses.size() != pair_weights.size()) throw Error("feature loss / weight count mismatch");
    LossBreakdown out;
    out.plan = {recipe.ce_weight, recipe.kl_weight, recipe.uses_features ? recipe.feature_weight : 0.0,
                recipe.stop_ce_at_boundary};
    out.ce = ce;
    out.kl = kl;
    for (std::size_t i = 0; i < pair_feature_losses.size(); ++i) out.feature += pair_weights[i] * pair_feature_losses[i];
    const double logit_part = out.plan.ce_weight * ce + out.plan.kl_weight * kl;
    const double feature_part = out.plan.feature_weight * out.feature;
    out.total = logit_part + feature_part;
    out.head = logit_part;
    out.backbone = out.plan.stop_logit_grad_at_boundary ? feature_part : out.total;
    return out;
}

/// Teacher representations over the training set, keyed by activated-layer index.
struct TeacherFeatures {
    std::map<std::uint32_t, Eigen::MatrixXd> layers;
    std::optional<Eigen::MatrixXd> logits;

    std::vector<std::uint32_t> available() const {
        std::vector<std::uint32_t> out;
        for (const auto& [k, v] : layers) out.push_back(k);
        return out;
    }
};

inline TeacherFeatures capture_teacher(const Network& teacher, const Dataset& train) {
    const auto cache = forward_capture(teacher, train.x);
    TeacherFeatures t;
    for (std::size_t i = 0; i < cache.hidden_count(); ++i) t.layers[static_cast<std::uint32_t>(i)] = cache.activation(i);
    t.logits = cache.logits();
    return t;
}

/// Precomputed teacher representations (e.g. loaded from RDMP dumps over the training set).
inline TeacherFeatures teacher_from_sets(std::span<const RepresentationSet> sets, const Dataset& train) {
    TeacherFeatures t;
    for (const auto& s : sets) {
        if (static_cast<Eigen::Index>(s.rows) != train.size()) throw Error("sample count mismatch between trace and data");
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            if (static_cast<int>(s.labels[i]) != train.y[i]) throw Error("label mismatch between trace and data");
        }
        t.layers[s.layer_index] = Eigen::MatrixXd(s.matrix());
    }
    return t;
}

inline RepresentationSet teacher_layer_set(const TeacherFeatures& t, std::uint32_t layer, const Dataset& train) {
    const auto it = t.layers.find(layer);
    if (it == t.layers.end()) throw Error("teacher has no layer " + std::to_string(layer));
    std::vector<std::uint32_t> labels(train.y.begin(), train.y.end());
    return make_representation_set(layer, RowMatrix(it->second), std::move(labels),
                                   static_cast<std::uint32_t>(train.classes));
}

struct DistillConfig {
    std::vector<int> student_hidden{32, 32, 32, 32};
    std::vector<std::size_t> student_layers;     // L^S; empty picks defaults
    std::vector<std::uint32_t> teacher_layers;   // L^T
    std::vector<std::vector<double>> mapping;    // |L^T| x |L^S|; empty means identity
    Recipe recipe = make_recipe(RecipeKind::ours);
    int epochs = 50;
    int batch_size = 128;
    double max_lr = 0.005;
    std::uint64_t seed = 0;
    bool train_projector = false;  // projector stays at its initialisation
    bool pool_projector = true;
    AdamConfig adam;
    OneCycleConfig schedule;
};

struct DistillResult {
    std::vector<double> train_acc;
    std::vector<double> test_acc;
    std::vector<double> loss_total;
    std::vector<double> loss_ce;
    std::vector<double> loss_kl;
    std::vector<double> loss_feature;
    double final_test_acc = 0.0;
    bool converged = true;
    std::string failure;
    std::vector<std::size_t> student_layers;
    std::vector<std::uint32_t> teacher_layers;
    Network model;
};

/// k student representations spread evenly and ending at the last hidden layer.
inline std::vector<std::size_t> default_student_layers(std::size_t hidden, std::size_t k) {
    if (k > hidden) throw Error("more teacher layers than student hidden layers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) {
        const double pos = static_cast<double>((i + 1) * hidden) / static_cast<double>(k);
        out.push_back(static_cast<std::size_t>(std::lround(pos)) - 1);
    }
    return out;
}

inline constexpr int kChanceEpochsBeforeFailure = 5;

namespace detail {

struct ParamSlot {
    AdamMoments weight;
    AdamMoments bias;
};

}  // namespace detail

/// Train a student. Without a teacher only ce_only is valid; that is also how teachers are trained.
inline DistillResult train(const DistillConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                           const TeacherFeatures* teacher = nullptr) {
    const Recipe& recipe = cfg.recipe;
    if (cfg.epochs <= 0 || cfg.batch_size <= 0) throw Error("epochs and batch size must be positive");
    if (train_set.size() == 0) throw Error("empty training set");
    if (recipe.uses_teacher() && teacher == nullptr) throw Error("recipe needs a teacher");
    if (recipe.kl_weight > 0.0 && (teacher == nullptr || !teacher->logits)) throw Error("recipe needs teacher logits");

    DistillResult result;
    result.model = Network::mlp(train_set.width(), cfg.student_hidden, train_set.classes, mix_seed(cfg.seed, 1));
    Network& net = result.model;

    // Resolve layer pairs and projectors.
    std::vector<std::size_t> s_layers;
    std::vector<Projector> projectors;
    struct Pair {
        std::size_t t;
        std::size_t s;
        double weight;
        std::size_t projector;
    };
    std::vector<Pair> pairs;
    if (recipe.uses_features) {
        if (cfg.teacher_layers.empty()) throw Error("feature recipe needs teacher layers");
        s_layers = cfg.student_layers.empty() ? default_student_layers(net.hidden_count(), cfg.teacher_layers.size())
                                              : cfg.student_layers;
        for (auto s : s_layers) {
            if (s >= net.hidden_count()) throw Error("student layer " + std::to_string(s) + " out of range");
        }
        const auto mapping = cfg.mapping.empty() ? std::vector<std::vector<double>>() : cfg.mapping;
        if (mapping.empty() && s_layers.size() != cfg.teacher_layers.size()) {
            throw Error("|L^T| must equal |L^S| for the one-to-one mapping");
        }
        for (std::size_t i = 0; i < cfg.teacher_layers.size(); ++i) {
            const auto tl = cfg.teacher_layers[i];
            if (!teacher->layers.contains(tl)) throw Error("teacher has no layer " + std::to_string(tl));
            for (std::size_t j = 0; j < s_layers.size(); ++j) {
                const double w = mapping.empty() ? (i == j ? 1.0 : 0.0) : mapping.at(i).at(j);
                if (w < 0.0) throw Error("mapping weights must be non-negative");
                if (w == 0.0) continue;
                projectors.push_back(Projector::make(teacher->layers.at(tl).cols(), net.hidden_width(s_layers[j]),
                                                     mix_seed(cfg.seed, 100 + projectors.size()), cfg.pool_projector));
                pairs.push_back({i, j, w, projectors.size() - 1});
            }
        }
        result.teacher_layers = cfg.teacher_layers;
        result.student_layers = s_layers;
    }
    std::optional<std::size_t> boundary;
    if (recipe.stop_ce_at_boundary && !s_layers.empty()) boundary = *std::max_element(s_layers.begin(), s_layers.end());

    std::vector<detail::ParamSlot> slots(net.layers.size());
    std::vector<AdamMoments> projector_slots(projectors.size());

    const auto n = train_set.size();
    const auto batches_per_epoch = static_cast<std::size_t>((n + cfg.batch_size - 1) / cfg.batch_size);
    const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng(mix_seed(cfg.seed, 2));

    const double chance = 1.0 / static_cast<double>(train_set.classes);
    int below_chance = 0;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sum_total = 0.0, sum_ce = 0.0, sum_kl = 0.0, sum_feat = 0.0;
        bool finite = true;
        for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
            const auto begin = static_cast<std::ptrdiff_t>(b * cfg.batch_size);
            const auto end = std::min<std::ptrdiff_t>(begin + cfg.batch_size, n);
            const std::span<const Eigen::Index> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
            const Dataset batch = train_set.rows(idx);
            const auto cache = forward_capture(net, batch.x);

            BackwardSeeds seeds;
            const auto ce = ce_loss(cache.logits(), batch.y);
            seeds.logits_grad = recipe.ce_weight * ce.grad;
            double kl_value = 0.0;
            if (recipe.kl_weight > 0.0) {
                Eigen::MatrixXd t_logits(idx.size(), teacher->logits->cols());
                for (std::size_t r = 0; r < idx.size(); ++r) t_logits.row(static_cast<Eigen::Index>(r)) = teacher->logits->row(idx[r]);
                const auto kl = kl_vkd_loss(cache.logits(), t_logits, recipe.temperature, recipe.kl_swap);
                kl_value = kl.value;
                seeds.logits_grad += recipe.kl_weight * kl.grad;
            }

            std::vector<double> pair_losses;
            std::vector<double> pair_weights;
            std::vector<Eigen::MatrixXd> projector_grads(projectors.size());
            for (const auto& p : pairs) {
                const auto& t_all = teacher->layers.at(cfg.teacher_layers[p.t]);
                Eigen::MatrixXd t_rows(idx.size(), t_all.cols());
                for (std::size_t r = 0; r < idx.size(); ++r) t_rows.row(static_cast<Eigen::Index>(r)) = t_all.row(idx[r]);
                const auto fl = feature_loss(cache.activation(s_layers[p.s]), t_rows, projectors[p.projector]);
                pair_losses.push_back(fl.value);
                pair_weights.push_back(p.weight);
                const double scale = recipe.feature_weight * p.weight;
                auto [it, inserted] = seeds.feature_grads.try_emplace(s_layers[p.s], scale * fl.grad_student);
                if (!inserted) it->second += scale * fl.grad_student;
                projector_grads[p.projector] = scale * fl.grad_projector;
            }
            seeds.stop_logit_grad_at = boundary;

            const auto loss = total_loss(recipe, pair_losses, pair_weights, ce.value, kl_value);
            if (!std::isfinite(loss.total)) {
                finite = false;
                break;
            }
            sum_total += loss.total;
            sum_ce += loss.ce;
            sum_kl += loss.kl;
            sum_feat += loss.feature;

            const auto grads = backward(net, cache, seeds);
            const auto sched = one_cycle_lr(step, total_steps, cfg.max_lr, cfg.schedule);
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                adam_step(net.layers[li].weight, grads.weight[li], slots[li].weight, sched.lr, cfg.adam, true,
                          sched.momentum);
                if (net.layers[li].has_bias()) {
                    adam_step(net.layers[li].bias, grads.bias[li], slots[li].bias, sched.lr, cfg.adam, false,
                              sched.momentum);
                }
            }
            for (std::size_t pi = 0; pi < projectors.size(); ++pi) {
                if (projector_grads[pi].size() == 0 || !cfg.train_projector) continue;
                adam_step(projectors[pi].weight, projector_grads[pi], projector_slots[pi], sched.lr, cfg.adam, true,
                          sched.momentum);
            }
        }
        if (!finite) {
            result.converged = false;
            result.failure = "non-finite loss";
            break;
        }
        const double nb = static_cast<double>(batches_per_epoch);
        result.loss_total.push_back(sum_total / nb);
        result.loss_ce.push_back(sum_ce / nb);
        result.loss_kl.push_back(sum_kl / nb);
        result.loss_feature.push_back(sum_feat / nb);
        const double train_acc = accuracy(predict_logits(net, train_set.x), train_set.y);
        result.train_acc.push_back(train_acc);
        result.test_acc.push_back(test_set.size() > 0 ? accuracy(predict_logits(net, test_set.x), test_set.y) : 0.0);

        below_chance = train_acc < chance ? below_chance + 1 : 0;
        if (below_chance >= kChanceEpochsBeforeFailure) {
            result.converged = false;
            result.failure = "train accuracy below chance";
            break;
        }
    }
    result.final_test_acc = result.test_acc.empty() ? 0.0 : result.test_acc.back();
    return result;
}

/// Relative improvement of method 1 over method 2, normalised by method 2's gain over the baseline.
struct Ari {
    double value = std::numeric_limits<double>::quiet_NaN();
    bool unstable = true;
};

/// Accuracies are quantised to a 1e-12 grid so the differences are exact; decimal inputs
/// such as (0.8, 0.7, 0.6) then give exactly 1.
inline Ari ari(double acc_kd1, double acc_kd2, double acc_baseline) {
    auto q = [](double a) { return std::llround(a * 1e12); };
    const long long num = q(acc_kd1) - q(acc_kd2);
    const long long den = q(acc_kd2) - q(acc_baseline);
    if (den == 0) return {};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

inline nlohmann::json to_json(const DistillResult& r) {
    return {{"converged", r.converged},
            {"failure", r.failure.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.failure)},
            {"final_test_acc", r.final_test_acc},
            {"teacher_layers", r.teacher_layers},
            {"student_layers", r.student_layers},
            {"epochs",
             {{"train_acc", r.train_acc},
              {"test_acc", r.test_acc},
              {"loss_total", r.loss_total},
              {"loss_ce", r.loss_ce},
              {"loss_kl", r.loss_kl},
              {"loss_feature", r.loss_feature}}}};
}

}  // namespace kqkit
