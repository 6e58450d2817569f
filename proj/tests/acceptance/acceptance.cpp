// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "kqkit/distill.hpp"
#include "kqkit/experiment.hpp"
#include "kqkit/losses.hpp"
#include "kqkit/metrics.hpp"
#include "kqkit/nn.hpp"
#include "kqkit/optim.hpp"
#include "kqkit/select.hpp"
#include "../support.hpp"

using namespace kqkit;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail << "first failure: " << what << "; ";
            pass = false;
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

std::vector<int> random_labels(std::mt19937_64& rng, Eigen::Index n, int classes) {
    std::uniform_int_distribution<int> pick(0, classes - 1);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = pick(rng);
    return y;
}

bool close_rel(double got, double want, double tol) {
    if (got == want) return true;
    return std::abs(got - want) <= tol * std::max(std::abs(want), 1e-300);
}

// ---------------------------------------------------------------------------

void oracle_equivalence(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pick_n(20, 200), pick_d(1, 16), pick_c(2, 5);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int c = pick_c(rng);
        const auto set = kqtest::random_set(rng, std::max(pick_n(rng), 2 * c), pick_d(rng), c);
        const auto got = pairwise_stats(set, std::nullopt, 0);
        const auto want = kqtest::naive_pair_stats(set);
        const std::pair<double, double> fields[] = {{got.avg_dpw, want.avg_dpw},
                                                    {got.avg_dpb, want.avg_dpb},
                                                    {got.min_dpw, want.min_dpw},
                                                    {got.min_dist_b, want.min_dist_b},
                                                    {got.avg_norm, want.avg_norm}};
        for (const auto& [g, w] : fields) {
            const double e = kqtest::rel_err(g, w);
            worst = std::max(worst, e);
            o.check(e <= 1e-10, "set " + std::to_string(trial));
        }
    }
    const double secs = seconds_since(t0);
    o.check(secs < 10.0, "runtime");
    o.detail << "worst rel err " << worst << ", " << secs << " s";
}

void identities_and_bounds(Outcome& o) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> pick_n(20, 150), pick_d(2, 16), pick_c(2, 5);
    for (int trial = 0; trial < 100; ++trial) {
        const int c = pick_c(rng);
        const auto set = kqtest::random_set(rng, pick_n(rng), pick_d(rng), c, 0, trial % 2 ? 0.3 : 3.0);
        const auto m = analyze_layer(set, std::nullopt, 0);
        const auto tag = "set " + std::to_string(trial);
        o.check(m.S == m.pair.avg_dpw - m.pair.avg_dpb, tag + " S");
        o.check(m.I == (1.0 - m.pair.min_dpw) * m.avg_svde, tag + " I");
        o.check(m.Q == m.S + std::sqrt(m.I * m.E), tag + " Q");
        o.check(m.pair.min_dpw >= 0.0 && m.pair.min_dpw <= 1.0, tag + " minDPW");
        o.check(m.avg_svde >= 0.0 && m.avg_svde <= 1.0, tag + " avgSVDE");
        o.check(m.I >= 0.0 && m.I <= 1.0, tag + " I range");
        o.check(m.S >= -2.0 && m.S <= 2.0, tag + " S range");
    }
    o.detail << "100 sets";
}

void invariance(Outcome& o) {
    std::mt19937_64 rng(5);
    double worst = 0.0;
    auto same = [&](double a, double b, const std::string& what) {
        const double e = kqtest::rel_err(a, b);
        worst = std::max(worst, e);
        o.check(e <= 1e-8, what);
    };
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 4 + trial;
        const auto set = kqtest::random_set(rng, 120, d, 3 + trial % 3);
        const RowMatrix x = set.matrix();
        const auto base = analyze_rows(0, x, set.labels, set.classes, std::nullopt, 0);

        const RowMatrix rotated = x * kqtest::random_rotation(rng, d);
        const auto r = analyze_rows(0, rotated, set.labels, set.classes, std::nullopt, 0);
        const auto tag = "trial " + std::to_string(trial);
        same(r.pair.avg_dpw, base.pair.avg_dpw, tag + " rot avgDPW");
        same(r.pair.avg_dpb, base.pair.avg_dpb, tag + " rot avgDPB");
        same(r.pair.min_dpw, base.pair.min_dpw, tag + " rot minDPW");
        same(r.pair.min_dist_b, base.pair.min_dist_b, tag + " rot minDistB");
        same(r.pair.avg_norm, base.pair.avg_norm, tag + " rot avgNorm");
        same(r.avg_svde, base.avg_svde, tag + " rot avgSVDE");
        o.check(r.global_embed_dim == base.global_embed_dim, tag + " rot D");
        same(r.S, base.S, tag + " rot S");
        same(r.I, base.I, tag + " rot I");
        same(r.E, base.E, tag + " rot E");
        same(r.Q, base.Q, tag + " rot Q");

        const double a = 0.01 + 7.0 * trial;
        const auto s = analyze_rows(0, RowMatrix(a * x), set.labels, set.classes, std::nullopt, 0);
        same(s.S, base.S, tag + " scale S");
        same(s.I, base.I, tag + " scale I");
        same(s.E, base.E, tag + " scale E");
        same(s.pair.avg_norm, a * base.pair.avg_norm, tag + " scale avgNorm");
        same(s.pair.min_dist_b, a * base.pair.min_dist_b, tag + " scale minDistB");
    }
    o.detail << "worst rel change " << worst;
}

void packing(Outcome& o) {
    const double got = packing_radius(100, 0.1, 11);
    const long double pi = 3.141592653589793238462643383279502884L;
    const long double want = 2.0L * 0.1L * std::pow(100.0L / pi, 1.0L / 10.0L);
    o.check(std::abs(got - 0.28270) <= 1e-4, "value");
    o.check(std::abs(static_cast<long double>(got) - want) <= 1e-12L, "extended precision");
    double prev = packing_radius(100, 0.1, 2);
    for (int d = 3; d <= 64; ++d) {
        const double r = packing_radius(100, 0.1, d);
        o.check(r < prev, "monotone at D=" + std::to_string(d));
        prev = r;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "r = %.6f, long double %.6Lf", got, want);
    o.detail << buf;
}

void gradient_checks(Outcome& o) {
    auto numeric = [](auto& x, const std::function<double()>& f) {
        Eigen::MatrixXd g(x.rows(), x.cols());
        const double h = 1e-4;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double keep = x.data()[i];
            x.data()[i] = keep + h;
            const double up = f();
            x.data()[i] = keep - h;
            const double down = f();
            x.data()[i] = keep;
            g.data()[i] = (up - down) / (2.0 * h);
        }
        return g;
    };
    auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& n) {
        const double scale = n.cwiseAbs().maxCoeff();
        return scale == 0.0 ? a.cwiseAbs().maxCoeff() : (a - n).cwiseAbs().maxCoeff() / scale;
    };
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::mt19937_64 rng(300 + trial);
        const std::vector<int> hidden{6, 5};
        auto net = Network::mlp(4, hidden, 3, 70 + trial);
        for (auto& l : net.layers) l.bias = gaussian(rng, l.bias.size(), 1, 0.1);
        const Eigen::MatrixXd x = gaussian(rng, 8, 4);
        const auto y = random_labels(rng, 8, 3);
        const Eigen::MatrixXd t_logits = gaussian(rng, 8, 3, 2.0);
        const Eigen::MatrixXd t_feat = gaussian(rng, 8, 10).cwiseAbs();
        auto proj = Projector::make(10, 5, 4, false);

        enum Term { CE, KL, KL_SWAP, FEAT };
        for (Term term : {CE, KL, KL_SWAP, FEAT}) {
            auto loss = [&]() {
                const auto c = forward_capture(net, x);
                if (term == CE) return ce_loss(c.logits(), y).value;
                if (term == KL || term == KL_SWAP) return kl_vkd_loss(c.logits(), t_logits, 4.0, term == KL_SWAP).value;
                return feature_loss(c.activation(1), t_feat, proj).value;
            };
            const auto cache = forward_capture(net, x);
            BackwardSeeds seeds;
            if (term == CE) seeds.logits_grad = ce_loss(cache.logits(), y).grad;
            if (term == KL || term == KL_SWAP) {
                seeds.logits_grad = kl_vkd_loss(cache.logits(), t_logits, 4.0, term == KL_SWAP).grad;
            }
            const auto fl = feature_loss(cache.activation(1), t_feat, proj);
            if (term == FEAT) seeds.feature_grads[1] = fl.grad_student;
            const auto g = backward(net, cache, seeds);
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                if (term == FEAT && li == 2) continue;
                const double ew = rel(g.weight[li], numeric(net.layers[li].weight, loss));
                const double eb = rel(g.bias[li], numeric(net.layers[li].bias, loss));
                worst = std::max({worst, ew, eb});
                o.check(ew < 1e-3 && eb < 1e-3, "net " + std::to_string(trial) + " term " + std::to_string(term));
            }
            if (term == FEAT) {
                const double ep = rel(fl.grad_projector, numeric(proj.weight, loss));
                worst = std::max(worst, ep);
                o.check(ep < 1e-3, "projector net " + std::to_string(trial));
            }
        }
    }
    double ce_err = 0.0;
    for (int c : {2, 5, 10, 100, 1000}) {
        const Eigen::MatrixXd z = Eigen::MatrixXd::Constant(3, c, -1.3);
        const double e = std::abs(ce_loss(z, std::vector<int>{0, 1, 1}).value - std::log(static_cast<double>(c)));
        ce_err = std::max(ce_err, e);
        o.check(e <= 1e-9, "ln C at C=" + std::to_string(c));
    }
    o.detail << "worst rel err " << worst << ", CE vs ln C " << ce_err;
}

void stop_gradient(Outcome& o) {
    const auto recipe = make_recipe(RecipeKind::ours);
    const std::vector<int> hidden{16, 16, 16, 16, 16};
    const auto s_layers = default_student_layers(hidden.size(), 3);
    const auto boundary = *std::max_element(s_layers.begin(), s_layers.end());
    const std::vector<double> none;
    o.check(recipe.kl_weight == 0.0 && recipe.stop_ce_at_boundary, "recipe");
    o.check(total_loss(recipe, none, none, 1.0, 0.0).plan.stop_logit_grad_at_boundary, "routing");
    std::size_t checked = 0;
    for (int b = 0; b < 20; ++b) {
        std::mt19937_64 rng(900 + b);
        const auto net = Network::mlp(6, hidden, 4, 40 + b);
        const Eigen::MatrixXd x = gaussian(rng, 32, 6);
        const auto y = random_labels(rng, 32, 4);
        const auto cache = forward_capture(net, x);
        BackwardSeeds seeds;
        seeds.logits_grad = recipe.ce_weight * ce_loss(cache.logits(), y).grad;
        seeds.stop_logit_grad_at = boundary;
        const auto g = backward(net, cache, seeds);
        for (std::size_t li = 0; li <= boundary; ++li) {
            o.check((g.weight[li].array() == 0.0).all() && (g.bias[li].array() == 0.0).all(),
                    "batch " + std::to_string(b) + " layer " + std::to_string(li));
            checked += static_cast<std::size_t>(g.weight[li].size() + g.bias[li].size());
        }
        o.check(g.weight.back().cwiseAbs().maxCoeff() > 0.0, "head receives CE gradient");
    }
    o.detail << checked << " backbone entries checked, all exactly zero";
}

void schedule(Outcome& o) {
    const double max_lr = 0.005;
    for (std::size_t total : {10u, 100u, 1000u, 1570u}) {
        const auto tag = "T=" + std::to_string(total);
        const auto first = one_cycle_lr(0, total, max_lr);
        const auto last = one_cycle_lr(total - 1, total, max_lr);
        o.check(close_rel(first.lr, max_lr / 25.0, 1e-9), tag + " lr(0)");
        o.check(close_rel(last.lr, max_lr / 10000.0, 1e-9), tag + " lr(T-1)");
        o.check(close_rel(first.momentum, 0.95, 1e-9) && close_rel(last.momentum, 0.95, 1e-9), tag + " momentum ends");
        const double peak_step = 0.3 * static_cast<double>(total);
        if (peak_step == std::floor(peak_step)) {
            const auto peak = one_cycle_lr(static_cast<std::size_t>(peak_step), total, max_lr);
            o.check(close_rel(peak.lr, max_lr, 1e-9), tag + " lr(0.3T)");
            o.check(close_rel(peak.momentum, 0.85, 1e-9), tag + " momentum at peak");
        }
    }
    o.detail << "lr(0) = " << one_cycle_lr(0, 1000, max_lr).lr << ", lr(300) = " << one_cycle_lr(300, 1000, max_lr).lr
             << ", lr(999) = " << one_cycle_lr(999, 1000, max_lr).lr;
}

ExperimentConfig load_sample(const char* name) {
    const std::filesystem::path path = std::filesystem::path(KQKIT_SAMPLES_DIR) / name;
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return experiment_config_from_json(nlohmann::json::parse(in), path.parent_path());
}

void experiment_one(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = load_sample("blobs_grid.json");
    const auto r = run_experiment(cfg);
    const double secs = seconds_since(t0);
    const double teacher = r.teacher_test_acc.value_or(0.0);
    const auto* ce = r.cell("ce_only");
    const auto* ours = r.cell("ours");
    const auto* base = r.cell("base_fkd");
    o.check(cfg.blobs.classes == 10 && cfg.blobs.dim == 32 && cfg.blobs.train + cfg.blobs.test == 5000, "data spec");
    o.check(cfg.teacher_hidden.size() == 8, "teacher depth");
    o.check(cfg.seeds.size() == 3, "seed count");
    o.check(teacher >= 0.90, "teacher accuracy");
    o.check(ce && ours && base && ce->mean && ours->mean && base->mean, "all cells converged");
    if (ce && ours && base && ce->mean && ours->mean && base->mean) {
        o.check(*ours->mean >= *ce->mean + 0.01, "ours beats ce_only by 1 point");
        const auto a = ari(*ours->mean, *base->mean, *ce->mean);
        o.check(!a.unstable && a.value > 0.0, "ARI(ours, base_fkd) > 0");
        char buf[200];
        std::snprintf(buf, sizeof buf, "teacher %.4f, ce_only %.4f, ours %.4f, base_fkd %.4f, ARI %.4f, ", teacher,
                      *ce->mean, *ours->mean, *base->mean, a.value);
        o.detail << buf;
    }
    o.check(secs < 600.0, "runtime");
    o.detail << secs << " s";
}

void experiment_two(Outcome& o) {
    const auto cfg = load_sample("trace_selection.json");
    const auto r = run_experiment(cfg);
    const auto sel = select_topk(r.metrics, 2);
    o.check(sel.selected == std::vector<std::uint32_t>{4, 5}, "select_topk(k=2) = {4,5}");
    const auto* clean = r.cell("clean_4_5");
    const auto* mixed = r.cell("mixed_1_2");
    o.check(cfg.seeds.size() == 3, "seed count");
    o.check(r.selections.at("clean_4_5").selected == std::vector<std::uint32_t>{4, 5}, "clean cell layers");
    o.check(r.selections.at("mixed_1_2").selected == std::vector<std::uint32_t>{1, 2}, "mixed cell layers");
    o.check(clean && mixed && clean->mean && mixed->mean, "cells converged");
    o.detail << "selected {";
    for (std::size_t i = 0; i < sel.selected.size(); ++i) o.detail << (i ? "," : "") << sel.selected[i];
    o.detail << "}";
    if (clean && mixed && clean->mean && mixed->mean) {
        o.check(*clean->mean - *mixed->mean >= 0.02, "clean beats mixed by 2 points");
        char buf[96];
        std::snprintf(buf, sizeof buf, ", from {4,5} %.4f, from {1,2} %.4f", *clean->mean, *mixed->mean);
        o.detail << buf;
    }
}

void ari_spots(Outcome& o) {
    for (double a : {0.0, 0.3, 0.71, 1.0}) {
        for (double b : {0.1, 0.5, 0.93}) {
            if (a == b) continue;
            const auto z = ari(a, a, b);
            const auto m = ari(b, a, b);
            o.check(!z.unstable && z.value == 0.0, "ari(a,a,b)");
            o.check(!m.unstable && m.value == -1.0, "ari(b,a,b)");
        }
    }
    const auto one = ari(0.8, 0.7, 0.6);
    o.check(!one.unstable && one.value == 1.0, "ari(0.8,0.7,0.6)");
    o.check(ari(0.8, 0.6, 0.6).unstable, "zero denominator");
    o.detail << "ari(0.8, 0.7, 0.6) = " << one.value;
}

}  // namespace

int main() {
    const std::pair<const char*, void (*)(Outcome&)> criteria[] = {
        {"oracle-equivalence", oracle_equivalence},
        {"metric-identities-and-bounds", identities_and_bounds},
        {"rotation-and-scaling-invariance", invariance},
        {"packing-formula", packing},
        {"gradient-checks", gradient_checks},
        {"stop-gradient", stop_gradient},
        {"schedule-endpoints", schedule},
        {"blobs-distillation-analogue", experiment_one},
        {"trace-selection-analogue", experiment_two},
        {"ari-spot-values", ari_spots},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            fn(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
