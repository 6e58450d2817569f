#pragma once

// Loss terms for feature distillation: cross-entropy, temperature-scaled KL between
// softened logits, and the projected feature-matching loss.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kqkit/error.hpp"
#include "kqkit/random.hpp"

namespace kqkit {

struct LossWithGrad {
    double value = 0.0;
    Eigen::MatrixXd grad;
};

namespace detail {

inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        const double lse = m + std::log((z.row(r).array() - m).exp().sum());
        out.row(r) = z.row(r).array() - lse;
    }
    return out;
}

}  // namespace detail

/// Mean softmax cross-entropy over the batch; gradient (softmax - onehot) / batch.
inline LossWithGrad ce_loss(const Eigen::MatrixXd& logits, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw Error("label count does not match batch");
    const Eigen::MatrixXd logp = detail::log_softmax_rows(logits);
    LossWithGrad out;
    out.grad = logp.array().exp();
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= logits.cols()) throw Error("label out of range");
        out.value -= logp(r, y);
        out.grad(r, y) -= 1.0;
    }
    out.value *= inv_b;
    out.grad *= inv_b;
    return out;
}

/// t^2 * KL(softmax(student/t) || softmax(teacher/t)), batch mean, gradient wrt the student logits.
/// With `swap` the arguments are reversed: t^2 * KL(softmax(teacher/t) || softmax(student/t)).
inline LossWithGrad kl_vkd_loss(const Eigen::MatrixXd& student, const Eigen::MatrixXd& teacher, double t,
                                bool swap = false) {
    if (!(t > 0.0)) throw Error("temperature must be positive");
    if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) throw Error("logit shape mismatch");
    const Eigen::MatrixXd logp = detail::log_softmax_rows(student / t);
    const Eigen::MatrixXd logq = detail::log_softmax_rows(teacher / t);
    const Eigen::MatrixXd p = logp.array().exp();
    const Eigen::MatrixXd q = logq.array().exp();
    const double inv_b = 1.0 / static_cast<double>(student.rows());

    LossWithGrad out;
    out.grad.resize(student.rows(), student.cols());
    for (Eigen::Index r = 0; r < student.rows(); ++r) {
        if (!swap) {
            const Eigen::RowVectorXd diff = logp.row(r) - logq.row(r);
            const double kl = (p.row(r).array() * diff.array()).sum();
            out.value += kl;
            // d/dz_j of sum_i p_i (log p_i - log q_i) = p_j (diff_j - kl), z = s / t.
            out.grad.row(r) = t * (p.row(r).array() * (diff.array() - kl));
        } else {
            out.value += (q.row(r).array() * (logq.row(r) - logp.row(r)).array()).sum();
            out.grad.row(r) = t * (p.row(r) - q.row(r));
        }
    }
    out.value *= t * t * inv_b;
    out.grad *= inv_b;
    // KL is non-negative; clip rounding noise at exact agreement.
    if (out.value < 0.0) out.value = 0.0;
    return out;
}

/// Teacher -> student width translation: optional mean-pooling over equal groups of teacher
/// units followed by a bias-free linear map.
struct Projector {
    Eigen::Index teacher_width = 0;
    Eigen::Index group = 1;       // teacher units averaged per pooled unit
    Eigen::MatrixXd weight;       // student_width x pooled_width

    Eigen::Index pooled_width() const { return teacher_width / group; }
    Eigen::Index student_width() const { return weight.rows(); }

    /// Pools when the teacher width is a multiple of the student width, starting from the
    /// identity on pooled units; otherwise a Gaussian-initialised linear map.
    static Projector make(Eigen::Index teacher_width, Eigen::Index student_width, std::uint64_t seed, bool allow_pool = true) {
        if (teacher_width <= 0 || student_width <= 0) throw Error("projector widths must be positive");
        Projector p;
        p.teacher_width = teacher_width;
        if (allow_pool && teacher_width % student_width == 0) {
            p.group = teacher_width / student_width;
            p.weight = Eigen::MatrixXd::Identity(student_width, student_width);
        } else {
            Rng rng(seed);
            std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(teacher_width)));
            p.weight.resize(student_width, teacher_width);
            for (Eigen::Index c = 0; c < p.weight.cols(); ++c) {
                for (Eigen::Index r = 0; r < p.weight.rows(); ++r) p.weight(r, c) = normal(rng);
            }
        }
        return p;
    }

    Eigen::MatrixXd pool(const Eigen::MatrixXd& teacher) const {
        if (teacher.cols() != teacher_width) throw Error("width mismatch: teacher features vs projector");
        if (group == 1) return teacher;
        Eigen::MatrixXd out(teacher.rows(), pooled_width());
        for (Eigen::Index g = 0; g < pooled_width(); ++g) {
            out.col(g) = teacher.middleCols(g * group, group).rowwise().mean();
        }
        return out;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& teacher) const { return pool(teacher) * weight.transpose(); }
};

struct FeatureLoss {
    double value = 0.0;
    Eigen::MatrixXd grad_student;    // dL/d(student representation)
    Eigen::MatrixXd grad_projector;  // dL/d(projector weight)
};

/// Mean over elements of (student - project(teacher))^2. The teacher side is constant.
inline FeatureLoss feature_loss(const Eigen::MatrixXd& student, const Eigen::MatrixXd& teacher,
                                const Projector& projector) {
    if (student.cols() != projector.student_width()) throw Error("width mismatch: student features vs projector");
    if (student.rows() != teacher.rows()) throw Error("batch mismatch between student and teacher features");
    const Eigen::MatrixXd pooled = projector.pool(teacher);
    const Eigen::MatrixXd diff = student - pooled * projector.weight.transpose();
    const double scale = 1.0 / static_cast<double>(diff.size());
    FeatureLoss out;
    out.value = diff.squaredNorm() * scale;
    out.grad_student = 2.0 * scale * diff;
    out.grad_projector = -2.0 * scale * diff.transpose() * pooled;
    return out;
}

}  // namespace kqkit
