#pragma once

// Source-guided similarity preservation: support-set selection, EMA teacher,
// similarity-matrix distillation and Gaussian-kernel MMD alignment.

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/extractor.hpp"
#include "s2p/loss.hpp"

namespace s2p {

// ---------------------------------------------------------------------------
// Support set
// ---------------------------------------------------------------------------

enum class SupportMode { FullSource, Rank1NN, IdentityExpanded };

std::string to_string(SupportMode m);
SupportMode parse_support_mode(const std::string& s);

struct SupportEntry {
    Sample sample;
    int source_index = 0;  // row in the source dataset
};

/// Audit record for one selected source identity.
struct SelectedIdentity {
    int identity = 0;
    double max_similarity = 0.0;  // best cosine over the target samples that selected it
    int selections = 0;           // number of target samples whose nearest neighbor has this identity
};

struct SupportSet {
    std::vector<SupportEntry> entries;
    std::vector<SelectedIdentity> selected;
    int built_from_task = -1;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
    Dataset as_dataset() const;
    std::vector<int> identities() const;
    std::vector<int> source_indices() const;
};

/// Index of the row of `source` with the largest cosine similarity to each row of
/// `target`; ties go to the lowest source index. `best_similarity` (optional) receives
/// the maxima. Exhaustive search.
template <typename DT, typename DS>
std::vector<int> nearest_by_cosine(const Eigen::MatrixBase<DT>& target, const Eigen::MatrixBase<DS>& source,
                                   std::vector<double>* best_similarity = nullptr) {
    if (target.cols() != source.cols()) throw std::invalid_argument("nearest_by_cosine: feature dimension mismatch");
    if (source.rows() == 0) throw std::invalid_argument("nearest_by_cosine: empty source");
    const auto t = normalize_rows(target, "support selection (target)");
    const auto s = normalize_rows(source, "support selection (source)");
    const auto sim = (t * s.transpose()).eval();
    std::vector<int> idx(static_cast<std::size_t>(t.rows()));
    if (best_similarity) best_similarity->assign(idx.size(), 0.0);
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < sim.cols(); ++j)
            if (sim(i, j) > sim(i, best)) best = j;
        idx[i] = static_cast<int>(best);
        if (best_similarity) (*best_similarity)[i] = double(sim(i, best));
    }
    return idx;
}

/// Support set from precomputed features (rows parallel to the datasets).
SupportSet select_support_from_features(const Dataset& source, const FeatureMatrix& source_features,
                                        const FeatureMatrix& target_features, SupportMode mode, int task_index = -1);

/// Builds the support set for a finished task: every target sample picks its most
/// cosine-similar source sample under `extractor`; IdentityExpanded returns all source
/// samples of the picked identities, Rank1NN only the picked samples and FullSource
/// the whole source set.
SupportSet select_support(const Dataset& target_task, const Dataset& source, const Mlp<double>& extractor,
                          SupportMode mode = SupportMode::IdentityExpanded, int task_index = -1);

/// Union of `older` and `newer`, keeping at most `max_entries` entries by dropping the
/// oldest identities first (0 disables the cap).
SupportSet merge_support(const SupportSet& older, const SupportSet& newer, std::size_t max_entries);

/// Writes `<stem>.txt` in the feature file format and `<stem>.identities.tsv` with one
/// `identity<TAB>max_similarity<TAB>selections` row per selected identity.
void write_support_set(const std::filesystem::path& stem, const SupportSet& support);

// ---------------------------------------------------------------------------
// EMA teacher
// ---------------------------------------------------------------------------

/// teacher <- alpha * teacher + (1 - alpha) * student, block by block.
template <typename Scalar>
void ema_update(ParameterSet<Scalar>& teacher, const ParameterSet<Scalar>& student, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("ema_update: alpha must lie in [0, 1)");
    if (!teacher.congruent(student)) throw std::invalid_argument("ema_update: teacher and student shapes differ");
    for (std::size_t i = 0; i < teacher.size(); ++i)
        teacher.tensors[i] = Scalar(alpha) * teacher.tensors[i] + Scalar(1.0 - alpha) * student.tensors[i];
}

struct TeacherState {
    Mlp<double> model;
    double alpha = 0.999;

    TeacherState() = default;
    TeacherState(Mlp<double> init, double a) : model(std::move(init)), alpha(a) {
        if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("TeacherState: alpha must lie in [0, 1)");
    }

    void update(const Mlp<double>& student) {
        if (student.dims() != model.dims()) throw std::invalid_argument("TeacherState: architecture mismatch");
        ema_update(model.mutable_params(), student.params(), alpha);
    }
};

// ---------------------------------------------------------------------------
// Similarity distillation
// ---------------------------------------------------------------------------

/// Gram matrix F F^T of raw features.
template <typename Derived>
Mat<typename Derived::Scalar> similarity_matrix(const Eigen::MatrixBase<Derived>& features) {
    if (features.rows() < 2) throw std::invalid_argument("similarity_matrix: need at least two samples");
    return features * features.transpose();
}

/// || T/||T|| - S/||S|| ||_F^2 with Frobenius norms; gradient with respect to S.
/// Both matrices zero gives 0; exactly one zero is an error.
template <typename DT, typename DS>
LossResult<typename DS::Scalar> kd_loss(const Eigen::MatrixBase<DT>& teacher_sim,
                                        const Eigen::MatrixBase<DS>& student_sim) {
    using Scalar = typename DS::Scalar;
    if (teacher_sim.rows() != student_sim.rows() || teacher_sim.cols() != student_sim.cols())
        throw std::invalid_argument("kd_loss: similarity matrices differ in size");
    const Scalar nt = teacher_sim.norm();
    const Scalar ns = student_sim.norm();
    LossResult<Scalar> r;
    r.grad = Mat<Scalar>::Zero(student_sim.rows(), student_sim.cols());
    if (nt == Scalar(0) && ns == Scalar(0)) return r;
    if (nt == Scalar(0) || ns == Scalar(0))
        throw std::domain_error("kd_loss: exactly one similarity matrix is zero");
    const Mat<Scalar> s_hat = student_sim / ns;
    const Mat<Scalar> diff = s_hat - teacher_sim / nt;
    r.value = diff.squaredNorm();
    const Mat<Scalar> g_hat = Scalar(2) * diff;
    r.grad = (g_hat - (g_hat.cwiseProduct(s_hat)).sum() * s_hat) / ns;
    return r;
}

/// kd_loss on the Gram matrices of two feature batches; gradient with respect to the
/// student features. The teacher branch is constant.
template <typename DT, typename DS>
LossResult<typename DS::Scalar> kd_loss_features(const Eigen::MatrixBase<DT>& teacher_features,
                                                 const Eigen::MatrixBase<DS>& student_features) {
    using Scalar = typename DS::Scalar;
    if (teacher_features.rows() != student_features.rows())
        throw std::invalid_argument("kd_loss: teacher and student batch sizes differ");
    const Mat<Scalar> st = similarity_matrix(teacher_features);
    const Mat<Scalar> ss = similarity_matrix(student_features);
    auto r = kd_loss(st, ss);
    const Mat<Scalar> g = r.grad + r.grad.transpose();
    r.grad = g * student_features;
    return r;
}

// ---------------------------------------------------------------------------
// MMD alignment
// ---------------------------------------------------------------------------

template <typename DA, typename DB>
typename DA::Scalar gaussian_kernel(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, double sigma) {
    using Scalar = typename DA::Scalar;
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    if (a.size() != b.size()) throw std::invalid_argument("gaussian_kernel: dimension mismatch");
    return std::exp(-(a - b).squaredNorm() / Scalar(2.0 * sigma * sigma));
}

/// Bandwidth sigma^2: per-feature (population) variance summed over dimensions, averaged
/// over the two batches; 1 when that estimate falls below 1e-12.
template <typename DA, typename DB>
double mmd_bandwidth_sq(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    auto total_variance = [](const auto& m) {
        const auto mean = m.colwise().mean();
        return double((m.rowwise() - mean).squaredNorm()) / double(m.rows());
    };
    const double s2 = 0.5 * (total_variance(a) + total_variance(b));
    return s2 < 1e-12 ? 1.0 : s2;
}

template <typename Scalar>
struct MmdResult {
    Scalar value = Scalar(0);
    Mat<Scalar> grad;  // with respect to the student (target) batch
    double sigma = 1.0;
};

/// Biased (V-statistic) MMD between a teacher-source batch and a student-target batch
/// with a Gaussian kernel of bandwidth `sigma`, diagonal terms included. The bandwidth
/// is a constant with respect to the gradient.
template <typename DT, typename DS>
MmdResult<typename DS::Scalar> mmd_loss(const Eigen::MatrixBase<DT>& teacher_source,
                                        const Eigen::MatrixBase<DS>& student_target, double sigma) {
    using Scalar = typename DS::Scalar;
    if (teacher_source.rows() != student_target.rows())
        throw std::invalid_argument("mmd_loss: batch sizes differ");
    if (teacher_source.cols() != student_target.cols())
        throw std::invalid_argument("mmd_loss: feature dimensions differ");
    if (!(sigma > 0.0)) throw std::invalid_argument("mmd_loss: degenerate bandwidth");
    const Eigen::Index n = student_target.rows();
    const Scalar inv2s2 = Scalar(1.0 / (2.0 * sigma * sigma));
    const Scalar inv_s2 = Scalar(1.0 / (sigma * sigma));

    auto kernel_matrix = [&](const auto& x, const auto& y) {
        Mat<Scalar> k(x.rows(), y.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < y.rows(); ++j) k(i, j) = std::exp(-(x.row(i) - y.row(j)).squaredNorm() * inv2s2);
        return k;
    };
    const Mat<Scalar> ktt = kernel_matrix(teacher_source, teacher_source);
    const Mat<Scalar> kss = kernel_matrix(student_target, student_target);
    const Mat<Scalar> kts = kernel_matrix(teacher_source, student_target);

    const Scalar scale = Scalar(1) / Scalar(n * n);
    MmdResult<Scalar> r;
    r.sigma = sigma;
    r.value = (ktt.sum() + kss.sum() - Scalar(2) * kts.sum()) * scale;
    r.grad = Mat<Scalar>::Zero(n, student_target.cols());
    for (Eigen::Index k = 0; k < n; ++k) {
        RowVec<Scalar> g = RowVec<Scalar>::Zero(student_target.cols());
        for (Eigen::Index j = 0; j < n; ++j)
            g -= Scalar(2) * kss(k, j) * (student_target.row(k) - student_target.row(j)) * inv_s2;
        for (Eigen::Index i = 0; i < n; ++i)
            g += Scalar(2) * kts(i, k) * (student_target.row(k) - teacher_source.row(i)) * inv_s2;
        r.grad.row(k) = g * scale;
    }
    return r;
}

/// mmd_loss with the batch-variance bandwidth.
template <typename DT, typename DS>
MmdResult<typename DS::Scalar> mmd_loss(const Eigen::MatrixBase<DT>& teacher_source,
                                        const Eigen::MatrixBase<DS>& student_target) {
    if (teacher_source.rows() != student_target.rows())
        throw std::invalid_argument("mmd_loss: batch sizes differ");
    return mmd_loss(teacher_source, student_target, std::sqrt(mmd_bandwidth_sq(teacher_source, student_target)));
}

}  // namespace s2p
