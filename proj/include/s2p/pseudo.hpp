#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/extractor.hpp"
#include "s2p/loss.hpp"

namespace s2p {

inline constexpr int kOutlier = -1;

struct DbscanParams {
    /// Fixed radius in cosine distance; ignored when `adaptive` is set.
    double eps = 0.1;
    /// Resolve eps as the `percentile`-th percentile of pairwise cosine distances.
    bool adaptive = true;
    double percentile = 2.0;
    /// Neighbors within eps (self included) needed for a core point.
    int min_pts = 4;
    /// Clusters with fewer members are demoted to outliers.
    int min_cluster_size = 4;
};

struct ClusterAssignment {
    std::vector<int> labels;  // cluster id in [0, n_clusters) or kOutlier
    int n_clusters = 0;
    double eps = 0.0;         // resolved radius

    std::size_t n_outliers() const;
    double outlier_fraction() const;
    std::vector<int> cluster_sizes() const;
};

/// 1 - cosine similarity between rows (clamped at 0).
FeatureMatrix cosine_distance_matrix(const FeatureMatrix& features);

/// Linear-interpolated percentile (0..100) of the strict upper triangle of `dist`.
double upper_triangle_percentile(const FeatureMatrix& dist, double percentile);

/// Deterministic DBSCAN over cosine distances. Points are visited in index order, each
/// new cluster is fully expanded before the next starts, and a border point belongs to
/// the first cluster that reaches it. Cluster ids are contiguous after size filtering.
ClusterAssignment dbscan(const FeatureMatrix& features, const DbscanParams& params);

/// Per-task clustering summary line consumed by run logs.
std::string clustering_report(const ClusterAssignment& a);

// ---------------------------------------------------------------------------
// Hybrid memory
// ---------------------------------------------------------------------------

/// Unit-norm slots: one per source identity, one per target cluster, one per target
/// outlier, laid out in that order.
struct HybridMemory {
    FeatureMatrix source_centroids;
    std::vector<int> source_identities;  // identity of each source row (sorted)
    FeatureMatrix cluster_centroids;
    FeatureMatrix outlier_features;
    std::vector<int> outlier_members;    // task-sample index of each outlier row
    double momentum = 0.2;
    double temperature = 0.05;

    int num_source() const { return int(source_centroids.rows()); }
    int num_clusters() const { return int(cluster_centroids.rows()); }
    int num_outliers() const { return int(outlier_features.rows()); }
    int size() const { return num_source() + num_clusters() + num_outliers(); }

    int source_slot(int identity) const;
    int cluster_slot(int cluster) const;
    int outlier_slot(int row) const;

    /// Memory slot of each task sample given its cluster assignment.
    std::vector<int> target_slots(const ClusterAssignment& a) const;

    FeatureMatrix slots() const;
    RowVec<double> slot(int index) const;

    /// slot <- normalize(momentum * slot + (1 - momentum) * normalize(feature)), in row order.
    void momentum_update(const FeatureMatrix& features, const std::vector<int>& slot_ids);

    /// Drops every target-derived slot.
    void clear_target();
    bool holds_target() const { return num_clusters() + num_outliers() > 0; }
};

struct MemoryReport {
    int degenerate_centroids = 0;
};

/// Rebuilds the memory from teacher features: source centroids are means of normalized
/// features per source identity, cluster centroids means per cluster, outliers stored
/// individually; everything renormalized. A zero mean is replaced by the normalized
/// feature of the group's lowest-index member and counted in `report`.
HybridMemory rebuild_memory(const HybridMemory& previous, const Dataset& source, const FeatureMatrix& source_features,
                            const FeatureMatrix& task_features, const ClusterAssignment& assignment,
                            MemoryReport* report = nullptr);

/// Same, extracting features with `extractor`.
HybridMemory rebuild_memory(const HybridMemory& previous, const Dataset& source, const Dataset& task,
                            const ClusterAssignment& assignment, const Mlp<double>& extractor,
                            MemoryReport* report = nullptr);

// ---------------------------------------------------------------------------
// ReID losses
// ---------------------------------------------------------------------------

/// Mean over the batch of -log softmax_pos(<f_hat, m_j> / temperature) over every memory
/// slot; gradient with respect to the raw batch features.
LossResult<double> contrastive_loss(const FeatureMatrix& features, const std::vector<int>& positive_slots,
                                    const HybridMemory& memory);

/// Mean softmax cross-entropy; gradient with respect to the logits.
LossResult<double> cross_entropy_loss(const FeatureMatrix& logits, const std::vector<int>& labels);

/// Batch-hard triplet loss on Euclidean distances of L2-normalized features. Anchors
/// without a positive or a negative are skipped; the loss is the mean over the rest.
LossResult<double> triplet_loss(const FeatureMatrix& features, const std::vector<int>& labels, double margin);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws batches of `p` distinct labels with `k` samples each. Samples labelled kOutlier
/// are never drawn; labels with fewer than `k` samples are filled with replacement.
class PkSampler {
public:
    PkSampler(const std::vector<int>& labels, int p, int k, std::uint64_t seed);

    std::vector<int> next();
    int batch_size() const { return p_ * k_; }
    int num_labels() const { return int(groups_.size()); }

private:
    std::vector<int> take_labels();

    std::vector<std::vector<int>> groups_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
    int p_;
    int k_;
    Rng rng_;
};

/// Uniform draw of `n` indices from [0, size): without replacement when size >= n.
std::vector<int> random_batch(int size, int n, Rng& rng);

}  // namespace s2p
