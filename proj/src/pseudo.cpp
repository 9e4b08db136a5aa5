#include "s2p/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <numeric>
#include <set>

namespace s2p {

std::size_t ClusterAssignment::n_outliers() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kOutlier));
}

double ClusterAssignment::outlier_fraction() const {
    return labels.empty() ? 0.0 : double(n_outliers()) / double(labels.size());
}

std::vector<int> ClusterAssignment::cluster_sizes() const {
    std::vector<int> sizes(n_clusters, 0);
    for (int l : labels)
        if (l != kOutlier) ++sizes.at(l);
    return sizes;
}

FeatureMatrix cosine_distance_matrix(const FeatureMatrix& features) {
    const FeatureMatrix x = normalize_rows(features, "cosine distance");
    FeatureMatrix d = (FeatureMatrix::Ones(x.rows(), x.rows()) - x * x.transpose()).cwiseMax(0.0);
    return d;
}

double upper_triangle_percentile(const FeatureMatrix& dist, double percentile) {
    if (!(percentile >= 0.0 && percentile <= 100.0))
        throw std::invalid_argument("percentile must lie in [0, 100]");
    std::vector<double> v;
    for (Eigen::Index i = 0; i < dist.rows(); ++i)
        for (Eigen::Index j = i + 1; j < dist.cols(); ++j) v.push_back(dist(i, j));
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = percentile / 100.0 * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - double(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

ClusterAssignment dbscan(const FeatureMatrix& features, const DbscanParams& params) {
    const Eigen::Index n = features.rows();
    if (n == 0) throw std::invalid_argument("dbscan: empty input");
    if (params.min_pts < 1) throw std::invalid_argument("dbscan: min_pts must be positive");
    const FeatureMatrix dist = cosine_distance_matrix(features);

    ClusterAssignment out;
    out.eps = params.adaptive ? upper_triangle_percentile(dist, params.percentile) : params.eps;
    if (!params.adaptive && !(params.eps > 0.0)) throw std::invalid_argument("dbscan: eps must be positive");

    std::vector<std::vector<int>> neighbors(n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (dist(i, j) <= out.eps) neighbors[i].push_back(int(j));

    constexpr int kUnassigned = -2;
    std::vector<int> raw(n, kUnassigned);
    int clusters = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (raw[i] != kUnassigned || int(neighbors[i].size()) < params.min_pts) continue;
        raw[i] = clusters;
        std::deque<int> frontier{int(i)};
        while (!frontier.empty()) {
            const int p = frontier.front();
            frontier.pop_front();
            for (int q : neighbors[p]) {
                if (raw[q] != kUnassigned) continue;
                raw[q] = clusters;
                if (int(neighbors[q].size()) >= params.min_pts) frontier.push_back(q);
            }
        }
        ++clusters;
    }

    std::vector<int> size(clusters, 0);
    for (int l : raw)
        if (l >= 0) ++size[l];
    std::vector<int> remap(clusters, kOutlier);
    for (int c = 0; c < clusters; ++c)
        if (size[c] >= params.min_cluster_size) remap[c] = out.n_clusters++;
    out.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.labels[i] = raw[i] >= 0 ? remap[raw[i]] : kOutlier;
    return out;
}

std::string clustering_report(const ClusterAssignment& a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "n_clusters=%d outlier_fraction=%.4f eps=%.6g", a.n_clusters, a.outlier_fraction(),
                  a.eps);
    return buf;
}

int HybridMemory::source_slot(int identity) const {
    const auto it = std::lower_bound(source_identities.begin(), source_identities.end(), identity);
    if (it == source_identities.end() || *it != identity)
        throw std::out_of_range("HybridMemory: no slot for source identity " + std::to_string(identity));
    return int(it - source_identities.begin());
}

int HybridMemory::cluster_slot(int cluster) const {
    if (cluster < 0 || cluster >= num_clusters())
        throw std::out_of_range("HybridMemory: no slot for cluster " + std::to_string(cluster));
    return num_source() + cluster;
}

int HybridMemory::outlier_slot(int row) const {
    if (row < 0 || row >= num_outliers())
        throw std::out_of_range("HybridMemory: no slot for outlier " + std::to_string(row));
    return num_source() + num_clusters() + row;
}

std::vector<int> HybridMemory::target_slots(const ClusterAssignment& a) const {
    std::vector<int> slots(a.labels.size());
    std::map<int, int> outlier_row;
    for (std::size_t r = 0; r < outlier_members.size(); ++r) outlier_row[outlier_members[r]] = int(r);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        if (a.labels[i] != kOutlier) {
            slots[i] = cluster_slot(a.labels[i]);
        } else {
            const auto it = outlier_row.find(int(i));
            if (it == outlier_row.end())
                throw std::out_of_range("HybridMemory: outlier sample " + std::to_string(i) + " has no slot");
            slots[i] = outlier_slot(it->second);
        }
    }
    return slots;
}

FeatureMatrix HybridMemory::slots() const {
    const Eigen::Index c = std::max({source_centroids.cols(), cluster_centroids.cols(), outlier_features.cols()});
    FeatureMatrix m(size(), c);
    if (num_source()) m.topRows(num_source()) = source_centroids;
    if (num_clusters()) m.middleRows(num_source(), num_clusters()) = cluster_centroids;
    if (num_outliers()) m.bottomRows(num_outliers()) = outlier_features;
    return m;
}

RowVec<double> HybridMemory::slot(int index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("HybridMemory: slot index out of range");
    if (index < num_source()) return source_centroids.row(index);
    index -= num_source();
    if (index < num_clusters()) return cluster_centroids.row(index);
    return outlier_features.row(index - num_clusters());
}

void HybridMemory::momentum_update(const FeatureMatrix& features, const std::vector<int>& slot_ids) {
    if (Eigen::Index(slot_ids.size()) != features.rows())
        throw std::invalid_argument("HybridMemory: slot list not parallel to features");
    const FeatureMatrix x = normalize_rows(features, "memory update");
    for (std::size_t i = 0; i < slot_ids.size(); ++i) {
        int s = slot_ids[i];
        if (s < 0 || s >= size()) throw std::out_of_range("HybridMemory: slot index out of range");
        FeatureMatrix* block = &source_centroids;
        if (s >= num_source()) {
            s -= num_source();
            block = &cluster_centroids;
            if (s >= num_clusters()) {
                s -= num_clusters();
                block = &outlier_features;
            }
        }
        RowVec<double> v = momentum * block->row(s) + (1.0 - momentum) * x.row(i);
        const double nv = v.norm();
        // Antipodal update: keep the incoming direction.
        block->row(s) = nv > 0.0 ? RowVec<double>(v / nv) : RowVec<double>(x.row(i));
    }
}

void HybridMemory::clear_target() {
    const Eigen::Index c = source_centroids.cols();
    cluster_centroids.resize(0, c);
    outlier_features.resize(0, c);
    outlier_members.clear();
}

namespace {

// Normalized mean of the normalized rows in `members`; falls back to the first member.
RowVec<double> centroid(const FeatureMatrix& normalized, const std::vector<int>& members, MemoryReport* report) {
    if (members.empty()) throw std::logic_error("rebuild_memory: empty group");
    RowVec<double> m = RowVec<double>::Zero(normalized.cols());
    for (int i : members) m += normalized.row(i);
    m /= double(members.size());
    const double nm = m.norm();
    if (nm < 1e-12) {
        if (report) ++report->degenerate_centroids;
        return normalized.row(*std::min_element(members.begin(), members.end()));
    }
    return m / nm;
}

}  // namespace

HybridMemory rebuild_memory(const HybridMemory& previous, const Dataset& source, const FeatureMatrix& source_features,
                            const FeatureMatrix& task_features, const ClusterAssignment& assignment,
                            MemoryReport* report) {
    if (Eigen::Index(assignment.labels.size()) != task_features.rows())
        throw std::invalid_argument("rebuild_memory: assignment not parallel to task features");
    if (source_features.rows() != source.size())
        throw std::invalid_argument("rebuild_memory: source features not parallel to source dataset");
    HybridMemory mem;
    mem.momentum = previous.momentum;
    mem.temperature = previous.temperature;
    const Eigen::Index c = source_features.rows() ? source_features.cols() : task_features.cols();

    const FeatureMatrix fs = source_features.rows() ? normalize_rows(source_features, "rebuild_memory (source)")
                                                    : FeatureMatrix(0, c);
    std::map<int, std::vector<int>> by_id;
    for (int i = 0; i < int(source.size()); ++i) by_id[source.samples[i].identity].push_back(i);
    mem.source_centroids.resize(Eigen::Index(by_id.size()), c);
    int row = 0;
    for (const auto& [id, members] : by_id) {
        mem.source_identities.push_back(id);
        mem.source_centroids.row(row++) = centroid(fs, members, report);
    }

    const FeatureMatrix ft = task_features.rows() ? normalize_rows(task_features, "rebuild_memory (target)")
                                                  : FeatureMatrix(0, c);
    std::vector<std::vector<int>> clusters(assignment.n_clusters);
    std::vector<int> outliers;
    for (int i = 0; i < int(assignment.labels.size()); ++i) {
        const int l = assignment.labels[i];
        if (l == kOutlier) outliers.push_back(i);
        else clusters.at(l).push_back(i);
    }
    mem.cluster_centroids.resize(assignment.n_clusters, c);
    for (int k = 0; k < assignment.n_clusters; ++k) {
        if (clusters[k].empty()) throw std::logic_error("rebuild_memory: cluster " + std::to_string(k) + " is empty");
        mem.cluster_centroids.row(k) = centroid(ft, clusters[k], report);
    }
    mem.outlier_features.resize(Eigen::Index(outliers.size()), c);
    for (std::size_t r = 0; r < outliers.size(); ++r) mem.outlier_features.row(Eigen::Index(r)) = ft.row(outliers[r]);
    mem.outlier_members = outliers;
    return mem;
}

HybridMemory rebuild_memory(const HybridMemory& previous, const Dataset& source, const Dataset& task,
                            const ClusterAssignment& assignment, const Mlp<double>& extractor, MemoryReport* report) {
    return rebuild_memory(previous, source, extractor.forward(source.descriptors()),
                          extractor.forward(task.descriptors()), assignment, report);
}

namespace {

// Row-wise log-softmax pieces: returns probabilities and writes -log p[label] per row.
FeatureMatrix softmax_rows(const FeatureMatrix& logits, const std::vector<int>& labels, double& loss_sum) {
    FeatureMatrix p(logits.rows(), logits.cols());
    loss_sum = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const RowVec<double> e = (logits.row(i).array() - mx).exp().matrix();
        const double z = e.sum();
        p.row(i) = e / z;
        loss_sum += std::log(z) + mx - logits(i, labels[i]);
    }
    return p;
}

}  // namespace

LossResult<double> contrastive_loss(const FeatureMatrix& features, const std::vector<int>& positive_slots,
                                    const HybridMemory& memory) {
    const Eigen::Index n = features.rows();
    if (Eigen::Index(positive_slots.size()) != n)
        throw std::invalid_argument("contrastive_loss: labels not parallel to features");
    if (n == 0) throw std::invalid_argument("contrastive_loss: empty batch");
    if (!(memory.temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    for (int s : positive_slots)
        if (s < 0 || s >= memory.size())
            throw std::out_of_range("contrastive_loss: label resolves to no memory slot (" + std::to_string(s) + ")");
    const FeatureMatrix slots = memory.slots();
    if (slots.cols() != features.cols()) throw std::invalid_argument("contrastive_loss: memory dimension mismatch");

    const FeatureMatrix x = normalize_rows(features, "contrastive_loss");
    const FeatureMatrix logits = x * slots.transpose() / memory.temperature;
    LossResult<double> r;
    double total = 0.0;
    FeatureMatrix g = softmax_rows(logits, positive_slots, total);
    for (Eigen::Index i = 0; i < n; ++i) g(i, positive_slots[i]) -= 1.0;
    g /= double(n);
    r.value = total / double(n);
    const FeatureMatrix grad_hat = g * slots / memory.temperature;
    r.grad = normalize_rows_backward(features, grad_hat);
    return r;
}

LossResult<double> cross_entropy_loss(const FeatureMatrix& logits, const std::vector<int>& labels) {
    const Eigen::Index n = logits.rows();
    if (Eigen::Index(labels.size()) != n) throw std::invalid_argument("cross_entropy_loss: labels not parallel");
    if (n == 0) throw std::invalid_argument("cross_entropy_loss: empty batch");
    for (int l : labels)
        if (l < 0 || l >= logits.cols())
            throw std::out_of_range("cross_entropy_loss: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(logits.cols()) + ")");
    LossResult<double> r;
    double total = 0.0;
    r.grad = softmax_rows(logits, labels, total);
    for (Eigen::Index i = 0; i < n; ++i) r.grad(i, labels[i]) -= 1.0;
    r.grad /= double(n);
    r.value = total / double(n);
    return r;
}

LossResult<double> triplet_loss(const FeatureMatrix& features, const std::vector<int>& labels, double margin) {
    const Eigen::Index n = features.rows();
    if (Eigen::Index(labels.size()) != n) throw std::invalid_argument("triplet_loss: labels not parallel");
    const FeatureMatrix x = normalize_rows(features, "triplet_loss");
    FeatureMatrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (x.row(i) - x.row(j)).norm();

    FeatureMatrix grad_hat = FeatureMatrix::Zero(n, features.cols());
    double total = 0.0;
    int anchors = 0;
    // d(a, b) gradient with respect to x_a (zero at coincident points).
    auto add_dist_grad = [&](Eigen::Index a, Eigen::Index b, double w) {
        if (d(a, b) <= 0.0) return;
        const RowVec<double> u = (x.row(a) - x.row(b)) / d(a, b);
        grad_hat.row(a) += w * u;
        grad_hat.row(b) -= w * u;
    };
    std::vector<std::pair<Eigen::Index, std::pair<Eigen::Index, Eigen::Index>>> active;
    for (Eigen::Index a = 0; a < n; ++a) {
        Eigen::Index pos = -1, neg = -1;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (pos < 0 || d(a, j) > d(a, pos)) pos = j;
            } else if (neg < 0 || d(a, j) < d(a, neg)) {
                neg = j;
            }
        }
        if (pos < 0 || neg < 0) continue;
        ++anchors;
        const double h = d(a, pos) - d(a, neg) + margin;
        if (h > 0.0) {
            total += h;
            active.push_back({a, {pos, neg}});
        }
    }
    if (anchors == 0) throw std::invalid_argument("triplet_loss: no anchor has both a positive and a negative");
    const double w = 1.0 / double(anchors);
    for (const auto& [a, pn] : active) {
        add_dist_grad(a, pn.first, w);
        add_dist_grad(a, pn.second, -w);
    }
    LossResult<double> r;
    r.value = total / double(anchors);
    r.grad = normalize_rows_backward(features, grad_hat);
    return r;
}

PkSampler::PkSampler(const std::vector<int>& labels, int p, int k, std::uint64_t seed) : p_(p), k_(k), rng_(seed) {
    if (p <= 0 || k <= 0) throw std::invalid_argument("PkSampler: P and K must be positive");
    std::map<int, std::vector<int>> by_label;
    for (int i = 0; i < int(labels.size()); ++i)
        if (labels[i] != kOutlier) by_label[labels[i]].push_back(i);
    for (auto& [l, members] : by_label) groups_.push_back(std::move(members));
    if (int(groups_.size()) < p)
        throw std::invalid_argument("PkSampler: only " + std::to_string(groups_.size()) +
                                    " distinct labels available, need P=" + std::to_string(p));
    order_.resize(groups_.size());
    std::iota(order_.begin(), order_.end(), 0);
    shuffle_in_place(order_, rng_);
}

std::vector<int> PkSampler::take_labels() {
    std::vector<int> picked;
    std::set<int> used;
    while (int(picked.size()) < p_) {
        if (cursor_ == order_.size()) {
            shuffle_in_place(order_, rng_);
            cursor_ = 0;
        }
        const int l = order_[cursor_++];
        if (used.insert(l).second) picked.push_back(l);
    }
    return picked;
}

std::vector<int> PkSampler::next() {
    std::vector<int> batch;
    batch.reserve(std::size_t(p_) * k_);
    for (int l : take_labels()) {
        std::vector<int> members = groups_[l];
        if (int(members.size()) >= k_) {
            for (int j = 0; j < k_; ++j) {
                const int r = j + uniform_index(int(members.size()) - j, rng_);
                std::swap(members[j], members[r]);
                batch.push_back(members[j]);
            }
        } else {
            for (int m : members) batch.push_back(m);
            for (int j = int(members.size()); j < k_; ++j) batch.push_back(members[uniform_index(int(members.size()), rng_)]);
        }
    }
    return batch;
}

std::vector<int> random_batch(int size, int n, Rng& rng) {
    if (size <= 0 || n <= 0) throw std::invalid_argument("random_batch: empty population or batch");
    std::vector<int> out;
    if (size >= n) {
        std::vector<int> idx(size);
        std::iota(idx.begin(), idx.end(), 0);
        for (int j = 0; j < n; ++j) {
            const int r = j + uniform_index(size - j, rng);
            std::swap(idx[j], idx[r]);
            out.push_back(idx[j]);
        }
    } else {
        for (int j = 0; j < n; ++j) out.push_back(uniform_index(size, rng));
    }
    return out;
}

}  // namespace s2p
