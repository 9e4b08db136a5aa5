#include "s2p/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "s2p/loss.hpp"

namespace s2p {

std::vector<std::vector<int>> rank_gallery(const FeatureMatrix& query, const FeatureMatrix& gallery) {
    if (query.cols() != gallery.cols()) throw std::invalid_argument("rank_gallery: feature dimensions differ");
    const FeatureMatrix q = normalize_rows(query, "rank_gallery (query)");
    const FeatureMatrix g = normalize_rows(gallery, "rank_gallery (gallery)");
    const FeatureMatrix sim = q * g.transpose();
    std::vector<std::vector<int>> out(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        auto& order = out[i];
        order.resize(static_cast<std::size_t>(g.rows()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim(i, a) > sim(i, b); });
    }
    return out;
}

double EvalReport::rank(int r) const {
    if (cmc.empty()) return 0.0;
    if (r < 1) throw std::invalid_argument("EvalReport::rank: ranks start at 1");
    return cmc[std::min<std::size_t>(std::size_t(r), cmc.size()) - 1];
}

double average_precision(const std::vector<bool>& matches) {
    double sum = 0.0;
    int hits = 0;
    for (std::size_t k = 0; k < matches.size(); ++k) {
        if (!matches[k]) continue;
        ++hits;
        sum += double(hits) / double(k + 1);
    }
    return hits ? sum / hits : 0.0;
}

EvalReport evaluate_features(const FeatureMatrix& query, const RetrievalLabels& ql, const FeatureMatrix& gallery,
                             const RetrievalLabels& gl, bool cross_camera) {
    if (Eigen::Index(ql.identities.size()) != query.rows() || Eigen::Index(ql.cameras.size()) != query.rows() ||
        Eigen::Index(gl.identities.size()) != gallery.rows() || Eigen::Index(gl.cameras.size()) != gallery.rows())
        throw std::invalid_argument("evaluate: labels not parallel to features");
    const auto rankings = rank_gallery(query, gallery);
    EvalReport r;
    r.cmc.assign(static_cast<std::size_t>(gallery.rows()), 0.0);
    double ap_sum = 0.0;
    for (std::size_t i = 0; i < rankings.size(); ++i) {
        std::vector<bool> matches;
        for (int g : rankings[i]) {
            const bool same_id = gl.identities[g] == ql.identities[i];
            if (cross_camera && same_id && gl.cameras[g] == ql.cameras[i]) continue;
            matches.push_back(same_id);
        }
        const auto first = std::find(matches.begin(), matches.end(), true);
        if (first == matches.end()) {
            ++r.n_excluded;
            continue;
        }
        ++r.n_queries;
        ap_sum += average_precision(matches);
        for (auto k = std::size_t(first - matches.begin()); k < r.cmc.size(); ++k) r.cmc[k] += 1.0;
    }
    if (r.n_queries > 0) {
        r.map_score = ap_sum / r.n_queries;
        for (auto& c : r.cmc) c /= r.n_queries;
    }
    return r;
}

bool multi_camera(const Dataset& query, const Dataset& gallery) {
    std::set<int> cams;
    for (const auto& s : query.samples) cams.insert(s.camera);
    for (const auto& s : gallery.samples) cams.insert(s.camera);
    return cams.size() > 1;
}

EvalReport evaluate(const Dataset& query, const Dataset& gallery, const Mlp<double>& model) {
    if (query.empty() || gallery.empty()) throw std::invalid_argument("evaluate: empty query or gallery");
    return evaluate_features(model.forward(query.descriptors()), {query.identity_labels(), query.camera_labels()},
                             model.forward(gallery.descriptors()),
                             {gallery.identity_labels(), gallery.camera_labels()}, multi_camera(query, gallery));
}

ForgettingSummary forgetting_metrics(const std::vector<std::vector<double>>& slice_map) {
    const std::size_t n = slice_map.size();
    if (n < 2) throw std::invalid_argument("forgetting_metrics: need at least two evaluated tasks");
    for (std::size_t t = 0; t < n; ++t)
        if (slice_map[t].size() < n)
            throw std::invalid_argument("forgetting_metrics: missing slice entries after task " + std::to_string(t));
    ForgettingSummary s;
    for (std::size_t j = 0; j + 1 < n; ++j) {
        const double after = slice_map[j][j];
        const double last = slice_map[n - 1][j];
        if (!std::isfinite(after) || !std::isfinite(last))
            throw std::invalid_argument("forgetting_metrics: missing history entry for slice " + std::to_string(j));
        s.per_slice.push_back(last - after);
    }
    s.score = std::accumulate(s.per_slice.begin(), s.per_slice.end(), 0.0) / double(s.per_slice.size());
    return s;
}

}  // namespace s2p
