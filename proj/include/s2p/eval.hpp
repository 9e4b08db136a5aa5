#pragma once

#include <vector>

#include "s2p/data.hpp"
#include "s2p/extractor.hpp"

namespace s2p {

/// Gallery indices per query by descending cosine similarity, ties to the lower index.
std::vector<std::vector<int>> rank_gallery(const FeatureMatrix& query, const FeatureMatrix& gallery);

struct EvalReport {
    double map_score = 0.0;
    std::vector<double> cmc;  // cmc[r - 1] = fraction of queries with a true match at rank <= r
    int n_queries = 0;        // queries that entered the averages
    int n_excluded = 0;       // queries without any valid gallery match

    double rank(int r) const;
};

struct RetrievalLabels {
    std::vector<int> identities;
    std::vector<int> cameras;
};

/// Average precision over the true-match positions of a filtered ranking; `matches[k]`
/// tells whether rank k+1 is a true match. Returns 0 when there are no matches.
double average_precision(const std::vector<bool>& matches);

/// mAP/CMC from features. With `cross_camera`, gallery items sharing both identity and
/// camera with the query are dropped from its ranking.
EvalReport evaluate_features(const FeatureMatrix& query, const RetrievalLabels& query_labels,
                             const FeatureMatrix& gallery, const RetrievalLabels& gallery_labels, bool cross_camera);

/// Embeds both splits with `model` and scores them; the same-camera exclusion is enabled
/// whenever the splits contain more than one camera.
EvalReport evaluate(const Dataset& query, const Dataset& gallery, const Mlp<double>& model);

bool multi_camera(const Dataset& query, const Dataset& gallery);

struct ForgettingSummary {
    std::vector<double> per_slice;  // final minus just-learned mAP for every slice but the last
    double score = 0.0;             // mean of per_slice; negative means forgetting
};

/// `slice_map[t][j]` is the mAP on task slice j evaluated right after task t.
ForgettingSummary forgetting_metrics(const std::vector<std::vector<double>>& slice_map);

}  // namespace s2p
