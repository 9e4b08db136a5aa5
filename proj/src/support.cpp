#include <algorithm>
#include <fstream>

#include "s2p/s2p.hpp"

namespace s2p {

std::string to_string(SupportMode m) {
    switch (m) {
        case SupportMode::FullSource: return "full_source";
        case SupportMode::Rank1NN: return "rank1_nn";
        case SupportMode::IdentityExpanded: return "identity_expanded";
    }
    return "identity_expanded";
}

SupportMode parse_support_mode(const std::string& s) {
    if (s == "full_source") return SupportMode::FullSource;
    if (s == "rank1_nn") return SupportMode::Rank1NN;
    if (s == "identity_expanded") return SupportMode::IdentityExpanded;
    throw std::invalid_argument("unknown support mode '" + s + "' (full_source|rank1_nn|identity_expanded)");
}

Dataset SupportSet::as_dataset() const {
    Dataset ds{{}, Domain::Source, Split::Train};
    for (const auto& e : entries) ds.samples.push_back(e.sample);
    if (!entries.empty()) ds.dim_hint = entries.front().sample.descriptor.size();
    return ds;
}

std::vector<int> SupportSet::identities() const {
    std::set<int> ids;
    for (const auto& e : entries) ids.insert(e.sample.identity);
    return {ids.begin(), ids.end()};
}

std::vector<int> SupportSet::source_indices() const {
    std::vector<int> out;
    for (const auto& e : entries) out.push_back(e.source_index);
    return out;
}

SupportSet select_support_from_features(const Dataset& source, const FeatureMatrix& source_features,
                                        const FeatureMatrix& target_features, SupportMode mode, int task_index) {
    if (source.empty()) throw std::invalid_argument("select_support: empty source dataset");
    if (source_features.rows() != source.size())
        throw std::invalid_argument("select_support: source features not parallel to source dataset");
    SupportSet out;
    out.built_from_task = task_index;

    if (mode == SupportMode::FullSource) {
        for (int i = 0; i < int(source.size()); ++i) out.entries.push_back({source.samples[i], i});
        return out;
    }
    if (target_features.rows() == 0) throw std::invalid_argument("select_support: empty target task");

    std::vector<double> best;
    const auto nearest = nearest_by_cosine(target_features, source_features, &best);

    std::map<int, SelectedIdentity> picked;
    std::set<int> picked_samples;
    for (std::size_t t = 0; t < nearest.size(); ++t) {
        const int id = source.samples[nearest[t]].identity;
        auto& rec = picked[id];
        if (rec.selections == 0 || best[t] > rec.max_similarity) rec.max_similarity = best[t];
        rec.identity = id;
        ++rec.selections;
        picked_samples.insert(nearest[t]);
    }
    for (const auto& [id, rec] : picked) out.selected.push_back(rec);

    for (int i = 0; i < int(source.size()); ++i) {
        const bool keep = mode == SupportMode::Rank1NN ? picked_samples.count(i) > 0
                                                       : picked.count(source.samples[i].identity) > 0;
        if (keep) out.entries.push_back({source.samples[i], i});
    }
    return out;
}

SupportSet select_support(const Dataset& target_task, const Dataset& source, const Mlp<double>& extractor,
                          SupportMode mode, int task_index) {
    if (source.empty()) throw std::invalid_argument("select_support: empty source dataset");
    if (mode != SupportMode::FullSource && target_task.empty())
        throw std::invalid_argument("select_support: empty target task");
    const FeatureMatrix fs = extractor.forward(source.descriptors());
    const FeatureMatrix ft = mode == SupportMode::FullSource ? FeatureMatrix(0, fs.cols())
                                                             : extractor.forward(target_task.descriptors());
    return select_support_from_features(source, fs, ft, mode, task_index);
}

SupportSet merge_support(const SupportSet& older, const SupportSet& newer, std::size_t max_entries) {
    SupportSet out;
    out.built_from_task = newer.built_from_task;
    std::set<int> seen;
    for (const auto& e : newer.entries) seen.insert(e.source_index);
    // Older identities in insertion order; drop whole identities from the front while over the cap.
    std::vector<int> old_ids;
    std::map<int, std::vector<SupportEntry>> old_by_id;
    for (const auto& e : older.entries) {
        if (seen.count(e.source_index)) continue;
        if (!old_by_id.count(e.sample.identity)) old_ids.push_back(e.sample.identity);
        old_by_id[e.sample.identity].push_back(e);
    }
    std::size_t total = newer.entries.size();
    for (int id : old_ids) total += old_by_id[id].size();
    std::size_t drop = 0;
    while (max_entries > 0 && total > max_entries && drop < old_ids.size()) total -= old_by_id[old_ids[drop++]].size();
    for (std::size_t k = drop; k < old_ids.size(); ++k)
        for (const auto& e : old_by_id[old_ids[k]]) out.entries.push_back(e);
    std::set<int> kept_old(old_ids.begin() + drop, old_ids.end());
    for (const auto& s : older.selected)
        if (kept_old.count(s.identity)) out.selected.push_back(s);
    for (const auto& e : newer.entries) out.entries.push_back(e);
    for (const auto& s : newer.selected) out.selected.push_back(s);
    return out;
}

void write_support_set(const std::filesystem::path& stem, const SupportSet& support) {
    auto features = stem;
    features += ".txt";
    write_feature_file(features, support.as_dataset());
    auto sidecar = stem;
    sidecar += ".identities.tsv";
    std::ofstream out(sidecar);
    if (!out) throw std::runtime_error("cannot write " + sidecar.string());
    out << "identity\tmax_similarity\tselections\n";
    for (const auto& s : support.selected)
        out << s.identity << '\t' << format_double(s.max_similarity) << '\t' << s.selections << '\n';
}

}  // namespace s2p
