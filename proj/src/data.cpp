#include "s2p/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "s2p/util.hpp"

namespace s2p {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Query: return "query";
        case Split::Gallery: return "gallery";
    }
    return "train";
}

Eigen::MatrixXd Dataset::descriptors() const {
    Eigen::MatrixXd m(size(), dim());
    for (Eigen::Index i = 0; i < size(); ++i) m.row(i) = samples[i].descriptor.transpose();
    return m;
}

Eigen::MatrixXd Dataset::descriptors(const std::vector<int>& indices) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(indices.size()), dim());
    for (std::size_t i = 0; i < indices.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = samples.at(indices[i]).descriptor.transpose();
    return m;
}

std::vector<int> Dataset::identity_labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.identity);
    return out;
}

std::vector<int> Dataset::camera_labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.camera);
    return out;
}

std::vector<int> Dataset::identities() const {
    std::set<int> ids;
    for (const auto& s : samples) ids.insert(s.identity);
    return {ids.begin(), ids.end()};
}

AffineShift AffineShift::identity(Eigen::Index dim) {
    return {Eigen::MatrixXd::Identity(dim, dim), Eigen::VectorXd::Zero(dim)};
}

AffineShift AffineShift::random(Eigen::Index dim, double magnitude, std::uint64_t seed,
                                double max_condition) {
    if (magnitude == 0.0) return identity(dim);
    Rng rng(seed);
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim, dim) +
                        magnitude * gaussian_matrix(dim, dim, 1.0, rng) / std::sqrt(double(dim));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::VectorXd s = svd.singularValues();
    const double floor = s.maxCoeff() / max_condition;
    s = s.cwiseMax(floor);
    AffineShift shift;
    shift.matrix = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    shift.offset = magnitude * gaussian_vector(dim, 1.0, rng);
    return shift;
}

double AffineShift::condition_number() const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix);
    const auto& s = svd.singularValues();
    return s.maxCoeff() / s.minCoeff();
}

double separation_ratio(const Eigen::MatrixXd& centroids, double intra_class_std) {
    if (intra_class_std <= 0.0) return std::numeric_limits<double>::infinity();
    std::vector<double> d;
    for (Eigen::Index i = 0; i < centroids.rows(); ++i)
        for (Eigen::Index j = i + 1; j < centroids.rows(); ++j)
            d.push_back((centroids.row(i) - centroids.row(j)).norm());
    if (d.empty()) return std::numeric_limits<double>::infinity();
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    const double median = d[d.size() / 2];
    return median / (intra_class_std * std::sqrt(double(centroids.cols())));
}

namespace {

void validate(const SynthConfig& cfg) {
    if (cfg.n_identities_source <= 0 || cfg.n_identities_target <= 0)
        throw std::invalid_argument("synth: identity counts must be positive");
    if (cfg.dim <= 0) throw std::invalid_argument("synth: dim must be positive");
    if (cfg.camera_count <= 0) throw std::invalid_argument("synth: camera_count must be positive");
    if (cfg.intra_class_std < 0.0 || cfg.camera_jitter_std < 0.0 || cfg.centroid_std <= 0.0)
        throw std::invalid_argument("synth: standard deviations must be non-negative");
    if (cfg.query_per_identity < 1 || cfg.gallery_per_identity < 1)
        throw std::invalid_argument("synth: need at least one query and one gallery sample per identity");
    if (cfg.samples_per_identity < cfg.query_per_identity + cfg.gallery_per_identity + 2)
        throw std::invalid_argument(
            "synth: samples_per_identity must leave at least 2 train samples per target identity");
}

struct DomainDraw {
    Eigen::MatrixXd centroids;
    std::vector<Eigen::VectorXd> camera_offsets;
};

std::vector<Sample> draw_identity(const Eigen::VectorXd& centroid, int identity, Domain domain,
                                  const SynthConfig& cfg, const DomainDraw& draw, Rng& rng) {
    std::vector<Sample> out;
    const int first_camera = uniform_index(cfg.camera_count, rng);
    for (int j = 0; j < cfg.samples_per_identity; ++j) {
        Sample s;
        s.identity = identity;
        s.camera = (first_camera + j) % cfg.camera_count;
        s.domain = domain;
        s.descriptor = centroid + gaussian_vector(cfg.dim, cfg.intra_class_std, rng) +
                       draw.camera_offsets[s.camera];
        out.push_back(std::move(s));
    }
    return out;
}

DomainDraw draw_domain(int n_ids, const SynthConfig& cfg, Rng& rng) {
    DomainDraw d;
    d.centroids = gaussian_matrix(n_ids, cfg.dim, cfg.centroid_std, rng);
    for (int c = 0; c < cfg.camera_count; ++c)
        d.camera_offsets.push_back(gaussian_vector(cfg.dim, cfg.camera_jitter_std, rng));
    return d;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg) {
    validate(cfg);
    return generate_synthetic(cfg, AffineShift::random(cfg.dim, cfg.shift_magnitude,
                                                       derive_seed(cfg.seed, 7)));
}

SynthData generate_synthetic(const SynthConfig& cfg, const AffineShift& shift) {
    validate(cfg);
    if (shift.matrix.rows() != cfg.dim || shift.matrix.cols() != cfg.dim || shift.offset.size() != cfg.dim)
        throw std::invalid_argument("synth: shift dimension does not match dim");

    Rng src_rng(derive_seed(cfg.seed, 1));
    Rng tgt_rng(derive_seed(cfg.seed, 2));
    SynthData out;
    out.shift = shift;

    DomainDraw src = draw_domain(cfg.n_identities_source, cfg, src_rng);
    DomainDraw tgt = draw_domain(cfg.n_identities_target, cfg, tgt_rng);
    for (Eigen::Index i = 0; i < tgt.centroids.rows(); ++i)
        tgt.centroids.row(i) = shift.apply(tgt.centroids.row(i).transpose()).transpose();

    out.separation_ratio = std::min(separation_ratio(src.centroids, cfg.intra_class_std),
                                    separation_ratio(tgt.centroids, cfg.intra_class_std));
    if (!(out.separation_ratio > 1.0))
        throw std::invalid_argument("synth: separation ratio " + format_double(out.separation_ratio) +
                                    " <= 1; identities are not separable");

    out.source.domain = Domain::Source;
    out.source.split = Split::Train;
    for (int id = 0; id < cfg.n_identities_source; ++id) {
        auto samples = draw_identity(src.centroids.row(id).transpose(), id, Domain::Source, cfg, src, src_rng);
        for (auto& s : samples) out.source.samples.push_back(std::move(s));
    }

    out.target_train = {{}, Domain::Target, Split::Train};
    out.target_query = {{}, Domain::Target, Split::Query};
    out.target_gallery = {{}, Domain::Target, Split::Gallery};
    for (int id = 0; id < cfg.n_identities_target; ++id) {
        auto samples = draw_identity(tgt.centroids.row(id).transpose(), id, Domain::Target, cfg, tgt, tgt_rng);
        std::vector<bool> used(samples.size(), false);
        // Queries come first; gallery items prefer cameras not used by any query.
        std::set<int> query_cams;
        for (int q = 0; q < cfg.query_per_identity; ++q) {
            used[q] = true;
            query_cams.insert(samples[q].camera);
        }
        int gallery = 0;
        const bool cross_camera = cfg.camera_count >= 2;
        for (std::size_t j = cfg.query_per_identity; j < samples.size() && gallery < cfg.gallery_per_identity; ++j) {
            if (cross_camera && query_cams.count(samples[j].camera)) continue;
            used[j] = true;
            ++gallery;
        }
        if (gallery == 0) throw std::invalid_argument("synth: could not place a cross-camera gallery sample");
        for (std::size_t j = 0; j < samples.size(); ++j) {
            if (j < static_cast<std::size_t>(cfg.query_per_identity))
                out.target_query.samples.push_back(samples[j]);
            else if (used[j])
                out.target_gallery.samples.push_back(samples[j]);
            else
                out.target_train.samples.push_back(samples[j]);
        }
    }
    out.source.dim_hint = out.target_train.dim_hint = out.target_query.dim_hint =
        out.target_gallery.dim_hint = cfg.dim;
    return out;
}

namespace {

Domain parse_domain(const std::string& s, long line) {
    if (s == "source") return Domain::Source;
    if (s == "target") return Domain::Target;
    throw ParseError("feature file: unknown DOMAIN '" + s + "'", -1, line);
}

Split parse_split(const std::string& s, long line) {
    if (s == "train") return Split::Train;
    if (s == "query") return Split::Query;
    if (s == "gallery") return Split::Gallery;
    throw ParseError("feature file: unknown SPLIT '" + s + "'", -1, line);
}

int parse_label(const std::string& s, const char* what, long record, long line) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size() || v < 0 || v > std::numeric_limits<int>::max()) throw std::invalid_argument(s);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw ParseError("feature file: record " + std::to_string(record) + ": invalid " + what + " '" + s + "'",
                         record, line);
    }
}

}  // namespace

Dataset read_feature_stream(std::istream& in) {
    std::string line;
    long line_no = 0;
    // Header.
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (line_no == 0 || line.find_first_not_of(" \t\r") == std::string::npos)
        throw ParseError("feature file: missing header", -1, line_no);

    Dataset ds;
    long header_dim = -1;
    {
        std::istringstream hs(line);
        std::string k1, k2, k3, dom, split;
        if (!(hs >> k1 >> header_dim >> k2 >> dom >> k3 >> split) || k1 != "D_IN" || k2 != "DOMAIN" ||
            k3 != "SPLIT" || header_dim <= 0)
            throw ParseError("feature file: malformed header (expected 'D_IN <int> DOMAIN <source|target> "
                             "SPLIT <train|query|gallery>')",
                             -1, line_no);
        std::string rest;
        if (hs >> rest) throw ParseError("feature file: trailing tokens in header", -1, line_no);
        ds.domain = parse_domain(dom, line_no);
        ds.split = parse_split(split, line_no);
        ds.dim_hint = header_dim;
    }

    long record = 0;
    Eigen::Index dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw ParseError("feature file: record " + std::to_string(record) +
                                 ": expected identity<TAB>camera<TAB>values",
                             record, line_no);
        Sample s;
        s.domain = ds.domain;
        s.identity = parse_label(line.substr(0, t1), "identity", record, line_no);
        s.camera = parse_label(line.substr(t1 + 1, t2 - t1 - 1), "camera", record, line_no);

        std::vector<double> values;
        std::string_view rest(line);
        rest.remove_prefix(t2 + 1);
        std::size_t start = 0;
        while (start <= rest.size()) {
            std::size_t comma = rest.find(',', start);
            if (comma == std::string_view::npos) comma = rest.size();
            const std::string tok(rest.substr(start, comma - start));
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (tok.empty() || end != tok.c_str() + tok.size())
                throw ParseError("feature file: record " + std::to_string(record) + ": malformed value '" + tok + "'",
                                 record, line_no);
            if (!std::isfinite(v))
                throw ParseError("feature file: record " + std::to_string(record) + ": non-finite value at position " +
                                     std::to_string(values.size()),
                                 record, line_no);
            values.push_back(v);
            start = comma + 1;
        }
        const auto n = static_cast<Eigen::Index>(values.size());
        if (dim < 0) dim = n;
        if (n != dim || n != header_dim)
            throw ParseError("feature file: record " + std::to_string(record) + ": dimension " + std::to_string(n) +
                                 " does not match " + std::to_string(dim < 0 ? header_dim : dim),
                             record, line_no);
        s.descriptor = Eigen::Map<const Eigen::VectorXd>(values.data(), n);
        ds.samples.push_back(std::move(s));
        ++record;
    }
    return ds;
}

Dataset load_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feature file " + path.string());
    return read_feature_stream(in);
}

void write_feature_stream(std::ostream& out, const Dataset& ds) {
    out << "D_IN " << ds.dim() << " DOMAIN " << to_string(ds.domain) << " SPLIT " << to_string(ds.split) << '\n';
    for (const auto& s : ds.samples) {
        out << s.identity << '\t' << s.camera << '\t';
        for (Eigen::Index j = 0; j < s.descriptor.size(); ++j) {
            if (j) out << ',';
            out << format_double(s.descriptor[j]);
        }
        out << '\n';
    }
}

void write_feature_file(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write feature file " + path.string());
    write_feature_stream(out, ds);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TaskStream split_stream(const Dataset& target_train, int n_tasks, std::uint64_t seed) {
    std::vector<int> ids = target_train.identities();
    if (n_tasks <= 0) throw std::invalid_argument("split_stream: n_tasks must be positive");
    if (static_cast<std::size_t>(n_tasks) > ids.size())
        throw std::invalid_argument("split_stream: n_tasks (" + std::to_string(n_tasks) +
                                    ") exceeds identity count (" + std::to_string(ids.size()) + ")");
    Rng rng(seed);
    shuffle_in_place(ids, rng);

    TaskStream stream;
    const std::size_t base = ids.size() / n_tasks;
    const std::size_t extra = ids.size() % n_tasks;
    std::size_t pos = 0;
    for (int k = 0; k < n_tasks; ++k) {
        const std::size_t len = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
        std::vector<int> group(ids.begin() + pos, ids.begin() + pos + len);
        pos += len;
        stream.tasks.push_back(filter_identities(target_train, group));
    }
    return stream;
}

Dataset filter_identities(const Dataset& ds, const std::vector<int>& ids) {
    const std::set<int> keep(ids.begin(), ids.end());
    Dataset out{{}, ds.domain, ds.split, ds.dim()};
    for (const auto& s : ds.samples)
        if (keep.count(s.identity)) out.samples.push_back(s);
    return out;
}

}  // namespace s2p
