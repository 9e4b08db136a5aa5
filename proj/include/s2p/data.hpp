#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace s2p {

enum class Domain { Source, Target };
enum class Split { Train, Query, Gallery };

std::string to_string(Domain d);
std::string to_string(Split s);

/// One labeled descriptor record. `identity` is a person label, `camera` a view label.
struct Sample {
    Eigen::VectorXd descriptor;
    int identity = 0;
    int camera = 0;
    Domain domain = Domain::Source;

    bool operator==(const Sample& other) const {
        return identity == other.identity && camera == other.camera && domain == other.domain &&
               descriptor.size() == other.descriptor.size() && descriptor == other.descriptor;
    }
};

struct Dataset {
    std::vector<Sample> samples;
    Domain domain = Domain::Source;
    Split split = Split::Train;

    Eigen::Index size() const { return static_cast<Eigen::Index>(samples.size()); }
    bool empty() const { return samples.empty(); }
    Eigen::Index dim() const { return samples.empty() ? dim_hint : samples.front().descriptor.size(); }

    /// Row-stacked descriptors (n x D_in).
    Eigen::MatrixXd descriptors() const;
    /// Rows `indices` of the descriptor matrix.
    Eigen::MatrixXd descriptors(const std::vector<int>& indices) const;
    std::vector<int> identity_labels() const;
    std::vector<int> camera_labels() const;
    /// Sorted distinct identities.
    std::vector<int> identities() const;

    bool operator==(const Dataset& other) const {
        return domain == other.domain && split == other.split && dim() == other.dim() &&
               samples == other.samples;
    }

    // Dimension for empty datasets (taken from the file header on load).
    Eigen::Index dim_hint = 0;
};

struct TaskStream {
    std::vector<Dataset> tasks;
    std::size_t count() const { return tasks.size(); }
};

/// x -> matrix * x + offset, applied to target identity centroids.
struct AffineShift {
    Eigen::MatrixXd matrix;
    Eigen::VectorXd offset;

    static AffineShift identity(Eigen::Index dim);
    /// Random map I + magnitude * G / sqrt(dim) with singular values clamped so that
    /// the condition number is at most `max_condition`; offset ~ magnitude * N(0, I).
    static AffineShift random(Eigen::Index dim, double magnitude, std::uint64_t seed,
                              double max_condition = 10.0);

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return matrix * x + offset; }
    double condition_number() const;
};

struct SynthConfig {
    int n_identities_source = 60;
    int n_identities_target = 60;
    int samples_per_identity = 8;
    int dim = 32;
    double centroid_std = 1.0;
    double intra_class_std = 0.3;
    int camera_count = 2;
    double camera_jitter_std = 0.05;
    /// Magnitude of the random affine shift; 0 gives the identity transform.
    double shift_magnitude = 0.5;
    int query_per_identity = 1;
    int gallery_per_identity = 2;
    std::uint64_t seed = 1;
};

struct SynthData {
    Dataset source;
    Dataset target_train;
    Dataset target_query;
    Dataset target_gallery;
    AffineShift shift;
    double separation_ratio = 0.0;
};

/// Ratio between the median pairwise distance of `centroids` (rows) and the expected
/// norm of the intra-class noise, intra_class_std * sqrt(dim). Infinite for zero noise.
double separation_ratio(const Eigen::MatrixXd& centroids, double intra_class_std);

/// Deterministic two-domain generator. Throws std::invalid_argument on invalid or
/// degenerate configurations (separation ratio <= 1).
SynthData generate_synthetic(const SynthConfig& cfg);
/// As above with an explicit target shift (e.g. AffineShift::identity for the no-shift case).
SynthData generate_synthetic(const SynthConfig& cfg, const AffineShift& shift);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long record, long line)
        : std::runtime_error(what), record_(record), line_(line) {}
    /// Zero-based record index, or -1 for header errors.
    long record() const { return record_; }
    long line() const { return line_; }

private:
    long record_;
    long line_;
};

Dataset read_feature_stream(std::istream& in);
Dataset load_feature_file(const std::filesystem::path& path);
void write_feature_stream(std::ostream& out, const Dataset& ds);
void write_feature_file(const std::filesystem::path& path, const Dataset& ds);

/// Shuffles identities by `seed` and partitions them into `n_tasks` groups whose sizes
/// differ by at most one (remainder on the first tasks).
TaskStream split_stream(const Dataset& target_train, int n_tasks, std::uint64_t seed);

/// Subset of `ds` whose identity is in `ids`, original order preserved.
Dataset filter_identities(const Dataset& ds, const std::vector<int>& ids);

}  // namespace s2p
