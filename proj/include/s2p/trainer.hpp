#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "s2p/config.hpp"
#include "s2p/data.hpp"
#include "s2p/eval.hpp"
#include "s2p/extractor.hpp"
#include "s2p/pseudo.hpp"
#include "s2p/s2p.hpp"

namespace s2p {

struct RunData {
    Dataset source;
    Dataset target_train;
    Dataset target_query;
    Dataset target_gallery;
};

/// Synthetic data from cfg.synth, or the four feature files under cfg.data_dir.
RunData load_run_data(const RunConfig& cfg);

struct LossRecord {
    int task = 0;
    long iteration = 0;  // within the task
    double l_reid = 0.0;
    double l_kd = 0.0;
    double l_mmd = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double sigma_mmd = 0.0;  // 0 when MMD is disabled
};

struct EvalRecord {
    int task = 0;  // 0 = source-pretrained model before adaptation
    EvalReport report;
    std::vector<double> slice_map;  // mAP on each task's query slice
};

struct ClusterRecord {
    int task = 0;
    int epoch = 0;
    int n_clusters = 0;
    double outlier_fraction = 0.0;
    double eps = 0.0;
    int degenerate_centroids = 0;
    int effective_p = 0;
};

struct AuditResult {
    bool ok = true;
    std::string message;
};

struct RunLog {
    RunConfig config;
    std::vector<LossRecord> losses;
    std::vector<EvalRecord> evals;
    std::vector<ClusterRecord> clusters;
    std::vector<std::pair<std::string, double>> timings;  // seconds
    std::optional<ForgettingSummary> forgetting;
    int audits_passed = 0;
    std::vector<std::string> audit_failures;
};

/// Everything carried from one task to the next. Only source-domain data may persist.
struct RunState {
    Mlp<double> student;
    ClassifierHead<double> head;  // source classes during pretraining
    TeacherState teacher;
    HybridMemory memory;
    SupportSet support;
    int task_index = 0;  // tasks completed
    long iteration = 0;  // total adaptation iterations
};

/// Fingerprint of a descriptor (FNV-1a over its bytes).
std::uint64_t descriptor_fingerprint(const Eigen::VectorXd& descriptor);

/// Checks that no target-domain sample (by fingerprint) or target-derived memory slot is
/// reachable from `state`.
AuditResult audit_target_retention(const RunState& state, const std::unordered_set<std::uint64_t>& seen_target);

struct PretrainResult {
    Mlp<double> student;
    ClassifierHead<double> head;
};

/// Supervised CE + triplet training on the labeled source split.
PretrainResult pretrain_source(const Dataset& source, const RunConfig& cfg, RunLog* log = nullptr);

/// Query slices and gallery used for per-task evaluation.
struct EvalContext {
    Dataset query;
    Dataset gallery;
    std::vector<Dataset> slices;
};

EvalRecord evaluate_teacher(const Mlp<double>& model, const EvalContext& ctx, int task);

/// Adapts to one task of the stream (clustering, ReID/KD/MMD training, teacher update),
/// then builds the next support set and evaluates the teacher.
void adapt_task(RunState& state, const Dataset& task, const Dataset& source, const RunConfig& cfg,
                const EvalContext& eval, RunLog& log);

struct RunOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
};

/// Pretraining followed by adaptation over the task stream in order.
RunLog run(const RunConfig& cfg, const RunData& data, const RunOptions& options = {});

}  // namespace s2p
