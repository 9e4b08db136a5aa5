#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s2p/trainer.hpp"

namespace s2p {

// CSV headers; locked by golden-file tests.
inline constexpr const char* kLossesHeader = "task,iteration,l_reid,l_kd,l_mmd,total,lr,sigma_mmd";
inline constexpr const char* kEvalHeader = "task,map,rank1,rank5,rank10,n_queries,n_excluded";
inline constexpr const char* kSlicesHeader = "task,slice,map";
inline constexpr const char* kClustersHeader = "task,epoch,n_clusters,outlier_fraction,eps,degenerate_centroids,effective_p";
inline constexpr const char* kResultHeader = "final_map,final_rank1,forgetting,audits_passed,audit_failures";
inline constexpr const char* kSummaryHeader =
    "cell,n_seeds,final_map_mean,final_map_std,final_rank1_mean,final_rank1_std,forgetting_mean,forgetting_std";
inline constexpr const char* kRunsHeader = "cell,seed,final_map,final_rank1,forgetting";
inline constexpr const char* kCurvesHeader = "task,method,map";

/// Writes config.txt, losses.csv, eval.csv, slices.csv, clusters.csv, result.csv and
/// timings.txt into `dir`. Every file except timings.txt is a pure function of the run.
void write_run_log(const std::filesystem::path& dir, const RunLog& log);

/// Final metrics of one run, as persisted in result.csv.
struct RunResult {
    double final_map = 0.0;
    double final_rank1 = 0.0;
    double forgetting = 0.0;  // 0 for single-task runs
    int audits_passed = 0;
    int audit_failures = 0;
};

RunResult summarize(const RunLog& log);

/// Per-task evaluation rows read back from a run directory.
struct PersistedEval {
    std::vector<int> tasks;
    std::vector<double> map;
    std::vector<double> rank1;
    std::vector<std::vector<double>> slice_map;  // [task][slice], tasks in file order
};

PersistedEval read_eval(const std::filesystem::path& run_dir);
/// Recomputes final mAP, Rank-1 and forgetting from eval.csv and slices.csv.
RunResult recompute_result(const std::filesystem::path& run_dir);

struct CellSummary {
    std::string cell;
    std::vector<std::uint64_t> seeds;
    std::vector<RunResult> runs;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& v);

std::string summary_csv(const std::vector<CellSummary>& cells);
std::string runs_csv(const std::vector<CellSummary>& cells);

struct LabeledRun {
    std::string label;
    std::filesystem::path dir;
};

/// Long-format (task, method, mAP) rows for every run, task 0 included. Throws on an
/// empty list, duplicate labels or a run whose eval.csv is missing tasks.
std::string emit_curves(const std::vector<LabeledRun>& runs);

struct AuditReport {
    int checked_runs = 0;
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

/// Verifies an experiment directory written by the grid/sweep commands: summary.csv and
/// runs.csv must equal their recomputation from the per-run logs, and every logged total
/// loss must equal its weighted components.
AuditReport audit_experiment(const std::filesystem::path& dir);

/// Checks loss accounting in one run directory.
std::vector<std::string> audit_losses(const std::filesystem::path& run_dir);

std::string read_text(const std::filesystem::path& p);
void write_text(const std::filesystem::path& p, const std::string& text);

}  // namespace s2p
