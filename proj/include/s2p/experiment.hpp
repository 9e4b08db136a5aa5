#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2p/runlog.hpp"

namespace s2p {

/// One grid dimension: a boolean or enum config key and the values it takes.
struct GridAxis {
    std::string key;
    std::vector<std::string> values;
};

/// Parses "key" (all values of a boolean/enum key) or "key=v1|v2".
GridAxis parse_axis(const std::string& spec);

/// Cartesian product of axis values, first axis slowest.
std::vector<std::vector<std::pair<std::string, std::string>>> grid_cells(const std::vector<GridAxis>& axes);

/// Directory-safe cell name, e.g. "enable_kd-true__enable_mmd-false"; "base" without axes.
std::string cell_name(const std::vector<std::pair<std::string, std::string>>& cell);

/// Runs one configuration and writes its log into `out_dir`.
RunLog cmd_run(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct ExperimentResult {
    std::vector<CellSummary> cells;
    std::vector<std::string> failures;
    int exit_code() const { return failures.empty() ? 0 : 1; }
};

/// Every cell of the grid for every seed, each in `<out>/<cell>/seed_<s>/`, followed by
/// `runs.csv` and `summary.csv` in `out_dir`. The data set is shared by all cells and seeds.
ExperimentResult cmd_grid(const RunConfig& base, const std::vector<GridAxis>& axes,
                          const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir);

/// A grid without axes.
ExperimentResult cmd_sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                           const std::filesystem::path& out_dir);

std::vector<std::uint64_t> parse_seed_list(const std::string& s);

/// Writes the four feature files of `data` into `dir`.
void write_run_data(const std::filesystem::path& dir, const RunData& data);

}  // namespace s2p
