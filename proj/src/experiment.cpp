#include "s2p/experiment.hpp"

#include <algorithm>
#include <sstream>

namespace s2p {

namespace {

const std::vector<std::pair<std::string, std::vector<std::string>>>& axis_domains() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> d = {
        {"enable_kd", {"false", "true"}},
        {"enable_mmd", {"false", "true"}},
        {"accumulate_support", {"false", "true"}},
        {"shared_batch", {"false", "true"}},
        {"support_mode", {"full_source", "rank1_nn", "identity_expanded"}},
        {"teacher_mode", {"task_frozen", "task_ema", "iter_ema"}},
        {"reid_mode", {"spcl", "strong_baseline"}},
    };
    return d;
}

}  // namespace

GridAxis parse_axis(const std::string& spec) {
    const auto eq = spec.find('=');
    GridAxis axis;
    axis.key = spec.substr(0, eq);
    const std::vector<std::string>* domain = nullptr;
    for (const auto& [k, v] : axis_domains())
        if (k == axis.key) domain = &v;
    if (!domain)
        throw ConfigError(axis.key, "--axes", "not a grid axis (boolean or enum keys only)");
    if (eq == std::string::npos) {
        axis.values = *domain;
        return axis;
    }
    std::stringstream ss(spec.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, '|')) {
        if (std::find(domain->begin(), domain->end(), v) == domain->end())
            throw ConfigError(axis.key, "--axes", "invalid value '" + v + "'");
        axis.values.push_back(v);
    }
    if (axis.values.empty()) throw ConfigError(axis.key, "--axes", "no values");
    return axis;
}

std::vector<std::vector<std::pair<std::string, std::string>>> grid_cells(const std::vector<GridAxis>& axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
    for (const auto& axis : axes) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& c : cells)
            for (const auto& v : axis.values) {
                auto e = c;
                e.emplace_back(axis.key, v);
                next.push_back(std::move(e));
            }
        cells = std::move(next);
    }
    return cells;
}

std::string cell_name(const std::vector<std::pair<std::string, std::string>>& cell) {
    if (cell.empty()) return "base";
    std::string s;
    for (const auto& [k, v] : cell) s += (s.empty() ? "" : "__") + k + "-" + v;
    return s;
}

RunLog cmd_run(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const RunData data = load_run_data(cfg);
    RunOptions opts;
    if (cfg.checkpoints) opts.checkpoint_dir = out_dir / "checkpoints";
    RunLog log = run(cfg, data, opts);
    write_run_log(out_dir, log);
    return log;
}

ExperimentResult cmd_grid(const RunConfig& base, const std::vector<GridAxis>& axes,
                          const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir) {
    if (seeds.empty()) throw std::invalid_argument("grid: no seeds");
    std::filesystem::create_directories(out_dir);
    const RunData data = load_run_data(base);
    ExperimentResult res;
    for (const auto& cell : grid_cells(axes)) {
        CellSummary summary{cell_name(cell), {}, {}};
        RunConfig cfg = base;
        for (const auto& [k, v] : cell) set_config_value(cfg, k, v, "--axes");
        for (auto seed : seeds) {
            cfg.seed = seed;
            const auto dir = out_dir / summary.cell / ("seed_" + std::to_string(seed));
            try {
                validate_config(cfg);
                RunOptions opts;
                if (cfg.checkpoints) opts.checkpoint_dir = dir / "checkpoints";
                const RunLog log = run(cfg, data, opts);
                write_run_log(dir, log);
                summary.seeds.push_back(seed);
                summary.runs.push_back(summarize(log));
            } catch (const std::exception& e) {
                res.failures.push_back(summary.cell + " seed " + std::to_string(seed) + ": " + e.what());
            }
        }
        if (!summary.runs.empty()) res.cells.push_back(std::move(summary));
    }
    write_text(out_dir / "runs.csv", runs_csv(res.cells));
    write_text(out_dir / "summary.csv", summary_csv(res.cells));
    return res;
}

ExperimentResult cmd_sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                           const std::filesystem::path& out_dir) {
    return cmd_grid(base, {}, seeds, out_dir);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t pos = 0;
        const auto v = std::stoull(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("invalid seed '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty seed list");
    return out;
}

void write_run_data(const std::filesystem::path& dir, const RunData& data) {
    std::filesystem::create_directories(dir);
    write_feature_file(dir / "source_train.txt", data.source);
    write_feature_file(dir / "target_train.txt", data.target_train);
    write_feature_file(dir / "target_query.txt", data.target_query);
    write_feature_file(dir / "target_gallery.txt", data.target_gallery);
}

}  // namespace s2p
