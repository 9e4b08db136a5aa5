#include "s2p/runlog.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "s2p/util.hpp"

namespace s2p {

namespace {

std::string fd(double v) { return format_double(v); }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Rows of a CSV file after checking its header.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p, const char* header) {
    std::istringstream in(read_text(p));
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw std::runtime_error(p.string() + ": unexpected header (expected '" + header + "')");
    const std::size_t cols = split_csv(header).size();
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split_csv(line);
        if (row.size() != cols) throw std::runtime_error(p.string() + ": malformed row '" + line + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

double num(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw std::runtime_error("malformed number '" + s + "'");
    return v;
}

}  // namespace

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + p.string());
}

RunResult summarize(const RunLog& log) {
    if (log.evals.empty()) throw std::invalid_argument("summarize: run has no evaluations");
    RunResult r;
    r.final_map = log.evals.back().report.map_score;
    r.final_rank1 = log.evals.back().report.rank(1);
    r.forgetting = log.forgetting ? log.forgetting->score : 0.0;
    r.audits_passed = log.audits_passed;
    r.audit_failures = int(log.audit_failures.size());
    return r;
}

void write_run_log(const std::filesystem::path& dir, const RunLog& log) {
    std::filesystem::create_directories(dir);
    write_text(dir / "config.txt", config_snapshot(log.config));

    std::ostringstream losses;
    losses << kLossesHeader << '\n';
    for (const auto& r : log.losses)
        losses << r.task << ',' << r.iteration << ',' << fd(r.l_reid) << ',' << fd(r.l_kd) << ',' << fd(r.l_mmd) << ','
               << fd(r.total) << ',' << fd(r.lr) << ',' << fd(r.sigma_mmd) << '\n';
    write_text(dir / "losses.csv", losses.str());

    std::ostringstream eval, slices;
    eval << kEvalHeader << '\n';
    slices << kSlicesHeader << '\n';
    for (const auto& e : log.evals) {
        eval << e.task << ',' << fd(e.report.map_score) << ',' << fd(e.report.rank(1)) << ',' << fd(e.report.rank(5))
             << ',' << fd(e.report.rank(10)) << ',' << e.report.n_queries << ',' << e.report.n_excluded << '\n';
        for (std::size_t j = 0; j < e.slice_map.size(); ++j)
            slices << e.task << ',' << j + 1 << ',' << fd(e.slice_map[j]) << '\n';
    }
    write_text(dir / "eval.csv", eval.str());
    write_text(dir / "slices.csv", slices.str());

    std::ostringstream clusters;
    clusters << kClustersHeader << '\n';
    for (const auto& c : log.clusters)
        clusters << c.task << ',' << c.epoch << ',' << c.n_clusters << ',' << fd(c.outlier_fraction) << ',' << fd(c.eps)
                 << ',' << c.degenerate_centroids << ',' << c.effective_p << '\n';
    write_text(dir / "clusters.csv", clusters.str());

    const RunResult r = summarize(log);
    std::ostringstream result;
    result << kResultHeader << '\n'
           << fd(r.final_map) << ',' << fd(r.final_rank1) << ',' << fd(r.forgetting) << ',' << r.audits_passed << ','
           << r.audit_failures << '\n';
    write_text(dir / "result.csv", result.str());

    std::ostringstream timings;
    for (const auto& [name, secs] : log.timings) timings << name << ' ' << secs << '\n';
    for (const auto& f : log.audit_failures) timings << "audit_failure " << f << '\n';
    write_text(dir / "timings.txt", timings.str());
}

PersistedEval read_eval(const std::filesystem::path& run_dir) {
    PersistedEval pe;
    std::map<int, std::size_t> row_of;
    for (const auto& row : read_csv(run_dir / "eval.csv", kEvalHeader)) {
        const int task = int(num(row[0]));
        row_of[task] = pe.tasks.size();
        pe.tasks.push_back(task);
        pe.map.push_back(num(row[1]));
        pe.rank1.push_back(num(row[2]));
    }
    pe.slice_map.resize(pe.tasks.size());
    for (const auto& row : read_csv(run_dir / "slices.csv", kSlicesHeader)) {
        const int task = int(num(row[0]));
        const auto it = row_of.find(task);
        if (it == row_of.end()) throw std::runtime_error(run_dir.string() + ": slice row for unknown task");
        const auto slice = std::size_t(num(row[1]));
        auto& v = pe.slice_map[it->second];
        if (v.size() < slice) v.resize(slice, std::nan(""));
        v[slice - 1] = num(row[2]);
    }
    return pe;
}

RunResult recompute_result(const std::filesystem::path& run_dir) {
    const auto pe = read_eval(run_dir);
    if (pe.tasks.empty()) throw std::runtime_error(run_dir.string() + ": eval.csv has no rows");
    RunResult r;
    r.final_map = pe.map.back();
    r.final_rank1 = pe.rank1.back();
    std::vector<std::vector<double>> adapted;
    for (std::size_t i = 0; i < pe.tasks.size(); ++i)
        if (pe.tasks[i] > 0) adapted.push_back(pe.slice_map[i]);
    if (adapted.size() >= 2) r.forgetting = forgetting_metrics(adapted).score;
    const auto res = read_csv(run_dir / "result.csv", kResultHeader);
    if (res.size() != 1) throw std::runtime_error(run_dir.string() + ": result.csv must have one row");
    r.audits_passed = int(num(res[0][3]));
    r.audit_failures = int(num(res[0][4]));
    return r;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / double(v.size() - 1))};
}

std::string summary_csv(const std::vector<CellSummary>& cells) {
    std::ostringstream out;
    out << kSummaryHeader << '\n';
    for (const auto& c : cells) {
        std::vector<double> m, r1, f;
        for (const auto& r : c.runs) {
            m.push_back(r.final_map);
            r1.push_back(r.final_rank1);
            f.push_back(r.forgetting);
        }
        const auto [mm, ms] = mean_std(m);
        const auto [rm, rs] = mean_std(r1);
        const auto [fm, fs] = mean_std(f);
        out << c.cell << ',' << c.runs.size() << ',' << fd(mm) << ',' << fd(ms) << ',' << fd(rm) << ',' << fd(rs) << ','
            << fd(fm) << ',' << fd(fs) << '\n';
    }
    return out.str();
}

std::string runs_csv(const std::vector<CellSummary>& cells) {
    std::ostringstream out;
    out << kRunsHeader << '\n';
    for (const auto& c : cells)
        for (std::size_t i = 0; i < c.runs.size(); ++i)
            out << c.cell << ',' << c.seeds.at(i) << ',' << fd(c.runs[i].final_map) << ',' << fd(c.runs[i].final_rank1)
                << ',' << fd(c.runs[i].forgetting) << '\n';
    return out.str();
}

std::string emit_curves(const std::vector<LabeledRun>& runs) {
    if (runs.empty()) throw std::invalid_argument("emit_curves: no run logs given");
    std::set<std::string> labels;
    for (const auto& r : runs)
        if (!labels.insert(r.label).second)
            throw std::invalid_argument("emit_curves: duplicate method label '" + r.label + "'; labels must be distinct");
    std::ostringstream out;
    out << kCurvesHeader << '\n';
    for (const auto& r : runs) {
        const auto pe = read_eval(r.dir);
        const RunConfig cfg = parse_config(r.dir / "config.txt");
        if (int(pe.tasks.size()) != cfg.n_tasks + 1)
            throw std::runtime_error("emit_curves: run '" + r.label + "' is incomplete (" +
                                     std::to_string(pe.tasks.size()) + " of " + std::to_string(cfg.n_tasks + 1) +
                                     " evaluations)");
        for (std::size_t i = 0; i < pe.tasks.size(); ++i)
            out << pe.tasks[i] << ',' << r.label << ',' << fd(pe.map[i]) << '\n';
    }
    return out.str();
}

std::vector<std::string> audit_losses(const std::filesystem::path& run_dir) {
    std::vector<std::string> problems;
    const RunConfig cfg = parse_config(run_dir / "config.txt");
    long line = 1;
    for (const auto& row : read_csv(run_dir / "losses.csv", kLossesHeader)) {
        ++line;
        const double reid = num(row[2]), kd = num(row[3]), mmd = num(row[4]), total = num(row[5]);
        if (reid + cfg.lambda_kd * kd + cfg.lambda_mmd * mmd != total)
            problems.push_back(run_dir.string() + "/losses.csv:" + std::to_string(line) +
                               ": total does not equal weighted components");
    }
    return problems;
}

AuditReport audit_experiment(const std::filesystem::path& dir) {
    AuditReport rep;
    std::vector<CellSummary> cells;
    for (const auto& row : read_csv(dir / "runs.csv", kRunsHeader)) {
        if (cells.empty() || cells.back().cell != row[0]) cells.push_back({row[0], {}, {}});
        const std::uint64_t seed = std::stoull(row[1]);
        const auto run_dir = dir / row[0] / ("seed_" + row[1]);
        try {
            cells.back().seeds.push_back(seed);
            cells.back().runs.push_back(recompute_result(run_dir));
            for (auto& p : audit_losses(run_dir)) rep.problems.push_back(std::move(p));
            const auto& r = cells.back().runs.back();
            if (r.audit_failures > 0) rep.problems.push_back(run_dir.string() + ": privacy audit failures recorded");
            ++rep.checked_runs;
        } catch (const std::exception& e) {
            rep.problems.push_back(e.what());
        }
    }
    if (rep.problems.empty()) {
        if (runs_csv(cells) != read_text(dir / "runs.csv"))
            rep.problems.push_back("runs.csv differs from recomputation");
        if (summary_csv(cells) != read_text(dir / "summary.csv"))
            rep.problems.push_back("summary.csv differs from recomputation");
    }
    return rep;
}

}  // namespace s2p
