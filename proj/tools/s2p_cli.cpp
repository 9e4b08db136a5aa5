// Command-line front end: runs, ablation grids, seed sweeps, evaluation, data
// generation, curve export and log audits.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "s2p/experiment.hpp"

namespace {

using namespace s2p;

std::filesystem::path output_root() {
    if (const char* env = std::getenv("S2P_OUTPUT_ROOT")) return env;
    return "s2p_out";
}

std::filesystem::path resolve_out(const std::string& out, const char* command) {
    return out.empty() ? output_root() / command : std::filesystem::path(out);
}

// Leftover arguments must be `--key value` pairs naming config keys.
ConfigOverrides collect_overrides(const std::vector<std::string>& rest) {
    ConfigOverrides out;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const auto& a = rest[i];
        if (a.rfind("--", 0) != 0) throw ConfigError("", "command line", "unexpected argument '" + a + "'");
        std::string key = a.substr(2);
        std::string value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key.erase(eq);
        } else {
            if (i + 1 >= rest.size()) throw ConfigError(key, "--" + key, "missing value");
            value = rest[++i];
        }
        if (!is_config_key(key)) throw ConfigError(key, "--" + key, "unknown key");
        out.emplace_back(key, value);
    }
    return out;
}

void print_summary(const ExperimentResult& res) {
    std::cout << summary_csv(res.cells);
    for (const auto& f : res.failures) std::cerr << "failed: " << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online unsupervised domain adaptation with source-guided similarity preservation"};
    app.require_subcommand(1);

    std::string config_file, out, axes, seeds = "1,2,3";

    auto* run_cmd = app.add_subcommand("run", "pretrain and adapt over the task stream");
    auto* grid_cmd = app.add_subcommand("grid", "ablation grid over boolean/enum keys x seeds");
    auto* sweep_cmd = app.add_subcommand("sweep", "one configuration over several seeds");
    for (auto* c : {run_cmd, grid_cmd, sweep_cmd}) {
        c->add_option("--config", config_file, "key = value config file");
        c->add_option("--out", out, "output directory (default $S2P_OUTPUT_ROOT/<command>)");
        c->allow_extras();
    }
    grid_cmd->add_option("--axes", axes, "comma-separated axes, each 'key' or 'key=v1|v2'")->required();
    grid_cmd->add_option("--seeds", seeds, "comma-separated seeds");
    sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds");

    auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic two-domain data set as feature files");
    gen_cmd->add_option("--config", config_file, "key = value config file");
    gen_cmd->add_option("--out", out, "output directory");
    gen_cmd->allow_extras();

    std::string checkpoint, query_file, gallery_file, model = "teacher";
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on query/gallery feature files");
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--query", query_file)->required();
    eval_cmd->add_option("--gallery", gallery_file)->required();
    eval_cmd->add_option("--model", model, "tensor prefix in the checkpoint (teacher|student)");

    std::vector<std::string> run_specs;
    auto* curves_cmd = app.add_subcommand("emit-curves", "long-format mAP-per-task CSV from run logs");
    curves_cmd->add_option("--run", run_specs, "label=run_dir (repeatable)")->required();
    curves_cmd->add_option("--out", out, "output CSV file")->required();

    std::string audit_dir;
    auto* audit_cmd = app.add_subcommand("audit", "recompute summaries and loss totals from logs");
    audit_cmd->add_option("dir", audit_dir, "grid/sweep directory or single run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            const RunConfig cfg = parse_config(config_file, collect_overrides(run_cmd->remaining()));
            const auto dir = resolve_out(out, "run");
            const RunLog log = cmd_run(cfg, dir);
            const auto r = summarize(log);
            std::cout << "final_map " << format_double(r.final_map) << "\nfinal_rank1 " << format_double(r.final_rank1)
                      << "\nforgetting " << format_double(r.forgetting) << "\nlogs " << dir.string() << '\n';
            return r.audit_failures == 0 ? 0 : 2;
        }
        if (grid_cmd->parsed() || sweep_cmd->parsed()) {
            auto* cmd = grid_cmd->parsed() ? grid_cmd : sweep_cmd;
            const RunConfig cfg = parse_config(config_file, collect_overrides(cmd->remaining()));
            const auto seed_list = parse_seed_list(seeds);
            ExperimentResult res;
            if (grid_cmd->parsed()) {
                std::vector<GridAxis> grid;
                std::stringstream ss(axes);
                std::string a;
                while (std::getline(ss, a, ',')) grid.push_back(parse_axis(a));
                res = cmd_grid(cfg, grid, seed_list, resolve_out(out, "grid"));
            } else {
                res = cmd_sweep(cfg, seed_list, resolve_out(out, "sweep"));
            }
            print_summary(res);
            return res.exit_code();
        }
        if (gen_cmd->parsed()) {
            const RunConfig cfg = parse_config(config_file, collect_overrides(gen_cmd->remaining()));
            const auto dir = resolve_out(out, "data");
            const auto synth = generate_synthetic(cfg.synth);
            write_run_data(dir, {synth.source, synth.target_train, synth.target_query, synth.target_gallery});
            std::cout << "separation_ratio " << format_double(synth.separation_ratio) << "\nshift_condition "
                      << format_double(synth.shift.condition_number()) << "\ndata " << dir.string() << '\n';
            return 0;
        }
        if (eval_cmd->parsed()) {
            std::ifstream in(checkpoint, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint);
            const auto net = mlp_from_checkpoint(read_checkpoint_tensors(in), model);
            const auto rep = evaluate(load_feature_file(query_file), load_feature_file(gallery_file), net);
            std::cout << "map " << format_double(rep.map_score) << "\nrank1 " << format_double(rep.rank(1))
                      << "\nrank5 " << format_double(rep.rank(5)) << "\nrank10 " << format_double(rep.rank(10))
                      << "\nn_queries " << rep.n_queries << "\nn_excluded " << rep.n_excluded << '\n';
            return 0;
        }
        if (curves_cmd->parsed()) {
            std::vector<LabeledRun> runs;
            for (const auto& spec : run_specs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) throw std::invalid_argument("--run expects label=run_dir, got '" + spec + "'");
                runs.push_back({spec.substr(0, eq), spec.substr(eq + 1)});
            }
            const std::string csv = emit_curves(runs);
            write_text(out, csv);
            return 0;
        }
        if (audit_cmd->parsed()) {
            const std::filesystem::path dir(audit_dir);
            AuditReport rep;
            if (std::filesystem::exists(dir / "runs.csv")) {
                rep = audit_experiment(dir);
            } else {
                rep.checked_runs = 1;
                rep.problems = audit_losses(dir);
                const auto r = recompute_result(dir);
                std::ostringstream expect;
                expect << kResultHeader << '\n'
                       << format_double(r.final_map) << ',' << format_double(r.final_rank1) << ','
                       << format_double(r.forgetting) << ',' << r.audits_passed << ',' << r.audit_failures << '\n';
                if (expect.str() != read_text(dir / "result.csv")) rep.problems.push_back("result.csv differs from recomputation");
                if (r.audit_failures > 0) rep.problems.push_back("privacy audit failures recorded");
            }
            for (const auto& p : rep.problems) std::cerr << "audit: " << p << '\n';
            std::cout << "checked_runs " << rep.checked_runs << "\nstatus " << (rep.ok() ? "ok" : "FAILED") << '\n';
            return rep.ok() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
