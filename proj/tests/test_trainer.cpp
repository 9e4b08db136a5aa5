#include <doctest.h>

#include <fstream>
#include <sstream>

#include "s2p/runlog.hpp"
#include "s2p/trainer.hpp"
#include "test_common.hpp"

using namespace s2p;

namespace {

RunConfig small_config() {
    RunConfig c;
    c.n_tasks = 3;
    c.epochs_per_task = 2;
    c.pretrain_epochs = 3;
    c.P = 4;
    c.K = 4;
    c.alpha = 0.9;
    c.hidden_dims = {24};
    c.feature_dim = 12;
    c.synth.n_identities_source = 18;
    c.synth.n_identities_target = 18;
    c.synth.dim = 16;
    return c;
}

std::string checkpoint_bytes(const Mlp<double>& m) {
    std::ostringstream out;
    write_checkpoint(out, {{"student", &m.params()}});
    return out.str();
}

}  // namespace

TEST_CASE("pretraining on a separable source retrieves the source split") {
    RunConfig c;
    c.pretrain_epochs = 20;
    c.synth.intra_class_std = 0.3;
    const auto data = load_run_data(c);
    const auto pre = pretrain_source(data.source, c);
    Dataset query, gallery;
    query.domain = gallery.domain = Domain::Source;
    std::vector<bool> taken(1000, false);
    for (const auto& s : data.source.samples) {
        if (!taken[std::size_t(s.identity)]) {
            taken[std::size_t(s.identity)] = true;
            query.samples.push_back(s);
        } else {
            gallery.samples.push_back(s);
        }
    }
    CHECK(evaluate(query, gallery, pre.student).map_score >= 0.95);
}

TEST_CASE("zero pretraining epochs return the initialization; seeds are reproducible") {
    auto c = small_config();
    const auto data = load_run_data(c);
    c.pretrain_epochs = 0;
    const auto zero = pretrain_source(data.source, c);
    const auto init = Mlp<double>::random(c.layer_dims(int(data.source.dim())), derive_seed(c.seed, 1));
    CHECK(zero.student.params() == init.params());

    c.pretrain_epochs = 2;
    const auto a = pretrain_source(data.source, c);
    const auto b = pretrain_source(data.source, c);
    CHECK(checkpoint_bytes(a.student) == checkpoint_bytes(b.student));
    CHECK(checkpoint_bytes(a.student) != checkpoint_bytes(zero.student));
}

TEST_CASE("disabled S2P losses reduce to the plain backend") {
    auto c = small_config();
    c.enable_kd = false;
    c.enable_mmd = false;
    const auto log = run(c, load_run_data(c));
    REQUIRE_FALSE(log.losses.empty());
    for (const auto& r : log.losses) {
        CHECK(r.l_kd == 0.0);
        CHECK(r.l_mmd == 0.0);
        CHECK(r.total == r.l_reid);
    }
}

TEST_CASE("alpha 0 with per-iteration EMA keeps the teacher on the student") {
    auto c = small_config();
    c.alpha = 0.0;
    c.teacher_mode = TeacherMode::IterEMA;
    c.enable_mmd = false;
    const auto log = run(c, load_run_data(c));
    int kd_steps = 0;
    for (const auto& r : log.losses)
        if (r.task > 1) {
            CHECK(r.l_kd == 0.0);
            ++kd_steps;
        }
    CHECK(kd_steps > 0);
}

TEST_CASE("KD is active once a support set exists") {
    auto c = small_config();
    const auto log = run(c, load_run_data(c));
    bool positive = false;
    for (const auto& r : log.losses) {
        if (r.task == 1) CHECK(r.l_kd == 0.0);
        else positive |= r.l_kd > 0.0;
        CHECK(r.total == r.l_reid + c.lambda_kd * r.l_kd + c.lambda_mmd * r.l_mmd);
        CHECK(r.sigma_mmd > 0.0);
    }
    CHECK(positive);
}

TEST_CASE("run log structure, audits and forgetting") {
    auto c = small_config();
    const auto log = run(c, load_run_data(c));
    CHECK(log.evals.size() == std::size_t(c.n_tasks + 1));
    CHECK(log.audits_passed == c.n_tasks);
    CHECK(log.audit_failures.empty());
    REQUIRE(log.forgetting.has_value());
    std::vector<std::vector<double>> slices;
    for (const auto& e : log.evals) {
        CHECK(e.slice_map.size() == std::size_t(c.n_tasks));
        if (e.task > 0) slices.push_back(e.slice_map);
    }
    CHECK(forgetting_metrics(slices).score == log.forgetting->score);
    CHECK(log.clusters.size() == std::size_t(c.n_tasks * c.epochs_per_task));
    // Learning rate restarts at the configured value every task and decays linearly.
    for (const auto& r : log.losses)
        if (r.iteration == 0) CHECK(r.lr == c.lr);
}

TEST_CASE("single-task stream adapts on the whole target train set") {
    auto c = small_config();
    c.n_tasks = 1;
    const auto data = load_run_data(c);
    const auto log = run(c, data);
    CHECK(log.evals.size() == 2);
    CHECK_FALSE(log.forgetting.has_value());
    CHECK(log.audits_passed == 1);
    const int per_epoch = int((data.target_train.size() + c.P * c.K - 1) / (c.P * c.K));
    CHECK(log.losses.size() == std::size_t(per_epoch * c.epochs_per_task));
}

TEST_CASE("identical config and seed give byte-identical logs") {
    auto c = small_config();
    c.reid_mode = ReidMode::StrongBaseline;
    const auto data = load_run_data(c);
    testing::TempDir dir("determinism");
    write_run_log(dir.path / "a", run(c, data));
    write_run_log(dir.path / "b", run(c, data));
    for (const char* f : {"config.txt", "losses.csv", "eval.csv", "slices.csv", "clusters.csv", "result.csv"})
        CHECK(read_text(dir.path / "a" / f) == read_text(dir.path / "b" / f));
}

TEST_CASE("teacher modes and support modes all run") {
    for (auto tm : {TeacherMode::TaskFrozen, TeacherMode::TaskEMA, TeacherMode::IterEMA})
        for (auto sm : {SupportMode::FullSource, SupportMode::Rank1NN, SupportMode::IdentityExpanded}) {
            auto c = small_config();
            c.n_tasks = 2;
            c.epochs_per_task = 1;
            c.teacher_mode = tm;
            c.support_mode = sm;
            c.accumulate_support = sm == SupportMode::Rank1NN;
            const auto log = run(c, load_run_data(c));
            CHECK(log.audit_failures.empty());
        }
}

TEST_CASE("retention audit flags target data in the state") {
    RunState s;
    std::unordered_set<std::uint64_t> seen;
    CHECK(audit_target_retention(s, seen).ok);
    SupportEntry e;
    e.sample = {Eigen::VectorXd::Ones(3), 1, 0, Domain::Target};
    s.support.entries.push_back(e);
    CHECK_FALSE(audit_target_retention(s, seen).ok);
    s.support.entries[0].sample.domain = Domain::Source;
    seen.insert(descriptor_fingerprint(Eigen::VectorXd::Ones(3)));
    CHECK_FALSE(audit_target_retention(s, seen).ok);
    s.support.entries.clear();
    s.memory.cluster_centroids = Eigen::MatrixXd::Ones(1, 3);
    CHECK_FALSE(audit_target_retention(s, seen).ok);
}

TEST_CASE("checkpoints are written per task and reload") {
    auto c = small_config();
    c.n_tasks = 2;
    testing::TempDir dir("ckpt");
    RunOptions opts;
    opts.checkpoint_dir = dir.path;
    const auto data = load_run_data(c);
    run(c, data, opts);
    for (int k : {1, 2}) {
        std::ifstream in(dir.path / ("task" + std::to_string(k) + ".ckpt"), std::ios::binary);
        const auto tensors = read_checkpoint_tensors(in);
        const auto teacher = mlp_from_checkpoint(tensors, "teacher");
        CHECK(teacher.dims() == c.layer_dims(int(data.source.dim())));
    }
}

TEST_CASE("feature-file data directory feeds the same run as in-memory data") {
    auto c = small_config();
    c.n_tasks = 2;
    c.epochs_per_task = 1;
    const auto data = load_run_data(c);
    testing::TempDir dir("datadir");
    write_feature_file(dir.path / "source_train.txt", data.source);
    write_feature_file(dir.path / "target_train.txt", data.target_train);
    write_feature_file(dir.path / "target_query.txt", data.target_query);
    write_feature_file(dir.path / "target_gallery.txt", data.target_gallery);
    auto from_files = c;
    from_files.data_dir = dir.path.string();
    const auto loaded = load_run_data(from_files);
    CHECK(loaded.source == data.source);
    CHECK(loaded.target_gallery == data.target_gallery);
    const auto a = run(c, data), b = run(from_files, loaded);
    CHECK(summarize(a).final_map == summarize(b).final_map);
}
