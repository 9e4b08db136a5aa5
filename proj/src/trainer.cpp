#include "s2p/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>

namespace s2p {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Seed tags for the generator hierarchy.
enum SeedTag : std::uint64_t {
    kInitStudent = 1,
    kInitHead = 2,
    kPretrainSampler = 3,
    kStream = 11,
    kTaskBase = 1000,
};

std::vector<int> index_labels(const Dataset& ds, const std::vector<int>& sorted_ids) {
    std::vector<int> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples)
        out.push_back(int(std::lower_bound(sorted_ids.begin(), sorted_ids.end(), s.identity) - sorted_ids.begin()));
    return out;
}

int iterations_per_epoch(Eigen::Index n_samples, int batch) {
    return std::max(1, int((n_samples + batch - 1) / batch));
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<int>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(v[i]);
    return out;
}

FeatureMatrix gather_rows(const FeatureMatrix& m, const std::vector<int>& idx) {
    FeatureMatrix out(Eigen::Index(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(idx[i]);
    return out;
}

}  // namespace

RunData load_run_data(const RunConfig& cfg) {
    if (cfg.data_dir.empty()) {
        auto synth = generate_synthetic(cfg.synth);
        return {std::move(synth.source), std::move(synth.target_train), std::move(synth.target_query),
                std::move(synth.target_gallery)};
    }
    const std::filesystem::path dir(cfg.data_dir);
    RunData d{load_feature_file(dir / "source_train.txt"), load_feature_file(dir / "target_train.txt"),
              load_feature_file(dir / "target_query.txt"), load_feature_file(dir / "target_gallery.txt")};
    if (d.source.domain != Domain::Source || d.target_train.domain != Domain::Target ||
        d.target_query.domain != Domain::Target || d.target_gallery.domain != Domain::Target)
        throw std::invalid_argument("data_dir: unexpected DOMAIN header in one of the feature files");
    const auto dim = d.source.dim();
    if (d.target_train.dim() != dim || d.target_query.dim() != dim || d.target_gallery.dim() != dim)
        throw std::invalid_argument("data_dir: feature files disagree on D_IN");
    return d;
}

std::uint64_t descriptor_fingerprint(const Eigen::VectorXd& descriptor) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(descriptor.data());
    for (std::size_t i = 0; i < std::size_t(descriptor.size()) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

AuditResult audit_target_retention(const RunState& state, const std::unordered_set<std::uint64_t>& seen_target) {
    AuditResult r;
    for (const auto& e : state.support.entries) {
        if (e.sample.domain != Domain::Source) {
            r.ok = false;
            r.message = "support set holds a target-domain entry (identity " + std::to_string(e.sample.identity) + ")";
            return r;
        }
        if (seen_target.count(descriptor_fingerprint(e.sample.descriptor))) {
            r.ok = false;
            r.message = "support set holds a descriptor identical to a past target sample";
            return r;
        }
    }
    if (state.memory.holds_target()) {
        r.ok = false;
        r.message = "hybrid memory still holds target cluster or outlier slots";
    }
    return r;
}

PretrainResult pretrain_source(const Dataset& source, const RunConfig& cfg, RunLog* log) {
    if (source.empty()) throw std::invalid_argument("pretrain_source: empty source dataset");
    const auto t0 = Clock::now();
    PretrainResult out{Mlp<double>::random(cfg.layer_dims(int(source.dim())), derive_seed(cfg.seed, kInitStudent)), {}};
    const auto ids = source.identities();
    out.head.reset(cfg.feature_dim, int(ids.size()), derive_seed(cfg.seed, kInitHead));
    if (cfg.pretrain_epochs == 0) return out;
    if (ids.size() < 2) throw std::invalid_argument("pretrain_source: need at least two source identities");

    const auto labels = index_labels(source, ids);
    const int p = std::min<int>(cfg.P, int(ids.size()));
    PkSampler sampler(labels, p, cfg.K, derive_seed(cfg.seed, kPretrainSampler));
    const int per_epoch = iterations_per_epoch(source.size(), sampler.batch_size());
    const long total = long(per_epoch) * cfg.pretrain_epochs;

    AdamConfig ac{cfg.pretrain_lr, cfg.weight_decay};
    AdamState<double> adam(out.student.params(), ac);
    AdamState<double> head_adam(out.head.params, ac);
    const FeatureMatrix x_all = source.descriptors();
    for (long it = 0; it < total; ++it) {
        const auto idx = sampler.next();
        const auto batch_labels = gather(labels, idx);
        Mlp<double>::Cache cache;
        const FeatureMatrix z = out.student.forward(gather_rows(x_all, idx), &cache);
        const auto ce = cross_entropy_loss(out.head.logits(z), batch_labels);
        FeatureMatrix dz;
        auto head_grads = out.head.backward(z, ce.grad, dz);
        const auto tri = triplet_loss(z, batch_labels, cfg.triplet_margin);
        dz += tri.grad;
        const auto grads = out.student.backward(cache, dz);
        const double pos = double(it) / double(total);
        adam_step(out.student.mutable_params(), grads, adam, pos);
        adam_step(out.head.params, head_grads, head_adam, pos);
    }
    if (log) log->timings.emplace_back("pretrain", seconds_since(t0));
    return out;
}

EvalRecord evaluate_teacher(const Mlp<double>& model, const EvalContext& ctx, int task) {
    EvalRecord rec;
    rec.task = task;
    rec.report = evaluate(ctx.query, ctx.gallery, model);
    for (const auto& slice : ctx.slices)
        rec.slice_map.push_back(slice.empty() ? 0.0 : evaluate(slice, ctx.gallery, model).map_score);
    return rec;
}

void adapt_task(RunState& state, const Dataset& task, const Dataset& source, const RunConfig& cfg,
                const EvalContext& eval, RunLog& log) {
    if (task.empty()) throw std::invalid_argument("adapt_task: empty task");
    if (state.teacher.model.dims() != state.student.dims())
        throw std::logic_error("adapt_task: teacher is not congruent to the student");
    const auto t0 = Clock::now();
    const int task_no = state.task_index + 1;
    const std::uint64_t task_seed = derive_seed(cfg.seed, kTaskBase + std::uint64_t(task_no));
    Rng rng(derive_seed(task_seed, 0));

    const auto source_ids = source.identities();
    const auto source_labels = index_labels(source, source_ids);
    const int n_source = int(source_ids.size());
    const FeatureMatrix x_source = source.descriptors();
    const FeatureMatrix x_task = task.descriptors();

    // Learning-rate schedule and Adam moments restart with every task.
    const int batch = cfg.P * cfg.K;
    const int per_epoch = iterations_per_epoch(task.size(), batch);
    const long total = long(per_epoch) * cfg.epochs_per_task;
    const AdamConfig ac{cfg.lr, cfg.weight_decay};
    AdamState<double> adam(state.student.params(), ac);

    const bool use_kd = cfg.enable_kd && !state.support.empty();
    const Dataset support = state.support.as_dataset();
    const FeatureMatrix x_support = use_kd ? support.descriptors() : FeatureMatrix();
    std::optional<PkSampler> support_sampler;
    if (use_kd) {
        const auto sup_ids = support.identities();
        support_sampler.emplace(index_labels(support, sup_ids), std::min<int>(cfg.P, int(sup_ids.size())), cfg.K,
                                derive_seed(task_seed, 1));
    }

    PkSampler source_sampler(source_labels, std::min(cfg.P, n_source), cfg.K, derive_seed(task_seed, 2));
    state.memory.momentum = cfg.memory_momentum;
    state.memory.temperature = cfg.memory_temperature;

    long it = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        // Pseudo-labels from teacher features.
        const FeatureMatrix f_task = state.teacher.model.forward(x_task);
        const auto assignment = dbscan(f_task, cfg.dbscan);
        if (assignment.n_clusters == 0)
            throw std::runtime_error("adapt_task: task " + std::to_string(task_no) + " epoch " + std::to_string(epoch) +
                                     " produced no clusters (" + clustering_report(assignment) + ")");
        MemoryReport mem_report;
        state.memory = rebuild_memory(state.memory, source, state.teacher.model.forward(x_source), f_task, assignment,
                                      &mem_report);
        const auto target_slots = state.memory.target_slots(assignment);

        // Sampler labels: clusters, plus (SpCL) one singleton label per outlier.
        std::vector<int> target_labels = assignment.labels;
        if (cfg.reid_mode == ReidMode::SpCL) {
            int next = assignment.n_clusters;
            for (auto& l : target_labels)
                if (l == kOutlier) l = next++;
        }
        const int n_target_labels = cfg.reid_mode == ReidMode::SpCL
                              ? assignment.n_clusters + int(assignment.n_outliers())
                              : assignment.n_clusters;
        const int p_target = std::min(cfg.P, n_target_labels);
        PkSampler target_sampler(target_labels, p_target, cfg.K, derive_seed(task_seed, 100 + epoch));

        ClassifierHead<double> head;
        AdamState<double> head_adam;
        if (cfg.reid_mode == ReidMode::StrongBaseline) {
            // Source rows carry over; cluster rows start fresh every clustering round.
            head.reset(cfg.feature_dim, n_source + assignment.n_clusters, derive_seed(task_seed, 200 + epoch));
            head.params.tensors[0].topRows(n_source) = state.head.weight();
            head.params.tensors[1].topRows(n_source) = state.head.bias();
            head_adam = AdamState<double>(head.params, ac);
        }

        log.clusters.push_back({task_no, epoch, assignment.n_clusters, assignment.outlier_fraction(), assignment.eps,
                                mem_report.degenerate_centroids, p_target});

        for (int step = 0; step < per_epoch; ++step, ++it) {
            const double pos = double(it) / double(total);
            LossRecord rec;
            rec.task = task_no;
            rec.iteration = it;
            rec.lr = scheduled_lr(cfg.lr, pos);

            const auto src_idx = source_sampler.next();
            const auto tgt_idx = target_sampler.next();
            const Eigen::Index ns = Eigen::Index(src_idx.size()), nt = Eigen::Index(tgt_idx.size());
            FeatureMatrix x(ns + nt, x_task.cols());
            x.topRows(ns) = gather_rows(x_source, src_idx);
            x.bottomRows(nt) = gather_rows(x_task, tgt_idx);

            Mlp<double>::Cache cache;
            const FeatureMatrix z = state.student.forward(x, &cache);
            FeatureMatrix dz;
            GradientSet<double> head_grads;
            std::vector<int> slots;
            if (cfg.reid_mode == ReidMode::SpCL) {
                for (int i : src_idx) slots.push_back(state.memory.source_slot(source.samples[i].identity));
                for (int i : tgt_idx) slots.push_back(target_slots[i]);
                const auto r = contrastive_loss(z, slots, state.memory);
                rec.l_reid = r.value;
                dz = r.grad;
            } else {
                std::vector<int> labels;
                for (int i : src_idx) labels.push_back(source_labels[i]);
                for (int i : tgt_idx) labels.push_back(n_source + assignment.labels[i]);
                const auto ce = cross_entropy_loss(head.logits(z), labels);
                head_grads = head.backward(z, ce.grad, dz);
                const auto tri = triplet_loss(z, labels, cfg.triplet_margin);
                rec.l_reid = ce.value + tri.value;
                dz += tri.grad;
            }
            GradientSet<double> grads = state.student.backward(cache, dz);

            if (use_kd) {
                const auto sidx = support_sampler->next();
                const FeatureMatrix xs = gather_rows(x_support, sidx);
                Mlp<double>::Cache kd_cache;
                const FeatureMatrix fs = state.student.forward(xs, &kd_cache);
                const FeatureMatrix ft = state.teacher.model.forward(xs);
                const auto kd = kd_loss_features(ft, fs);
                rec.l_kd = kd.value;
                grads += state.student.backward(kd_cache, cfg.lambda_kd * kd.grad);
            }

            if (cfg.enable_mmd) {
                std::vector<int> ms, mt;
                if (cfg.shared_batch) {
                    const auto n = std::min(src_idx.size(), tgt_idx.size());
                    ms.assign(src_idx.begin(), src_idx.begin() + n);
                    mt.assign(tgt_idx.begin(), tgt_idx.begin() + n);
                } else {
                    ms = random_batch(int(source.size()), batch, rng);
                    mt = random_batch(int(task.size()), batch, rng);
                }
                const FeatureMatrix bt = state.teacher.model.forward(gather_rows(x_source, ms));
                Mlp<double>::Cache mmd_cache;
                const FeatureMatrix bs = state.student.forward(gather_rows(x_task, mt), &mmd_cache);
                const auto mmd = mmd_loss(bt, bs);
                rec.l_mmd = mmd.value;
                rec.sigma_mmd = mmd.sigma;
                grads += state.student.backward(mmd_cache, cfg.lambda_mmd * mmd.grad);
            }

            rec.total = rec.l_reid + cfg.lambda_kd * rec.l_kd + cfg.lambda_mmd * rec.l_mmd;
            adam_step(state.student.mutable_params(), grads, adam, pos);
            if (cfg.reid_mode == ReidMode::StrongBaseline) adam_step(head.params, head_grads, head_adam, pos);
            else state.memory.momentum_update(z, slots);
            if (cfg.teacher_mode == TeacherMode::IterEMA) state.teacher.update(state.student);
            log.losses.push_back(rec);
            ++state.iteration;
        }
        if (cfg.reid_mode == ReidMode::StrongBaseline) {
            state.head.params.tensors[0] = head.weight().topRows(n_source);
            state.head.params.tensors[1] = head.bias().topRows(n_source);
        }
    }

    switch (cfg.teacher_mode) {
        case TeacherMode::TaskFrozen: state.teacher.model = state.student; break;
        case TeacherMode::TaskEMA: state.teacher.update(state.student); break;
        case TeacherMode::IterEMA: break;
    }

    // Nothing derived from this task's samples survives except the source support set.
    state.memory.clear_target();
    SupportSet next = select_support(task, source, state.student, cfg.support_mode, task_no);
    state.support = cfg.accumulate_support ? merge_support(state.support, next, std::size_t(cfg.support_cap))
                                           : std::move(next);
    state.task_index = task_no;
    log.timings.emplace_back("task" + std::to_string(task_no) + ".train", seconds_since(t0));

    const auto t1 = Clock::now();
    log.evals.push_back(evaluate_teacher(state.teacher.model, eval, task_no));
    log.timings.emplace_back("task" + std::to_string(task_no) + ".eval", seconds_since(t1));
}

RunLog run(const RunConfig& cfg, const RunData& data, const RunOptions& options) {
    validate_config(cfg);
    RunLog log;
    log.config = cfg;
    const auto t0 = Clock::now();

    TaskStream stream = split_stream(data.target_train, cfg.n_tasks, derive_seed(cfg.seed, kStream));
    EvalContext ctx{data.target_query, data.target_gallery, {}};
    for (const auto& t : stream.tasks) ctx.slices.push_back(filter_identities(data.target_query, t.identities()));

    auto pre = pretrain_source(data.source, cfg, &log);
    RunState state;
    state.student = pre.student;
    state.head = std::move(pre.head);
    state.teacher = TeacherState(std::move(pre.student), cfg.alpha);
    state.memory.momentum = cfg.memory_momentum;
    state.memory.temperature = cfg.memory_temperature;
    log.evals.push_back(evaluate_teacher(state.teacher.model, ctx, 0));

    if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);
    std::unordered_set<std::uint64_t> seen_target;
    for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
        {
            // The task's samples go out of scope at the end of this block.
            const Dataset task = std::move(stream.tasks[k]);
            stream.tasks[k] = Dataset{};
            adapt_task(state, task, data.source, cfg, ctx, log);
            for (const auto& s : task.samples) seen_target.insert(descriptor_fingerprint(s.descriptor));
        }
        const auto audit = audit_target_retention(state, seen_target);
        if (audit.ok) ++log.audits_passed;
        else log.audit_failures.push_back("task " + std::to_string(k + 1) + ": " + audit.message);
        if (options.checkpoint_dir)
            save_checkpoint(*options.checkpoint_dir / ("task" + std::to_string(k + 1) + ".ckpt"),
                            {{"student", &state.student.params()}, {"teacher", &state.teacher.model.params()}});
    }

    if (stream.tasks.size() >= 2) {
        std::vector<std::vector<double>> slice_map;
        for (const auto& e : log.evals)
            if (e.task > 0) slice_map.push_back(e.slice_map);
        log.forgetting = forgetting_metrics(slice_map);
    }
    log.timings.emplace_back("total", seconds_since(t0));
    return log;
}

}  // namespace s2p
