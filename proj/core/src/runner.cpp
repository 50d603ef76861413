#include "a2nl/runner.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <thread>

namespace a2nl {

namespace {

std::string world_text(const WorldConfig& w) {
    std::string out;
    const auto add = [&out](const std::string& k, const std::string& v) {
        out += k + " = " + v + "\n";
    };
    char buf[40];
    add("world.L", std::to_string(w.L));
    add("world.M", std::to_string(w.M));
    add("world.d_a", std::to_string(w.d_a));
    add("world.d_v", std::to_string(w.d_v));
    std::snprintf(buf, sizeof buf, "%.17g", w.noise_sigma);
    add("world.noise_sigma", buf);
    add("world.seed", std::to_string(w.seed));
    std::snprintf(buf, sizeof buf, "%.17g", w.smooth);
    add("world.smooth", buf);
    return out;
}

WorldConfig world_from_text(const std::string& text) {
    // The stored section is a subset of RunConfig keys.
    return RunConfig::parse(text).world;
}

std::string seq_name(int i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "seq%05d", i);
    return buf;
}

TrainBatch make_batch(const std::vector<SamplePair>& dataset, const TrainConfig& tc,
                      bool mask_editing, Rng& rng) {
    TrainBatch batch;
    batch.n0.reserve(tc.batch_size);
    batch.cond.reserve(tc.batch_size);
    for (int k = 0; k < tc.batch_size; ++k) {
        const auto idx = rng.uniform_int(dataset.size());
        batch.n0.push_back(dataset[idx].target);
        batch.cond.push_back(dataset[idx].cond);
    }
    if (mask_editing) {
        const int L = batch.length();
        batch.hints.resize(batch.n0.size());
        for (auto& h : batch.hints) {
            h.resize(L);
            for (int i = 0; i < L; ++i) {
                h[i] = rng.uniform() < tc.mask_hint_prob ? 1 : 0;
            }
        }
    }
    return batch;
}

double window_mean(const std::vector<double>& xs, std::size_t begin, std::size_t count) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + count; ++i) s += xs[i];
    return s / static_cast<double>(count);
}

}  // namespace

bool same_world(const WorldConfig& a, const WorldConfig& b) {
    return world_text(a) == world_text(b);
}

void save_dataset(const std::string& path, const WorldConfig& world,
                  const std::vector<SamplePair>& pairs) {
    ArrayContainer c;
    c.config_text = world_text(world);
    c.add_scalar_i64("count", static_cast<std::int64_t>(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char prefix[32];
        std::snprintf(prefix, sizeof prefix, "pair%05zu", i);
        c.add_matrix(std::string(prefix) + ".cond", pairs[i].cond, DType::f64);
        c.add_matrix(std::string(prefix) + ".target", pairs[i].target, DType::f64);
        c.add_scalar_i64(std::string(prefix) + ".mode", pairs[i].mode);
    }
    c.save(path, kDatasetMagic);
}

std::pair<WorldConfig, std::vector<SamplePair>> load_dataset(const std::string& path) {
    const ArrayContainer c = ArrayContainer::load(path, kDatasetMagic);
    const WorldConfig world = world_from_text(c.config_text);
    const auto count = c.get_i64("count");
    std::vector<SamplePair> pairs(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        char prefix[32];
        std::snprintf(prefix, sizeof prefix, "pair%05lld", static_cast<long long>(i));
        SamplePair& p = pairs[static_cast<std::size_t>(i)];
        p.cond = c.find(std::string(prefix) + ".cond").as_matrix();
        p.target = c.find(std::string(prefix) + ".target").as_matrix();
        p.mode = static_cast<int>(c.get_i64(std::string(prefix) + ".mode"));
    }
    return {world, std::move(pairs)};
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ArrayContainer c;
    c.config_text = ckpt.config.canonical_text();
    c.add_matrix("alpha_bar", ckpt.schedule.alpha_bar, DType::f64);
    c.add_scalar_i64("T", ckpt.schedule.T);
    for (const auto& e : ckpt.model.params().entries()) {
        c.add_matrix("param." + e.name, ckpt.model.params().view(e.name), DType::f32);
    }
    if (ckpt.opt_m.size() > 0) {
        c.add_matrix("opt.m", ckpt.opt_m, DType::f32);
        c.add_matrix("opt.v", ckpt.opt_v, DType::f32);
        c.add_scalar_i64("opt.step", ckpt.opt_step);
    }
    c.add_scalar_i64("next_step", ckpt.next_step);
    c.save(path, kCheckpointMagic);
}

Checkpoint load_checkpoint(const std::string& path) {
    const ArrayContainer c = ArrayContainer::load(path, kCheckpointMagic);
    Checkpoint ckpt;
    ckpt.config = RunConfig::parse(c.config_text);
    ckpt.schedule.alpha_bar = c.find("alpha_bar").as_matrix();
    ckpt.schedule.T = static_cast<int>(c.get_i64("T"));
    ckpt.model = Denoiser(ckpt.config.model);
    for (const auto& e : ckpt.model.params().entries()) {
        const Eigen::MatrixXd stored = c.find("param." + e.name).as_matrix();
        if (stored.rows() != e.rows || stored.cols() != e.cols) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "'");
        }
        ckpt.model.params().view(e.name) = stored;
    }
    if (c.has("opt.m")) {
        ckpt.opt_m = c.find("opt.m").as_matrix();
        ckpt.opt_v = c.find("opt.v").as_matrix();
        ckpt.opt_step = c.get_i64("opt.step");
    }
    ckpt.next_step = c.get_i64("next_step");
    return ckpt;
}

TrainOutcome run_training(RunConfig cfg, PriorKind prior,
                          const std::vector<SamplePair>& dataset, Checkpoint& ckpt,
                          std::ostream* log_csv) {
    cfg.model.attention_mode =
        prior == PriorKind::ar ? AttentionMode::causal : AttentionMode::bidirectional;
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("run_training: empty dataset");

    const Rng root(cfg.seed);
    const long start_step = ckpt.next_step;
    if (start_step == 0) {
        Rng init_rng = root.split("init");
        ckpt.config = cfg;
        ckpt.model = Denoiser::init(cfg.model, init_rng);
        ckpt.schedule = build_schedule(cfg.schedule_kind, cfg.schedule_T);
        ckpt.opt_m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ckpt.model.param_count()));
        ckpt.opt_v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ckpt.model.param_count()));
        ckpt.opt_step = 0;
    } else {
        ckpt.config = cfg;
    }

    AdamConfig ac;
    ac.lr = cfg.train.lr;
    AdamState opt(ckpt.model.param_count(), ac);
    opt.m = ckpt.opt_m;
    opt.v = ckpt.opt_v;
    opt.step = ckpt.opt_step;

    TrainOpts topts;
    topts.cond_dropout = cfg.train.cond_dropout;
    topts.velocity_loss = cfg.train.velocity_loss;

    TrainOutcome outcome;
    const auto t0 = std::chrono::steady_clock::now();
    if (log_csv != nullptr) *log_csv << "step,loss,wallclock\n";

    for (long step = start_step; step < cfg.train.steps; ++step) {
        Rng batch_rng = root.split("train_batch", static_cast<std::uint64_t>(step));
        TrainBatch batch = make_batch(dataset, cfg.train, cfg.train.mask_editing, batch_rng);
        Rng draw_rng = root.split("train_draws", static_cast<std::uint64_t>(step));

        StepResult res;
        try {
            res = prior == PriorKind::ar
                      ? ar_train_step(ckpt.model, batch, opt, draw_rng)
                      : train_step(ckpt.model, batch, ckpt.schedule, opt, draw_rng, topts);
        } catch (const TrainingDiverged&) {
            throw TrainingDiverged(step);
        }
        outcome.losses.push_back(res.loss);

        if (log_csv != nullptr &&
            (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps)) {
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char line[96];
            std::snprintf(line, sizeof line, "%ld,%.17g,%.3f\n", step, res.loss, secs);
            *log_csv << line;
            outcome.log.push_back({step, res.loss, secs});
        }
    }

    ckpt.opt_m = opt.m;
    ckpt.opt_v = opt.v;
    ckpt.opt_step = opt.step;
    ckpt.next_step = cfg.train.steps;

    if (!outcome.losses.empty()) {
        const std::size_t window =
            std::min<std::size_t>(50, outcome.losses.size());
        outcome.smoothed_first = window_mean(outcome.losses, 0, window);
        outcome.smoothed_last =
            window_mean(outcome.losses, outcome.losses.size() - window, window);
    }
    return outcome;
}

EvalArtifacts evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<SamplePair>& dataset,
                                  std::uint64_t seed) {
    const RunConfig& cfg = ckpt.config;
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const int n = std::min<int>(cfg.eval.videos, static_cast<int>(dataset.size()));
    const Rng root(seed);

    std::vector<Eigen::MatrixXd> conds(n), refs(n);
    for (int i = 0; i < n; ++i) {
        conds[i] = dataset[i].cond;
        refs[i] = dataset[i].target;
    }

    SamplerConfig scfg;
    scfg.guidance = cfg.sampler.guidance;
    scfg.steps = cfg.sampler.steps;

    EvalArtifacts out;
    const bool causal = ckpt.model.config().attention_mode == AttentionMode::causal;
    if (causal) {
        out.generated.resize(n);
        parallel_for(n, [&](int i) { out.generated[i] = ar_generate(ckpt.model, conds[i]); });
    } else {
        const Rng sample_root = root.split("eval_sample");
        std::vector<Rng> streams;
        streams.reserve(n);
        for (int i = 0; i < n; ++i) {
            streams.push_back(sample_root.split("seq", static_cast<std::uint64_t>(i)));
        }
        const int threads = std::min(evaluator_threads(), n);
        if (threads <= 1) {
            out.generated =
                sample_batch_streams(ckpt.model, conds, ckpt.schedule, scfg, streams);
        } else {
            out.generated.resize(n);
            const int chunk = (n + threads - 1) / threads;
            parallel_for(threads, [&](int w) {
                const int lo = w * chunk;
                const int hi = std::min(n, lo + chunk);
                if (lo >= hi) return;
                std::vector<Eigen::MatrixXd> sub_conds(conds.begin() + lo, conds.begin() + hi);
                std::vector<Rng> sub_streams(streams.begin() + lo, streams.begin() + hi);
                auto got = sample_batch_streams(ckpt.model, sub_conds, ckpt.schedule, scfg,
                                                sub_streams);
                for (int i = lo; i < hi; ++i) out.generated[i] = std::move(got[i - lo]);
            });
        }
    }

    MetricReport& report = out.report;
    report.var = variance_metric(out.generated);
    const double fm = fid_fm(out.generated, refs, cfg.eval.paired);
    const double dfm = fid_delta_fm(out.generated, refs, cfg.eval.paired);
    report.set_fids(fm, dfm);

    const int C = std::min<int>(cfg.eval.mm_conditions, n);
    std::vector<std::vector<Eigen::MatrixXd>> runs(C);
    if (causal) {
        for (int c = 0; c < C; ++c) {
            runs[c].assign(static_cast<std::size_t>(cfg.eval.mm_runs),
                           out.generated[c]);  // deterministic rollout repeats itself
        }
    } else {
        for (int c = 0; c < C; ++c) {
            std::vector<Eigen::MatrixXd> repeat(static_cast<std::size_t>(cfg.eval.mm_runs),
                                                conds[c]);
            Rng mm_rng = root.split("eval_mm", static_cast<std::uint64_t>(c));
            runs[c] = sample_batch(ckpt.model, repeat, ckpt.schedule, scfg, mm_rng);
        }
    }
    report.multimodality = multimodality(runs);

    out.reference_var = variance_metric(refs);
    report.metadata["seed"] = std::to_string(seed);
    report.metadata["config_hash"] = cfg.hash_hex();
    report.metadata["n"] = std::to_string(n);
    return out;
}

EvalArtifacts evaluate_self(const std::vector<SamplePair>& dataset, const RunConfig& cfg,
                            std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const int n = std::min<int>(cfg.eval.videos, static_cast<int>(dataset.size()));
    std::vector<Eigen::MatrixXd> refs(n);
    for (int i = 0; i < n; ++i) refs[i] = dataset[i].target;

    EvalArtifacts out;
    out.generated = refs;
    out.report.var = variance_metric(refs);
    out.report.set_fids(fid_fm(refs, refs, cfg.eval.paired),
                        fid_delta_fm(refs, refs, cfg.eval.paired));
    out.reference_var = *out.report.var;
    out.report.metadata["seed"] = std::to_string(seed);
    out.report.metadata["config_hash"] = cfg.hash_hex();
    out.report.metadata["n"] = std::to_string(n);
    return out;
}

void save_sequences(const std::string& path, const std::string& config_text,
                    const std::vector<Eigen::MatrixXd>& seqs) {
    ArrayContainer c;
    c.config_text = config_text;
    c.add_scalar_i64("count", static_cast<std::int64_t>(seqs.size()));
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        c.add_matrix(seq_name(static_cast<int>(i)), seqs[i], DType::f64);
    }
    c.save(path, kSequenceMagic);
}

std::vector<Eigen::MatrixXd> load_sequences(const std::string& path) {
    const ArrayContainer c = ArrayContainer::load(path, kSequenceMagic);
    const auto count = c.get_i64("count");
    std::vector<Eigen::MatrixXd> seqs(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        seqs[static_cast<std::size_t>(i)] = c.find(seq_name(static_cast<int>(i))).as_matrix();
    }
    return seqs;
}

std::string frames_csv(const std::vector<Eigen::MatrixXd>& seqs, std::uint64_t seed,
                       const std::string& config_hash) {
    std::string out = "# seed=" + std::to_string(seed) + " config_hash=" + config_hash + "\n";
    const Eigen::Index dims = seqs.empty() ? 0 : seqs.front().cols();
    out += "seq,frame";
    for (Eigen::Index d = 0; d < dims; ++d) out += ",v" + std::to_string(d);
    out += '\n';
    char buf[40];
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        for (Eigen::Index f = 0; f < seqs[s].rows(); ++f) {
            out += std::to_string(s) + ',' + std::to_string(f);
            for (Eigen::Index d = 0; d < dims; ++d) {
                std::snprintf(buf, sizeof buf, ",%.17g", seqs[s](f, d));
                out += buf;
            }
            out += '\n';
        }
    }
    return out;
}

int evaluator_threads() {
    if (const char* env = std::getenv("A2NL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int threads = std::min(evaluator_threads(), n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::atomic<int> next{0};
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace a2nl
