#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "a2nl/runner.hpp"

namespace fs = std::filesystem;
using namespace a2nl;

namespace {

RunConfig load_config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : RunConfig::load(path);
}

Eigen::VectorXd read_value_file(const std::string& path, int expected) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open value file '" + path + "'");
    std::vector<double> values;
    double v = 0.0;
    while (is >> v) values.push_back(v);
    if (static_cast<int>(values.size()) != expected) {
        throw std::invalid_argument("value file '" + path + "' holds " +
                                    std::to_string(values.size()) + " numbers, expected " +
                                    std::to_string(expected));
    }
    Eigen::VectorXd out(expected);
    for (int i = 0; i < expected; ++i) out[i] = values[static_cast<std::size_t>(i)];
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

SamplerConfig sampler_from(const RunConfig& cfg, const std::optional<double>& guidance,
                           const std::optional<int>& steps) {
    SamplerConfig scfg;
    scfg.guidance = guidance.value_or(cfg.sampler.guidance);
    scfg.steps = steps.value_or(cfg.sampler.steps);
    scfg.seed = cfg.seed;
    return scfg;
}

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string ckpt_path;
    std::string out_path;
    std::optional<long> seed;
    std::optional<double> guidance;
    std::optional<int> steps;
};

int cmd_gen_data(const CommonArgs& args, int count) {
    RunConfig cfg = load_config_or_default(args.config_path);
    if (args.seed) cfg.world.seed = static_cast<std::uint64_t>(*args.seed);
    cfg.validate();
    if (count < 1) throw std::invalid_argument("gen-data: --count must be >= 1");

    const World world(cfg.world);
    const auto pairs = world.gen_dataset(count);
    save_dataset(args.out_path, cfg.world, pairs);
    std::cout << "wrote " << pairs.size() << " pairs to " << args.out_path << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& prior_name,
              const std::string& resume_path, const std::string& log_path,
              std::optional<int> train_steps) {
    const PriorKind prior = prior_name == "ar" ? PriorKind::ar : PriorKind::diffusion;
    const auto [world, dataset] = load_dataset(args.data_path);

    Checkpoint ckpt;
    RunConfig cfg;
    if (!resume_path.empty()) {
        ckpt = load_checkpoint(resume_path);
        cfg = ckpt.config;
    } else {
        cfg = load_config_or_default(args.config_path);
    }
    if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
    if (train_steps) cfg.train.steps = *train_steps;
    if (!same_world(cfg.world, world)) {
        throw std::invalid_argument("train: dataset world does not match the config");
    }

    std::ofstream log;
    const std::string log_file = log_path.empty() ? args.out_path + ".log.csv" : log_path;
    log.open(log_file, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open '" + log_file + "' for writing");

    const TrainOutcome outcome = run_training(cfg, prior, dataset, ckpt, &log);
    save_checkpoint(args.out_path, ckpt);
    std::cout << "trained " << outcome.losses.size() << " steps";
    if (!outcome.losses.empty()) {
        std::cout << ", smoothed loss " << outcome.smoothed_first << " -> "
                  << outcome.smoothed_last;
    }
    std::cout << "\ncheckpoint: " << args.out_path << "\nlog: " << log_file << "\n";
    return 0;
}

int cmd_sample(const CommonArgs& args, int num, int long_segments) {
    Checkpoint ckpt = load_checkpoint(args.ckpt_path);
    RunConfig cfg = ckpt.config;
    if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
    const auto [world_cfg, dataset] = load_dataset(args.data_path);
    if (!same_world(cfg.world, world_cfg)) {
        throw std::invalid_argument("sample: dataset world does not match the checkpoint");
    }
    if (num < 1) throw std::invalid_argument("sample: --num must be >= 1");
    if (num > static_cast<int>(dataset.size())) {
        throw std::invalid_argument("sample: --num exceeds the dataset size");
    }

    fs::create_directories(args.out_path);
    const SamplerConfig scfg = sampler_from(cfg, args.guidance, args.steps);
    const Rng root(cfg.seed);

    std::vector<Eigen::MatrixXd> outs;
    const bool causal = ckpt.model.config().attention_mode == AttentionMode::causal;
    if (causal) {
        for (int i = 0; i < num; ++i) outs.push_back(ar_generate(ckpt.model, dataset[i].cond));
    } else {
        std::vector<Eigen::MatrixXd> conds;
        for (int i = 0; i < num; ++i) conds.push_back(dataset[i].cond);
        Rng rng = root.split("sample");
        outs = sample_batch(ckpt.model, conds, ckpt.schedule, scfg, rng);
    }

    const fs::path dir(args.out_path);
    save_sequences((dir / "sequences.bin").string(), cfg.canonical_text(), outs);
    write_text(dir / "frames.csv", frames_csv(outs, cfg.seed, cfg.hash_hex()));

    if (long_segments > 0) {
        if (causal) throw std::invalid_argument("sample: --long needs a diffusion checkpoint");
        const World world(cfg.world);
        const int L = cfg.world.L;
        Rng cond_rng = root.split("long_cond");
        const Eigen::MatrixXd cond_long =
            world.gen_condition(cond_rng, long_segments * (L - 1) + 1);
        std::vector<Eigen::MatrixXd> segments;
        for (int k = 0; k < long_segments; ++k) {
            segments.push_back(cond_long.middleRows(k * (L - 1), L));
        }
        Rng rng = root.split("long");
        const Eigen::MatrixXd stitched =
            generate_long(ckpt.model, segments, ckpt.schedule, scfg, rng);
        save_sequences((dir / "long.bin").string(), cfg.canonical_text(), {stitched});
        write_text(dir / "long.csv", frames_csv({stitched}, cfg.seed, cfg.hash_hex()));
    }
    std::cout << "wrote " << outs.size() << " sequences to " << args.out_path << "\n";
    return 0;
}

int cmd_edit(const CommonArgs& args, int index, const std::vector<std::string>& clamps) {
    Checkpoint ckpt = load_checkpoint(args.ckpt_path);
    RunConfig cfg = ckpt.config;
    if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
    const auto [world_cfg, dataset] = load_dataset(args.data_path);
    if (index < 0 || index >= static_cast<int>(dataset.size())) {
        throw std::invalid_argument("edit: --index out of range");
    }
    if (clamps.empty()) throw std::invalid_argument("edit: at least one --clamp is required");
    if (ckpt.model.config().attention_mode == AttentionMode::causal) {
        throw std::invalid_argument("edit: needs a diffusion checkpoint");
    }

    SamplerConfig scfg = sampler_from(cfg, args.guidance, args.steps);
    for (const std::string& spec : clamps) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) {
            throw std::invalid_argument("edit: --clamp expects FRAME:VALUE_FILE");
        }
        FrameClamp clamp;
        clamp.frame = std::stoi(spec.substr(0, colon));
        clamp.value = read_value_file(spec.substr(colon + 1), ckpt.model.config().d_v);
        scfg.mask_editing.push_back(std::move(clamp));
    }

    fs::create_directories(args.out_path);
    Rng rng = Rng(cfg.seed).split("edit");
    const Eigen::MatrixXd out =
        sample(ckpt.model, dataset[index].cond, ckpt.schedule, scfg, rng);

    const fs::path dir(args.out_path);
    save_sequences((dir / "edited.bin").string(), cfg.canonical_text(), {out});
    write_text(dir / "edited.csv", frames_csv({out}, cfg.seed, cfg.hash_hex()));
    std::cout << "wrote edited sequence to " << args.out_path << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args, bool self, bool pooled) {
    const auto [world_cfg, dataset] = load_dataset(args.data_path);

    EvalArtifacts artifacts;
    RunConfig cfg;
    if (self) {
        cfg = load_config_or_default(args.config_path);
        cfg.world = world_cfg;
        cfg.model.d_v = world_cfg.d_v;
        cfg.model.d_a = world_cfg.d_a;
        if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
        if (pooled) cfg.eval.paired = false;
        artifacts = evaluate_self(dataset, cfg, cfg.seed);
    } else {
        Checkpoint ckpt = load_checkpoint(args.ckpt_path);
        cfg = ckpt.config;
        if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
        if (args.guidance) cfg.sampler.guidance = *args.guidance;
        if (args.steps) cfg.sampler.steps = *args.steps;
        if (pooled) cfg.eval.paired = false;
        if (!same_world(cfg.world, world_cfg)) {
            throw std::invalid_argument("evaluate: dataset world does not match the checkpoint");
        }
        ckpt.config = cfg;
        artifacts = evaluate_checkpoint(ckpt, dataset, cfg.seed);
    }

    fs::create_directories(args.out_path);
    const fs::path dir(args.out_path);
    write_text(dir / "metrics.csv", artifacts.report.to_csv());
    const std::string table = artifacts.report.to_table(artifacts.reference_var);
    write_text(dir / "report.txt", table);
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional sequence diffusion workbench"};
    app.require_subcommand(1);

    CommonArgs args;
    int count = 0;
    int num = 8;
    int long_segments = 0;
    int edit_index = 0;
    std::string prior = "diffusion";
    std::string resume_path;
    std::string log_path;
    std::optional<int> train_steps;
    std::vector<std::string> clamps;
    bool self = false;
    bool paired = false;
    bool pooled = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    gen->add_option("--config", args.config_path, "config file");
    gen->add_option("--count", count, "number of pairs")->required();
    gen->add_option("--out", args.out_path, "output dataset path")->required();
    gen->add_option("--seed", args.seed, "override the world seed");

    auto* train = app.add_subcommand("train", "train a prior on a dataset");
    train->add_option("--config", args.config_path, "config file");
    train->add_option("--data", args.data_path, "dataset path")->required();
    train->add_option("--prior", prior, "prior kind")
        ->check(CLI::IsMember({"diffusion", "ar"}));
    train->add_option("--out", args.out_path, "output checkpoint path")->required();
    train->add_option("--resume", resume_path, "checkpoint to continue from");
    train->add_option("--log", log_path, "training log CSV path");
    train->add_option("--train-steps", train_steps, "override train.steps");
    train->add_option("--seed", args.seed, "override the run seed");

    auto* sampled = app.add_subcommand("sample", "sample sequences from a checkpoint");
    sampled->add_option("--ckpt", args.ckpt_path, "checkpoint path")->required();
    sampled->add_option("--data", args.data_path, "dataset path (conditions)")->required();
    sampled->add_option("--out", args.out_path, "output directory")->required();
    sampled->add_option("--num", num, "number of sequences");
    sampled->add_option("--long", long_segments, "also emit a stitched run of N segments");
    sampled->add_option("--guidance", args.guidance, "guidance scale");
    sampled->add_option("--steps", args.steps, "sampling steps (0 = full)");
    sampled->add_option("--seed", args.seed, "override the run seed");

    auto* edit = app.add_subcommand("edit", "sample with clamped frames");
    edit->add_option("--ckpt", args.ckpt_path, "checkpoint path")->required();
    edit->add_option("--data", args.data_path, "dataset path (conditions)")->required();
    edit->add_option("--out", args.out_path, "output directory")->required();
    edit->add_option("--index", edit_index, "condition index in the dataset");
    edit->add_option("--clamp", clamps, "FRAME:VALUE_FILE pair, repeatable")->required();
    edit->add_option("--guidance", args.guidance, "guidance scale");
    edit->add_option("--steps", args.steps, "sampling steps (0 = full)");
    edit->add_option("--seed", args.seed, "override the run seed");

    auto* evaluate = app.add_subcommand("evaluate", "compute the metric report");
    evaluate->add_option("--ckpt", args.ckpt_path, "checkpoint path");
    evaluate->add_option("--data", args.data_path, "dataset path")->required();
    evaluate->add_option("--out", args.out_path, "output directory")->required();
    evaluate->add_option("--config", args.config_path, "config file (with --self)");
    evaluate->add_flag("--self", self, "evaluate the dataset against itself");
    evaluate->add_flag("--paired", paired, "per-video FID (default)");
    evaluate->add_flag("--pooled", pooled, "pooled-frame FID");
    evaluate->add_option("--guidance", args.guidance, "guidance scale");
    evaluate->add_option("--steps", args.steps, "sampling steps (0 = full)");
    evaluate->add_option("--seed", args.seed, "override the run seed");

    try {
        app.parse(argc, argv);
        if (*gen) return cmd_gen_data(args, count);
        if (*train) return cmd_train(args, prior, resume_path, log_path, train_steps);
        if (*sampled) return cmd_sample(args, num, long_segments);
        if (*edit) return cmd_edit(args, edit_index, clamps);
        if (*evaluate) {
            if (!self && args.ckpt_path.empty()) {
                throw std::invalid_argument("evaluate: --ckpt is required without --self");
            }
            if (paired && pooled) {
                throw std::invalid_argument("evaluate: --paired and --pooled conflict");
            }
            return cmd_evaluate(args, self, pooled);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
