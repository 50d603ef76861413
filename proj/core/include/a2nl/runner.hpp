#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "a2nl/config.hpp"
#include "a2nl/container.hpp"
#include "a2nl/diffusion.hpp"
#include "a2nl/metrics.hpp"
#include "a2nl/world.hpp"

namespace a2nl {

inline constexpr const char* kSequenceMagic = "A2NLSQ";

enum class PriorKind { diffusion, ar };

// ---- dataset files ----
bool same_world(const WorldConfig& a, const WorldConfig& b);
void save_dataset(const std::string& path, const WorldConfig& world,
                  const std::vector<SamplePair>& pairs);
std::pair<WorldConfig, std::vector<SamplePair>> load_dataset(const std::string& path);

// ---- checkpoints ----
struct Checkpoint {
    RunConfig config;
    Denoiser model;
    NoiseSchedule schedule;
    Eigen::VectorXd opt_m, opt_v;
    long opt_step = 0;
    long next_step = 0;  // first training step to run on resume
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---- training ----
struct TrainLogRow {
    long step = 0;
    double loss = 0.0;
    double wallclock = 0.0;  // seconds since run start
};

struct TrainOutcome {
    std::vector<double> losses;       // every step
    std::vector<TrainLogRow> log;     // sampled at train.log_every
    double smoothed_first = 0.0;      // mean of the first window
    double smoothed_last = 0.0;       // mean of the last window
};

// Runs cfg.train.steps - ckpt.next_step steps of the selected prior, starting
// from ckpt's model/optimizer when resuming (ckpt.next_step > 0) or from a
// fresh seeded init otherwise. The prior decides the attention mode recorded
// in the checkpoint config.
TrainOutcome run_training(RunConfig cfg, PriorKind prior,
                          const std::vector<SamplePair>& dataset, Checkpoint& ckpt,
                          std::ostream* log_csv = nullptr);

// ---- evaluation ----
struct EvalArtifacts {
    MetricReport report;
    std::vector<Eigen::MatrixXd> generated;
    double reference_var = 0.0;  // Var of the dataset targets used
};

EvalArtifacts evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<SamplePair>& dataset,
                                  std::uint64_t seed);

// Metrics of the dataset against itself (sanity mode).
EvalArtifacts evaluate_self(const std::vector<SamplePair>& dataset, const RunConfig& cfg,
                            std::uint64_t seed);

// ---- sequence files ----
void save_sequences(const std::string& path, const std::string& config_text,
                    const std::vector<Eigen::MatrixXd>& seqs);
std::vector<Eigen::MatrixXd> load_sequences(const std::string& path);
std::string frames_csv(const std::vector<Eigen::MatrixXd>& seqs, std::uint64_t seed,
                       const std::string& config_hash);

// ---- concurrency ----
// Worker cap from A2NL_THREADS (>=1); falls back to the hardware count.
int evaluator_threads();
// Static chunking over [0, n); results must go to disjoint slots.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace a2nl
