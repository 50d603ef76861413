#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "a2nl/denoiser.hpp"
#include "a2nl/rng.hpp"
#include "a2nl/schedule.hpp"

namespace a2nl {

// Raised when a training step produces a non-finite loss.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(long step)
        : std::runtime_error("training diverged at step " + std::to_string(step)), step(step) {}
    long step;
};

struct TrainBatch {
    std::vector<Eigen::MatrixXd> n0;    // each L x d_v
    std::vector<Eigen::MatrixXd> cond;  // each L x d_a
    // True marks a frame whose ground truth is revealed as a hint.
    std::vector<std::vector<std::uint8_t>> hints;

    int size() const { return static_cast<int>(n0.size()); }
    int length() const { return n0.empty() ? 0 : static_cast<int>(n0.front().rows()); }
    void validate() const;
};

struct TrainOpts {
    double cond_dropout = 0.10;
    bool velocity_loss = true;
};

struct FrameClamp {
    int frame = 0;
    Eigen::VectorXd value;
};

struct SamplerConfig {
    double guidance = 1.5;
    int steps = 0;  // 0 resolves to the schedule's T
    std::uint64_t seed = 0;
    std::vector<FrameClamp> mask_editing;
    bool clamp_x0 = false;
    double x0_min = -1.0;
    double x0_max = 1.0;
};

struct SampleStats {
    long cond_evals = 0;
    long null_evals = 0;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    Eigen::VectorXd m, v;
    long step = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamConfig c = {})
        : cfg(c), m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
    void apply(std::vector<double>& params, const std::vector<double>& grads);
};

// The per-sequence random choices of one training step, split out so that the
// loss is a deterministic function of (params, batch, draws); the gradient
// checks rely on that.
struct DiffusionDraws {
    std::vector<int> t;
    std::vector<Eigen::MatrixXd> noise;
    std::vector<std::uint8_t> drop_cond;
};

DiffusionDraws sample_draws(const TrainBatch& batch, const NoiseSchedule& sched,
                            double cond_dropout, Rng& rng);

// Reference evaluation path: runs any denoiser-like callable one sequence at a
// time. cond == nullptr means the null condition. Used by tests as an oracle
// against the batched training path.
using DenoiseFn =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& n_t, int t, const Eigen::MatrixXd* cond)>;

// Returns (L_simple, L_vel) for the given draws.
std::pair<double, double> diffusion_losses_with(const DenoiseFn& fn, const TrainBatch& batch,
                                                const NoiseSchedule& sched,
                                                const DiffusionDraws& draws);

// Batched path used by loss_simple and train_step; exact same values as the
// training step reports for the same draws.
std::pair<double, double> diffusion_losses(const Denoiser& model, const TrainBatch& batch,
                                           const NoiseSchedule& sched,
                                           const DiffusionDraws& draws);

// Losses plus parameter gradients of L_simple (+ L_vel when enabled).
struct LossGrads {
    double loss_simple = 0.0;
    double loss_velocity = 0.0;
    GradStore grads;
};
LossGrads diffusion_loss_grads(const Denoiser& model, const TrainBatch& batch,
                               const NoiseSchedule& sched, const DiffusionDraws& draws,
                               bool velocity);

double loss_simple(const Denoiser& model, const TrainBatch& batch, const NoiseSchedule& sched,
                   Rng& rng, const TrainOpts& opts = {});

// Mean over batch of (1/(L-1)) sum_i ||(pred_i - pred_{i-1}) - (gt_i - gt_{i-1})||_2.
double loss_velocity(const std::vector<Eigen::MatrixXd>& pred,
                     const std::vector<Eigen::MatrixXd>& gt);

struct StepResult {
    double loss = 0.0;          // L_simple + L_vel, evaluated before the update
    double loss_simple = 0.0;
    double loss_velocity = 0.0;
};

StepResult train_step(Denoiser& model, const TrainBatch& batch, const NoiseSchedule& sched,
                      AdamState& opt, Rng& rng, const TrainOpts& opts = {});

// Classifier-free guidance: s*cond_pred + (1-s)*uncond_pred.
Eigen::MatrixXd guide(const Eigen::MatrixXd& cond_pred, const Eigen::MatrixXd& uncond_pred,
                      double s);

Eigen::MatrixXd sample(const Denoiser& model, const Eigen::MatrixXd& cond,
                       const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng,
                       SampleStats* stats = nullptr);

// Batched variant; sequence k consumes the derived stream rng.split("seq", k),
// so each output is reproducible independently of the batch composition.
std::vector<Eigen::MatrixXd> sample_batch(const Denoiser& model,
                                          const std::vector<Eigen::MatrixXd>& conds,
                                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                                          Rng& rng, SampleStats* stats = nullptr);

// Same, with caller-provided per-sequence streams: sequence k consumes
// streams[k], so chunked invocations reproduce one big call bitwise.
std::vector<Eigen::MatrixXd> sample_batch_streams(const Denoiser& model,
                                                  const std::vector<Eigen::MatrixXd>& conds,
                                                  const NoiseSchedule& sched,
                                                  const SamplerConfig& cfg,
                                                  std::vector<Rng>& streams,
                                                  SampleStats* stats = nullptr);

// Stitched arbitrary-length generation: segment k>0 is sampled with frame 0
// clamped to the previous segment's last frame, and the shared frame is
// emitted once.
Eigen::MatrixXd generate_long(const Denoiser& model,
                              const std::vector<Eigen::MatrixXd>& cond_segments,
                              const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng);

// Teacher-forced next-frame regression for the causal baseline.
double ar_loss_with(const DenoiseFn& fn, const Denoiser& model, const TrainBatch& batch);
StepResult ar_train_step(Denoiser& model, const TrainBatch& batch, AdamState& opt, Rng& rng);

// Deterministic frame-by-frame rollout; output length equals cond length.
Eigen::MatrixXd ar_generate(const Denoiser& model, const Eigen::MatrixXd& cond);

}  // namespace a2nl
