#pragma once

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "a2nl/params.hpp"
#include "a2nl/rng.hpp"

namespace a2nl {

// InfoNCE over row-paired batches. Rows are L2-normalized internally and
// similarities divided by the temperature. Throws on zero-norm rows.
double contrastive_loss(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n, double temperature);

// Gradient variant; any of the output pointers may be null.
double contrastive_loss_grad(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n,
                             double temperature, Eigen::MatrixXd* d_m, Eigen::MatrixXd* d_n,
                             double* d_temperature);

// 0.5 * [L_con(a, b) + L_con(b, a)].
double symmetric_contrastive(const Eigen::MatrixXd& f_a, const Eigen::MatrixXd& f_v,
                             double temperature);
double symmetric_contrastive_grad(const Eigen::MatrixXd& f_a, const Eigen::MatrixXd& f_v,
                                  double temperature, Eigen::MatrixXd* d_a, Eigen::MatrixXd* d_v,
                                  double* d_temperature);

// Entry (i,j) = cov(X_i, Y_j) / (sigma_i * sigma_j + eps), eps = 1e-8.
Eigen::MatrixXd pearson_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Ring buffer of detached past batches; keeps at most capacity-1 of them so
// that bank plus the current batch never exceeds capacity batches.
class MemoryBank {
public:
    explicit MemoryBank(int capacity);

    void push(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l);

    // Bank contents (oldest first) with the current batch appended last.
    std::pair<Eigen::MatrixXd, Eigen::MatrixXd> assemble(const Eigen::MatrixXd& cur_nl,
                                                         const Eigen::MatrixXd& cur_l) const;

    int capacity() const { return capacity_; }
    int stored() const { return static_cast<int>(entries_.size()); }
    const std::deque<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& entries() const {
        return entries_;
    }

private:
    int capacity_;
    std::deque<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> entries_;
};

// (1/d_v) * sum of squared Pearson entries over bank + current batch, then
// pushes the current batch into the bank.
double orthogonal_loss(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l, MemoryBank& bank);

// Pure variant: same value, gradients w.r.t. the current batch only, no push.
double orthogonal_loss_grad(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l,
                            const MemoryBank& bank, Eigen::MatrixXd* d_nl, Eigen::MatrixXd* d_l);

// L1 distance between two extracted feature vectors.
double feature_l1(const Eigen::VectorXd& feat_gt, const Eigen::VectorXd& feat_gen);

struct LossWeights {
    double ol = 1.0;
    double gaze = 1.0;
    double l1 = 1.0;
    double gan = 1.0;
    double vgg = 1.0;
};

// Weighted sum of named loss terms; unknown names are rejected.
double combine_weighted(const std::map<std::string, double>& terms, const LossWeights& weights);

struct HeadConfig {
    int d_visual = 16;
    int hidden = 16;
    int d_l = 8;
    int d_nl = 8;

    static HeadConfig desk() { return {}; }
    static HeadConfig paper() { return {512, 512, 470, 42}; }
};

// Two two-layer perceptrons splitting a visual feature into lip and non-lip
// projections.
class ProjectionHeads {
public:
    ProjectionHeads() = default;
    explicit ProjectionHeads(const HeadConfig& cfg);
    static ProjectionHeads init(const HeadConfig& cfg, Rng& rng);

    Eigen::MatrixXd project_l(const Eigen::MatrixXd& visual) const;
    Eigen::MatrixXd project_nl(const Eigen::MatrixXd& visual) const;

    const HeadConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    HeadConfig cfg_;
    ParamStore params_;
};

struct DisentangleTrainConfig {
    HeadConfig heads;
    int bank_capacity = 8;
    double lr = 1e-3;
    double lambda_cl = 1.0;
    double lambda_ol = 1.0;
    double lambda_rec = 1.0;
    double tau_init = 0.07;
};

// Trains the projection heads with the contrastive + orthogonal + linear
// reconstruction combination on externally supplied (lip factor, visual)
// batches. The lip factor plays the audio-side feature.
class DisentangleTrainer {
public:
    DisentangleTrainer(const DisentangleTrainConfig& cfg, Rng& rng);

    struct Losses {
        double contrastive = 0.0;
        double orthogonal = 0.0;
        double reconstruction = 0.0;
        double total = 0.0;
    };
    Losses step(const Eigen::MatrixXd& lip, const Eigen::MatrixXd& visual);

    Eigen::MatrixXd project_l(const Eigen::MatrixXd& visual) const;
    Eigen::MatrixXd project_nl(const Eigen::MatrixXd& visual) const;
    double temperature() const;

    const DisentangleTrainConfig& config() const { return cfg_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

private:
    struct Opt;  // Adam over the flat parameter vector
    DisentangleTrainConfig cfg_;
    ParamStore params_;  // head_l.*, head_nl.*, dec.*, log_tau
    MemoryBank bank_;
    std::shared_ptr<Opt> opt_;
};

struct DisentangleEval {
    double mean_sq_cross_pearson = 0.0;  // head_nl output vs lip factor
    double probe_r2 = 0.0;               // linear probe of the non-lip factor
};

DisentangleEval evaluate_disentanglement(const DisentangleTrainer& trainer,
                                         const Eigen::MatrixXd& visual,
                                         const Eigen::MatrixXd& lip,
                                         const Eigen::MatrixXd& nonlip);

}  // namespace a2nl
