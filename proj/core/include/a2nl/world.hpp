#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "a2nl/rng.hpp"

namespace a2nl {

struct WorldConfig {
    std::uint64_t seed = 1;
    int L = 32;
    int d_a = 8;
    int d_v = 8;
    int M = 2;             // number of target modes
    double smooth = 4.0;   // condition smoothing half-life in frames
    double noise_sigma = 0.1;

    void validate() const;
};

struct SamplePair {
    Eigen::MatrixXd cond;    // L x d_a
    Eigen::MatrixXd target;  // L x d_v
    int mode = 0;            // hidden from models, available to evaluators
};

// Oracle generator of paired sequences with a known multi-modal conditional
// law: target_i = A_mode * tanh(B * cond_i) + c_mode + noise. A single random
// base matrix is scaled per mode so that adding modes strictly increases the
// ground-truth variance; offsets are pairwise separated by at least
// 4 * noise_sigma so the mode stays recoverable.
class World {
public:
    explicit World(const WorldConfig& cfg);

    const WorldConfig& config() const { return cfg_; }

    // Exponentially smoothed Gaussian walk, per-dim stationary variance 1.
    Eigen::MatrixXd gen_condition(Rng& rng, int L) const;

    Eigen::MatrixXd gen_target(const Eigen::MatrixXd& cond, int mode, Rng& rng) const;

    // Deterministic per (cfg.seed, count); per-pair substreams.
    std::vector<SamplePair> gen_dataset(int count) const;

    // The Var metric evaluated on n_mc freshly generated ground-truth pairs.
    // mc_seed selects the Monte Carlo draw stream; the world itself (its
    // matrices and offsets) is fixed by cfg.seed.
    double oracle_var(int n_mc, std::uint64_t mc_seed = 0) const;

    // Nearest-offset mode classifier used as the one-to-many oracle.
    int classify_mode(const Eigen::MatrixXd& target, const Eigen::MatrixXd& cond) const;

    // Distance between the two first mode offsets (M >= 2).
    double mode_offset_distance() const;

    const Eigen::MatrixXd& base_amplitude() const { return a_; }
    const Eigen::MatrixXd& cond_mixer() const { return b_; }
    const std::vector<Eigen::VectorXd>& offsets() const { return offsets_; }
    double amplitude_scale(int mode) const;

    // Fixed random orthogonal mixing matrix for the disentanglement test bed.
    static Eigen::MatrixXd mixing_matrix(int dim, Rng& rng);

private:
    Eigen::MatrixXd mode_mean(const Eigen::MatrixXd& cond, int mode) const;

    WorldConfig cfg_;
    Eigen::MatrixXd a_;  // d_v x d_a
    Eigen::MatrixXd b_;  // d_a x d_a
    std::vector<Eigen::VectorXd> offsets_;
};

// mixing * concat(lip_factor, nonlip_factor).
Eigen::VectorXd gen_mixed_visual(const Eigen::VectorXd& lip_factor,
                                 const Eigen::VectorXd& nonlip_factor,
                                 const Eigen::MatrixXd& mixing);

}  // namespace a2nl
