#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "a2nl/params.hpp"
#include "a2nl/rng.hpp"

namespace a2nl {

class Rng;

enum class AttentionMode { bidirectional, causal };

struct DenoiserConfig {
    int num_layers = 2;
    int token_dim = 64;
    int ffn_dim = 128;
    int num_heads = 4;
    int max_len = 32;
    AttentionMode attention_mode = AttentionMode::bidirectional;
    int d_v = 8;  // target feature dim
    int d_a = 8;  // condition feature dim

    static DenoiserConfig desk(int d_v = 8, int d_a = 8);
    static DenoiserConfig paper(int d_v = 42, int d_a = 470);

    // Throws std::invalid_argument on a malformed config.
    void validate() const;
};

// Activation cache recorded by a forward pass, consumed by backward().
struct DenoiserTape {
    int B = 0;
    int L = 0;
    std::vector<int> t;
    std::vector<std::uint8_t> cond_null;
    Eigen::MatrixXd x0;                       // (B*L) x (d_a+d_v)
    std::vector<Eigen::VectorXd> time_basis;  // B vectors of token_dim

    struct Layer {
        Eigen::MatrixXd ln1_xhat;
        Eigen::VectorXd ln1_rstd;
        Eigen::MatrixXd y, q, k, v;            // (B*L) x D
        std::vector<Eigen::MatrixXd> attn;     // B*H matrices, L x L
        Eigen::MatrixXd ocat;                  // (B*L) x D
        Eigen::MatrixXd ln2_xhat;
        Eigen::VectorXd ln2_rstd;
        Eigen::MatrixXd z;                     // (B*L) x D
        Eigen::MatrixXd f1, g;                 // (B*L) x F
    };
    std::vector<Layer> layers;
    Eigen::MatrixXd lnf_xhat;
    Eigen::VectorXd lnf_rstd;
    Eigen::MatrixXd yf;                        // (B*L) x D
};

// Sequence transformer mapping (noisy target sequence, step, condition
// sequence) to a predicted clean target sequence. One parameter set serves
// both the bidirectional variant and the causal one; the attention mode comes
// from the config. Forward/backward are hand-written and operate on a batch
// of sequences stacked row-wise.
class Denoiser {
public:
    Denoiser() = default;
    explicit Denoiser(const DenoiserConfig& cfg);

    // Scaled-Gaussian initialization (1/sqrt(fan_in) for weight matrices).
    static Denoiser init(const DenoiserConfig& cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    // Sinusoidal position-in-time basis, dim must be even.
    static Eigen::VectorXd time_basis(int t, int dim);

    // Projected time embedding added to the per-frame condition (d_a values).
    Eigen::VectorXd embed_time(int t) const;

    struct BatchInput {
        const Eigen::MatrixXd* n_t = nullptr;   // (B*L) x d_v, B sequences stacked
        int L = 0;
        std::vector<int> t;                     // per sequence
        const Eigen::MatrixXd* cond = nullptr;  // (B*L) x d_a; may be null if all dropped
        std::vector<std::uint8_t> cond_is_null; // per sequence; empty = none null
    };

    Eigen::MatrixXd forward(const BatchInput& in) const;
    Eigen::MatrixXd forward(const BatchInput& in, DenoiserTape& tape) const;

    // Accumulates parameter gradients for d(loss)/d(output) = d_out. When
    // d_n_t is non-null it receives d(loss)/d(noisy input) as well.
    void backward(const DenoiserTape& tape, const Eigen::MatrixXd& d_out,
                  GradStore& grads, Eigen::MatrixXd* d_n_t = nullptr) const;

    // Single sequence, cond == nullptr selects the learned null condition.
    Eigen::MatrixXd denoise(const Eigen::MatrixXd& n_t, int t,
                            const Eigen::MatrixXd* cond) const;

private:
    void register_params();
    void validate_batch(const BatchInput& in) const;

    DenoiserConfig cfg_;
    ParamStore params_;
};

}  // namespace a2nl
