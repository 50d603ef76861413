#pragma once

#include <Eigen/Dense>

namespace a2nl {

enum class ScheduleKind { linear, cosine };

// Cumulative signal-retention coefficients for the diffusion forward process.
// alpha_bar has T+1 entries with alpha_bar[0] == 1; per-step quantities are
// derived on demand so there is a single source of truth.
struct NoiseSchedule {
    int T = 0;
    Eigen::VectorXd alpha_bar;  // size T+1

    double alpha(int t) const { return alpha_bar[t] / alpha_bar[t - 1]; }
    double beta(int t) const { return 1.0 - alpha(t); }

    // Variance of q(n^{t-1} | n^t, n^0).
    double posterior_variance(int t) const {
        return (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta(t);
    }
};

// Linear kind interpolates per-step betas from 1e-4 to 0.02 across T steps;
// cosine follows the squared-cosine cumulative profile with betas clipped at
// 0.999. Throws std::invalid_argument for T < 1.
NoiseSchedule build_schedule(ScheduleKind kind, int T);

// Closed-form marginal draw: sqrt(alpha_bar[t])*n0 + sqrt(1-alpha_bar[t])*noise.
// t must be in [1, T] and noise must match n0's shape.
Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& n0, int t,
                               const Eigen::MatrixXd& noise, const NoiseSchedule& sched);

}  // namespace a2nl
