#include "a2nl/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace a2nl {

namespace {

constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 0.02;
constexpr double kBetaMax = 0.999;
constexpr double kCosineOffset = 0.008;

double cosine_profile(double u) {
    const double arg = (u + kCosineOffset) / (1.0 + kCosineOffset) * M_PI / 2.0;
    const double c = std::cos(arg);
    return c * c;
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int T) {
    if (T < 1) {
        throw std::invalid_argument("build_schedule: T must be >= 1");
    }
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.resize(T + 1);
    sched.alpha_bar[0] = 1.0;

    for (int t = 1; t <= T; ++t) {
        double beta;
        if (kind == ScheduleKind::linear) {
            beta = (T == 1) ? kBetaStart
                            : kBetaStart + (kBetaEnd - kBetaStart) *
                                               static_cast<double>(t - 1) / static_cast<double>(T - 1);
        } else {
            const double num = cosine_profile(static_cast<double>(t) / T);
            const double den = cosine_profile(static_cast<double>(t - 1) / T);
            beta = std::min(1.0 - num / den, kBetaMax);
        }
        sched.alpha_bar[t] = sched.alpha_bar[t - 1] * (1.0 - beta);
    }
    return sched;
}

Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& n0, int t,
                               const Eigen::MatrixXd& noise, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) {
        throw std::invalid_argument("forward_sample: t out of range");
    }
    if (noise.rows() != n0.rows() || noise.cols() != n0.cols()) {
        throw std::invalid_argument("forward_sample: noise shape mismatch");
    }
    const double ab = sched.alpha_bar[t];
    return std::sqrt(ab) * n0 + std::sqrt(1.0 - ab) * noise;
}

}  // namespace a2nl
