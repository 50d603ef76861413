#include "a2nl/world.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "a2nl/metrics.hpp"

namespace a2nl {

namespace {

// Per-mode amplitude growth; keeps the ground-truth variance strictly
// increasing in the number of modes.
constexpr double kAmpStep = 0.35;

}  // namespace

void WorldConfig::validate() const {
    if (L < 1 || d_a < 1 || d_v < 1) throw std::invalid_argument("WorldConfig: bad dims");
    if (M < 1) throw std::invalid_argument("WorldConfig: M must be >= 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("WorldConfig: negative noise");
    if (!(smooth > 0.0)) throw std::invalid_argument("WorldConfig: smooth must be positive");
}

World::World(const WorldConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(cfg.seed).split("world");

    const double a_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_a));
    a_ = rng.randn(cfg.d_v, cfg.d_a) * a_scale;
    b_ = rng.randn(cfg.d_a, cfg.d_a) * a_scale;

    // Collinear equally spaced offsets along one random direction; spacing
    // stays above 4*noise_sigma even in the noise-free world.
    Eigen::VectorXd dir = rng.randn_vec(cfg.d_v);
    dir /= dir.norm();
    const double spacing = 4.0 * cfg.noise_sigma + 1.0;
    offsets_.resize(cfg.M);
    for (int m = 0; m < cfg.M; ++m) {
        const double pos = (static_cast<double>(m) - 0.5 * (cfg.M - 1)) * spacing;
        offsets_[m] = dir * pos;
    }
}

double World::amplitude_scale(int mode) const {
    return 1.0 + kAmpStep * static_cast<double>(mode);
}

Eigen::MatrixXd World::gen_condition(Rng& rng, int L) const {
    if (L < 1) throw std::invalid_argument("gen_condition: L must be >= 1");
    const double rho =
        std::isinf(cfg_.smooth) ? 1.0 : std::pow(2.0, -1.0 / cfg_.smooth);
    const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    Eigen::MatrixXd cond(L, cfg_.d_a);
    cond.row(0) = rng.randn_vec(cfg_.d_a).transpose();
    for (int i = 1; i < L; ++i) {
        cond.row(i) = rho * cond.row(i - 1) + innov * rng.randn_vec(cfg_.d_a).transpose();
    }
    return cond;
}

Eigen::MatrixXd World::mode_mean(const Eigen::MatrixXd& cond, int mode) const {
    Eigen::MatrixXd driven =
        (cond * b_.transpose()).array().tanh().matrix() * a_.transpose() *
        amplitude_scale(mode);
    driven.rowwise() += offsets_[mode].transpose();
    return driven;
}

Eigen::MatrixXd World::gen_target(const Eigen::MatrixXd& cond, int mode, Rng& rng) const {
    if (mode < 0 || mode >= cfg_.M) throw std::invalid_argument("gen_target: invalid mode");
    if (cond.cols() != cfg_.d_a) throw std::invalid_argument("gen_target: cond dim mismatch");
    Eigen::MatrixXd target = mode_mean(cond, mode);
    if (cfg_.noise_sigma > 0.0) {
        target += cfg_.noise_sigma * rng.randn(cond.rows(), cfg_.d_v);
    }
    return target;
}

std::vector<SamplePair> World::gen_dataset(int count) const {
    if (count < 1) throw std::invalid_argument("gen_dataset: count must be >= 1");
    const Rng root(cfg_.seed);
    std::vector<SamplePair> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = root.split("pair", static_cast<std::uint64_t>(i));
        SamplePair& p = out[static_cast<std::size_t>(i)];
        p.mode = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg_.M)));
        p.cond = gen_condition(rng, cfg_.L);
        p.target = gen_target(p.cond, p.mode, rng);
    }
    return out;
}

double World::oracle_var(int n_mc, std::uint64_t mc_seed) const {
    if (n_mc < 100) throw std::invalid_argument("oracle_var: n_mc must be >= 100");
    const Rng root = Rng(cfg_.seed).split("oracle_var").split(mc_seed);
    std::vector<Eigen::MatrixXd> videos;
    videos.reserve(static_cast<std::size_t>(n_mc));
    for (int i = 0; i < n_mc; ++i) {
        Rng rng = root.split("pair", static_cast<std::uint64_t>(i));
        const int mode = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg_.M)));
        const Eigen::MatrixXd cond = gen_condition(rng, cfg_.L);
        videos.push_back(gen_target(cond, mode, rng));
    }
    return variance_metric(videos);
}

int World::classify_mode(const Eigen::MatrixXd& target, const Eigen::MatrixXd& cond) const {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int m = 0; m < cfg_.M; ++m) {
        const Eigen::RowVectorXd residual = (target - mode_mean(cond, m)).colwise().mean();
        const double dist = residual.norm();
        if (dist < best_dist) {
            best_dist = dist;
            best = m;
        }
    }
    return best;
}

double World::mode_offset_distance() const {
    if (cfg_.M < 2) throw std::invalid_argument("mode_offset_distance: needs M >= 2");
    return (offsets_[1] - offsets_[0]).norm();
}

Eigen::MatrixXd World::mixing_matrix(int dim, Rng& rng) {
    const Eigen::MatrixXd g = rng.randn(dim, dim);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // Fix the sign convention so the factorization is unique.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

Eigen::VectorXd gen_mixed_visual(const Eigen::VectorXd& lip_factor,
                                 const Eigen::VectorXd& nonlip_factor,
                                 const Eigen::MatrixXd& mixing) {
    if (mixing.cols() != lip_factor.size() + nonlip_factor.size()) {
        throw std::invalid_argument("gen_mixed_visual: mixing dim mismatch");
    }
    Eigen::VectorXd stacked(mixing.cols());
    stacked.head(lip_factor.size()) = lip_factor;
    stacked.tail(nonlip_factor.size()) = nonlip_factor;
    return mixing * stacked;
}

}  // namespace a2nl
