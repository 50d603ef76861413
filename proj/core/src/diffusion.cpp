#include "a2nl/diffusion.hpp"

#include <cmath>

namespace a2nl {

namespace {

// Evenly strided descending time grid; index k in [1, steps] maps to
// round(k*T/steps), so the grid ends at T and starts at >= 1.
std::vector<int> time_grid(int T, int steps) {
    std::vector<int> ts(steps + 1, 0);
    for (int k = 1; k <= steps; ++k) {
        ts[k] = static_cast<int>(std::llround(static_cast<double>(k) * T / steps));
    }
    return ts;
}

struct BatchedEval {
    Eigen::MatrixXd pred;      // (B*L) x d_v
    Eigen::MatrixXd n0_stack;  // (B*L) x d_v
    DenoiserTape tape;
    int B = 0;
    int L = 0;
};

// Shared forward used by loss_simple and train_step so both report the exact
// same value for identical draws.
BatchedEval batched_eval(const Denoiser& model, const TrainBatch& batch,
                         const NoiseSchedule& sched, const DiffusionDraws& draws,
                         bool with_tape) {
    const int B = batch.size();
    const int L = batch.length();
    const int d_v = static_cast<int>(batch.n0.front().cols());
    const int d_a = static_cast<int>(batch.cond.front().cols());

    BatchedEval ev;
    ev.B = B;
    ev.L = L;
    Eigen::MatrixXd nt(B * L, d_v);
    Eigen::MatrixXd cond(B * L, d_a);
    ev.n0_stack.resize(B * L, d_v);

    for (int b = 0; b < B; ++b) {
        Eigen::MatrixXd noisy = forward_sample(batch.n0[b], draws.t[b], draws.noise[b], sched);
        if (!batch.hints.empty()) {
            for (int i = 0; i < L; ++i) {
                if (batch.hints[b][i]) noisy.row(i) = batch.n0[b].row(i);
            }
        }
        nt.middleRows(b * L, L) = noisy;
        cond.middleRows(b * L, L) = batch.cond[b];
        ev.n0_stack.middleRows(b * L, L) = batch.n0[b];
    }

    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = L;
    in.t = draws.t;
    in.cond = &cond;
    in.cond_is_null = draws.drop_cond;
    ev.pred = with_tape ? model.forward(in, ev.tape) : model.forward(in);
    return ev;
}

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

// Velocity loss on stacked batches plus its gradient w.r.t. the prediction.
double velocity_stacked(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, int B, int L,
                        Eigen::MatrixXd* d_pred) {
    double total = 0.0;
    const double coeff = 1.0 / (static_cast<double>(B) * (L - 1));
    for (int b = 0; b < B; ++b) {
        for (int i = 1; i < L; ++i) {
            const int r = b * L + i;
            const Eigen::RowVectorXd u =
                (pred.row(r) - pred.row(r - 1)) - (gt.row(r) - gt.row(r - 1));
            const double norm = u.norm();
            total += norm;
            if (d_pred != nullptr && norm > 0.0) {
                const Eigen::RowVectorXd dir = u / norm * coeff;
                d_pred->row(r) += dir;
                d_pred->row(r - 1) -= dir;
            }
        }
    }
    return total * coeff;
}

}  // namespace

void TrainBatch::validate() const {
    if (n0.empty()) throw std::invalid_argument("TrainBatch: empty batch");
    if (cond.size() != n0.size()) throw std::invalid_argument("TrainBatch: cond count mismatch");
    if (!hints.empty() && hints.size() != n0.size()) {
        throw std::invalid_argument("TrainBatch: hint count mismatch");
    }
    const Eigen::Index L = n0.front().rows();
    for (std::size_t b = 0; b < n0.size(); ++b) {
        if (n0[b].rows() != L || cond[b].rows() != L) {
            throw std::invalid_argument("TrainBatch: inconsistent sequence length");
        }
        if (!hints.empty() && static_cast<Eigen::Index>(hints[b].size()) != L) {
            throw std::invalid_argument("TrainBatch: hint length mismatch");
        }
    }
}

void AdamState::apply(std::vector<double>& params, const std::vector<double>& grads) {
    step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

DiffusionDraws sample_draws(const TrainBatch& batch, const NoiseSchedule& sched,
                            double cond_dropout, Rng& rng) {
    batch.validate();
    const int B = batch.size();
    const int L = batch.length();
    const int d_v = static_cast<int>(batch.n0.front().cols());
    DiffusionDraws draws;
    draws.t.resize(B);
    draws.noise.resize(B);
    draws.drop_cond.resize(B);
    for (int b = 0; b < B; ++b) {
        draws.t[b] = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.T)));
        draws.noise[b] = rng.randn(L, d_v);
        draws.drop_cond[b] = rng.uniform() < cond_dropout ? 1 : 0;
    }
    return draws;
}

std::pair<double, double> diffusion_losses_with(const DenoiseFn& fn, const TrainBatch& batch,
                                                const NoiseSchedule& sched,
                                                const DiffusionDraws& draws) {
    batch.validate();
    const int B = batch.size();
    const int L = batch.length();
    double sq = 0.0;
    double count = 0.0;
    std::vector<Eigen::MatrixXd> preds(B);
    for (int b = 0; b < B; ++b) {
        Eigen::MatrixXd nt = forward_sample(batch.n0[b], draws.t[b], draws.noise[b], sched);
        if (!batch.hints.empty()) {
            for (int i = 0; i < L; ++i) {
                if (batch.hints[b][i]) nt.row(i) = batch.n0[b].row(i);
            }
        }
        preds[b] = fn(nt, draws.t[b], draws.drop_cond[b] ? nullptr : &batch.cond[b]);
        sq += (preds[b] - batch.n0[b]).squaredNorm();
        count += static_cast<double>(batch.n0[b].size());
    }
    const double vel = (L >= 2) ? loss_velocity(preds, batch.n0) : 0.0;
    return {sq / count, vel};
}

std::pair<double, double> diffusion_losses(const Denoiser& model, const TrainBatch& batch,
                                           const NoiseSchedule& sched,
                                           const DiffusionDraws& draws) {
    const BatchedEval ev = batched_eval(model, batch, sched, draws, /*with_tape=*/false);
    const double simple = mse(ev.pred, ev.n0_stack);
    const double vel =
        ev.L >= 2 ? velocity_stacked(ev.pred, ev.n0_stack, ev.B, ev.L, nullptr) : 0.0;
    return {simple, vel};
}

LossGrads diffusion_loss_grads(const Denoiser& model, const TrainBatch& batch,
                               const NoiseSchedule& sched, const DiffusionDraws& draws,
                               bool velocity) {
    BatchedEval ev = batched_eval(model, batch, sched, draws, /*with_tape=*/true);
    LossGrads out{0.0, 0.0, GradStore(model.params())};
    out.loss_simple = mse(ev.pred, ev.n0_stack);
    Eigen::MatrixXd d_pred =
        2.0 * (ev.pred - ev.n0_stack) / static_cast<double>(ev.pred.size());
    if (velocity && ev.L >= 2) {
        out.loss_velocity = velocity_stacked(ev.pred, ev.n0_stack, ev.B, ev.L, &d_pred);
    }
    model.backward(ev.tape, d_pred, out.grads);
    return out;
}

double loss_simple(const Denoiser& model, const TrainBatch& batch, const NoiseSchedule& sched,
                   Rng& rng, const TrainOpts& opts) {
    const DiffusionDraws draws = sample_draws(batch, sched, opts.cond_dropout, rng);
    return diffusion_losses(model, batch, sched, draws).first;
}

double loss_velocity(const std::vector<Eigen::MatrixXd>& pred,
                     const std::vector<Eigen::MatrixXd>& gt) {
    if (pred.empty() || pred.size() != gt.size()) {
        throw std::invalid_argument("loss_velocity: batch size mismatch");
    }
    const Eigen::Index L = pred.front().rows();
    if (L < 2) throw std::invalid_argument("loss_velocity: L must be >= 2");
    double total = 0.0;
    for (std::size_t b = 0; b < pred.size(); ++b) {
        if (pred[b].rows() != L || gt[b].rows() != L || pred[b].cols() != gt[b].cols()) {
            throw std::invalid_argument("loss_velocity: shape mismatch");
        }
        double seq = 0.0;
        for (Eigen::Index i = 1; i < L; ++i) {
            seq += ((pred[b].row(i) - pred[b].row(i - 1)) - (gt[b].row(i) - gt[b].row(i - 1)))
                       .norm();
        }
        total += seq / static_cast<double>(L - 1);
    }
    return total / static_cast<double>(pred.size());
}

StepResult train_step(Denoiser& model, const TrainBatch& batch, const NoiseSchedule& sched,
                      AdamState& opt, Rng& rng, const TrainOpts& opts) {
    const DiffusionDraws draws = sample_draws(batch, sched, opts.cond_dropout, rng);
    LossGrads lg = diffusion_loss_grads(model, batch, sched, draws, opts.velocity_loss);

    StepResult res;
    res.loss_simple = lg.loss_simple;
    res.loss_velocity = lg.loss_velocity;
    res.loss = res.loss_simple + res.loss_velocity;
    if (!std::isfinite(res.loss)) throw TrainingDiverged(opt.step);

    opt.apply(model.params().flat(), lg.grads.flat());
    return res;
}

Eigen::MatrixXd guide(const Eigen::MatrixXd& cond_pred, const Eigen::MatrixXd& uncond_pred,
                      double s) {
    if (cond_pred.rows() != uncond_pred.rows() || cond_pred.cols() != uncond_pred.cols()) {
        throw std::invalid_argument("guide: shape mismatch");
    }
    return s * cond_pred + (1.0 - s) * uncond_pred;
}

std::vector<Eigen::MatrixXd> sample_batch(const Denoiser& model,
                                          const std::vector<Eigen::MatrixXd>& conds,
                                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                                          Rng& rng, SampleStats* stats) {
    std::vector<Rng> streams;
    streams.reserve(conds.size());
    for (std::size_t b = 0; b < conds.size(); ++b) {
        streams.push_back(rng.split("seq", static_cast<std::uint64_t>(b)));
    }
    return sample_batch_streams(model, conds, sched, cfg, streams, stats);
}

std::vector<Eigen::MatrixXd> sample_batch_streams(const Denoiser& model,
                                                  const std::vector<Eigen::MatrixXd>& conds,
                                                  const NoiseSchedule& sched,
                                                  const SamplerConfig& cfg,
                                                  std::vector<Rng>& streams, SampleStats* stats) {
    if (conds.empty()) throw std::invalid_argument("sample: no conditions");
    if (streams.size() != conds.size()) {
        throw std::invalid_argument("sample: stream count mismatch");
    }
    const int B = static_cast<int>(conds.size());
    const int L = static_cast<int>(conds.front().rows());
    const int d_v = model.config().d_v;
    if (L < 1 || L > model.config().max_len) {
        throw std::invalid_argument("sample: condition length exceeds max_len");
    }
    for (const auto& c : conds) {
        if (c.rows() != L || c.cols() != model.config().d_a) {
            throw std::invalid_argument("sample: condition shape mismatch");
        }
    }
    for (const auto& clamp : cfg.mask_editing) {
        if (clamp.frame < 0 || clamp.frame >= L) {
            throw std::invalid_argument("sample: clamp frame out of range");
        }
        if (clamp.value.size() != d_v) {
            throw std::invalid_argument("sample: clamp value dim mismatch");
        }
    }
    const int S = cfg.steps > 0 ? cfg.steps : sched.T;
    if (S < 1 || S > sched.T) throw std::invalid_argument("sample: steps out of range");
    if (cfg.guidance < 0.0) throw std::invalid_argument("sample: guidance must be >= 0");

    const std::vector<int> ts = time_grid(sched.T, S);

    Eigen::MatrixXd x(B * L, d_v);
    Eigen::MatrixXd cond(B * L, model.config().d_a);
    for (int b = 0; b < B; ++b) {
        x.middleRows(b * L, L) = streams[b].randn(L, d_v);
        cond.middleRows(b * L, L) = conds[b];
    }

    Denoiser::BatchInput cin;
    cin.n_t = &x;
    cin.L = L;
    cin.cond = &cond;
    cin.cond_is_null.assign(B, 0);
    Denoiser::BatchInput uin = cin;
    uin.cond_is_null.assign(B, 1);

    for (int k = S; k >= 1; --k) {
        const int t = ts[k];
        const int tprev = ts[k - 1];
        cin.t.assign(B, t);
        uin.t.assign(B, t);

        Eigen::MatrixXd xhat = model.forward(cin);
        if (stats != nullptr) stats->cond_evals += B;
        if (cfg.guidance != 1.0) {
            const Eigen::MatrixXd uncond = model.forward(uin);
            if (stats != nullptr) stats->null_evals += B;
            xhat = guide(xhat, uncond, cfg.guidance);
        }
        if (cfg.clamp_x0) {
            xhat = xhat.cwiseMax(cfg.x0_min).cwiseMin(cfg.x0_max);
        }

        const double ab_t = sched.alpha_bar[t];
        const double ab_p = sched.alpha_bar[tprev];
        const double a_eff = ab_t / ab_p;
        const double b_eff = 1.0 - a_eff;
        const double c_x0 = std::sqrt(ab_p) * b_eff / (1.0 - ab_t);
        const double c_xt = std::sqrt(a_eff) * (1.0 - ab_p) / (1.0 - ab_t);
        const double var = (1.0 - ab_p) / (1.0 - ab_t) * b_eff;
        const double sd = std::sqrt(var);

        for (int b = 0; b < B; ++b) {
            auto xb = x.middleRows(b * L, L);
            xb = c_x0 * xhat.middleRows(b * L, L) + c_xt * xb;
            if (var > 0.0) {
                xb += sd * streams[b].randn(L, d_v);
            }
            for (const auto& clamp : cfg.mask_editing) {
                if (tprev >= 1) {
                    const double abp = sched.alpha_bar[tprev];
                    xb.row(clamp.frame) =
                        std::sqrt(abp) * clamp.value.transpose() +
                        std::sqrt(1.0 - abp) * streams[b].randn_vec(d_v).transpose();
                } else {
                    xb.row(clamp.frame) = clamp.value.transpose();
                }
            }
        }
    }

    std::vector<Eigen::MatrixXd> out(B);
    for (int b = 0; b < B; ++b) out[b] = x.middleRows(b * L, L);
    return out;
}

Eigen::MatrixXd sample(const Denoiser& model, const Eigen::MatrixXd& cond,
                       const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng,
                       SampleStats* stats) {
    return sample_batch(model, {cond}, sched, cfg, rng, stats).front();
}

Eigen::MatrixXd generate_long(const Denoiser& model,
                              const std::vector<Eigen::MatrixXd>& cond_segments,
                              const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng) {
    if (cond_segments.empty()) throw std::invalid_argument("generate_long: empty stream");

    std::vector<Eigen::MatrixXd> segments;
    segments.reserve(cond_segments.size());
    segments.push_back(sample(model, cond_segments[0], sched, cfg, rng));

    Eigen::Index total = segments[0].rows();
    for (std::size_t k = 1; k < cond_segments.size(); ++k) {
        SamplerConfig seg_cfg = cfg;
        seg_cfg.mask_editing = {FrameClamp{0, segments.back().bottomRows(1).transpose()}};
        Rng seg_rng = rng.split("segment", static_cast<std::uint64_t>(k));
        segments.push_back(sample(model, cond_segments[k], sched, seg_cfg, seg_rng));
        total += segments.back().rows() - 1;
    }

    Eigen::MatrixXd out(total, model.config().d_v);
    Eigen::Index at = segments[0].rows();
    out.topRows(at) = segments[0];
    for (std::size_t k = 1; k < segments.size(); ++k) {
        const Eigen::Index rows = segments[k].rows() - 1;
        out.middleRows(at, rows) = segments[k].bottomRows(rows);
        at += rows;
    }
    return out;
}

double ar_loss_with(const DenoiseFn& fn, const Denoiser& model, const TrainBatch& batch) {
    batch.validate();
    if (model.config().attention_mode != AttentionMode::causal) {
        throw std::invalid_argument("ar: model must use causal attention");
    }
    const int B = batch.size();
    const int L = batch.length();
    ConstMatRef start = model.params().view("start_token");
    double sq = 0.0;
    double count = 0.0;
    for (int b = 0; b < B; ++b) {
        Eigen::MatrixXd shifted(L, model.config().d_v);
        shifted.row(0) = start.row(0);
        if (L > 1) shifted.bottomRows(L - 1) = batch.n0[b].topRows(L - 1);
        const Eigen::MatrixXd pred = fn(shifted, 0, &batch.cond[b]);
        sq += (pred - batch.n0[b]).squaredNorm();
        count += static_cast<double>(batch.n0[b].size());
    }
    return sq / count;
}

StepResult ar_train_step(Denoiser& model, const TrainBatch& batch, AdamState& opt,
                         [[maybe_unused]] Rng& rng) {
    batch.validate();
    if (model.config().attention_mode != AttentionMode::causal) {
        throw std::invalid_argument("ar_train_step: model must use causal attention");
    }
    const int B = batch.size();
    const int L = batch.length();
    const int d_v = model.config().d_v;
    const int d_a = model.config().d_a;

    Eigen::MatrixXd nt(B * L, d_v);
    Eigen::MatrixXd cond(B * L, d_a);
    Eigen::MatrixXd target(B * L, d_v);
    ConstMatRef start = std::as_const(model).params().view("start_token");
    for (int b = 0; b < B; ++b) {
        nt.row(b * L) = start.row(0);
        if (L > 1) nt.middleRows(b * L + 1, L - 1) = batch.n0[b].topRows(L - 1);
        cond.middleRows(b * L, L) = batch.cond[b];
        target.middleRows(b * L, L) = batch.n0[b];
    }

    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = L;
    in.t.assign(B, 0);
    in.cond = &cond;

    DenoiserTape tape;
    const Eigen::MatrixXd pred = model.forward(in, tape);

    StepResult res;
    res.loss_simple = mse(pred, target);
    res.loss = res.loss_simple;
    if (!std::isfinite(res.loss)) throw TrainingDiverged(opt.step);

    const Eigen::MatrixXd d_pred = 2.0 * (pred - target) / static_cast<double>(pred.size());
    GradStore grads(model.params());
    Eigen::MatrixXd d_nt;
    model.backward(tape, d_pred, grads, &d_nt);
    MatRef d_start = grads.view("start_token");
    for (int b = 0; b < B; ++b) {
        d_start.row(0) += d_nt.row(b * L);
    }
    opt.apply(model.params().flat(), grads.flat());
    return res;
}

Eigen::MatrixXd ar_generate(const Denoiser& model, const Eigen::MatrixXd& cond) {
    if (model.config().attention_mode != AttentionMode::causal) {
        throw std::invalid_argument("ar_generate: model must use causal attention");
    }
    const int L = static_cast<int>(cond.rows());
    if (L < 1 || L > model.config().max_len) {
        throw std::invalid_argument("ar_generate: condition length exceeds max_len");
    }
    const int d_v = model.config().d_v;
    ConstMatRef start = model.params().view("start_token");

    Eigen::MatrixXd out(L, d_v);
    for (int i = 0; i < L; ++i) {
        Eigen::MatrixXd prefix(i + 1, d_v);
        prefix.row(0) = start.row(0);
        if (i > 0) prefix.bottomRows(i) = out.topRows(i);
        const Eigen::MatrixXd cond_prefix = cond.topRows(i + 1);
        const Eigen::MatrixXd pred = model.denoise(prefix, 0, &cond_prefix);
        out.row(i) = pred.row(i);
    }
    return out;
}

}  // namespace a2nl
