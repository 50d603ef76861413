#include "a2nl/disentangle.hpp"

#include <cmath>
#include <stdexcept>

#include "a2nl/diffusion.hpp"

namespace a2nl {

namespace {

constexpr double kPearsonEps = 1e-8;

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m, Eigen::VectorXd& norms) {
    norms.resize(m.rows());
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double r = m.row(i).norm();
        if (r == 0.0) throw std::invalid_argument("contrastive_loss: zero-norm row");
        norms[i] = r;
        out.row(i) = m.row(i) / r;
    }
    return out;
}

struct Mlp2Cache {
    Eigen::MatrixXd x, pre, hidden;
};

Eigen::MatrixXd mlp2_forward(const Eigen::MatrixXd& x, ConstMatRef w1, ConstMatRef b1,
                             ConstMatRef w2, ConstMatRef b2, Mlp2Cache* cache) {
    Eigen::MatrixXd pre = x * w1;
    pre.rowwise() += b1.row(0);
    Eigen::MatrixXd hidden = pre.array().tanh().matrix();
    Eigen::MatrixXd out = hidden * w2;
    out.rowwise() += b2.row(0);
    if (cache != nullptr) {
        cache->x = x;
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return out;
}

void mlp2_backward(const Mlp2Cache& cache, const Eigen::MatrixXd& d_out, ConstMatRef w1,
                   ConstMatRef w2, MatRef dw1, MatRef db1, MatRef dw2, MatRef db2) {
    (void)w1;
    dw2 += cache.hidden.transpose() * d_out;
    db2.row(0) += d_out.colwise().sum();
    Eigen::MatrixXd d_hidden = d_out * w2.transpose();
    Eigen::MatrixXd d_pre =
        d_hidden.cwiseProduct((1.0 - cache.hidden.array().square()).matrix());
    dw1 += cache.x.transpose() * d_pre;
    db1.row(0) += d_pre.colwise().sum();
}

void register_head(ParamStore& store, const std::string& prefix, int d_in, int hidden,
                   int d_out) {
    store.add(prefix + ".w1", d_in, hidden);
    store.add(prefix + ".b1", 1, hidden);
    store.add(prefix + ".w2", hidden, d_out);
    store.add(prefix + ".b2", 1, d_out);
}

void init_head(ParamStore& store, const std::string& prefix, Rng& rng) {
    for (const char* leaf : {".w1", ".w2"}) {
        MatRef w = store.view(prefix + leaf);
        const double scale = 1.0 / std::sqrt(static_cast<double>(w.rows()));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = rng.normal() * scale;
            }
        }
    }
}

}  // namespace

double contrastive_loss_grad(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n,
                             double temperature, Eigen::MatrixXd* d_m, Eigen::MatrixXd* d_n,
                             double* d_temperature) {
    if (m.rows() != n.rows() || m.cols() != n.cols() || m.rows() < 1) {
        throw std::invalid_argument("contrastive_loss: shape mismatch");
    }
    if (temperature <= 0.0) throw std::invalid_argument("contrastive_loss: temperature <= 0");
    const Eigen::Index N = m.rows();

    Eigen::VectorXd m_norms, n_norms;
    const Eigen::MatrixXd mh = normalize_rows(m, m_norms);
    const Eigen::MatrixXd nh = normalize_rows(n, n_norms);

    const Eigen::MatrixXd sims = (mh * nh.transpose()) / temperature;

    double loss = 0.0;
    Eigen::MatrixXd d_sims(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const double mx = sims.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (sims.row(i).array() - mx).exp();
        const double z = e.sum();
        loss += -(sims(i, i) - mx - std::log(z));
        d_sims.row(i) = e / z / static_cast<double>(N);
        d_sims(i, i) -= 1.0 / static_cast<double>(N);
    }
    loss /= static_cast<double>(N);

    if (d_temperature != nullptr) {
        *d_temperature = -(d_sims.cwiseProduct(sims)).sum() / temperature;
    }
    if (d_m != nullptr) {
        const Eigen::MatrixXd d_mh = (d_sims * nh) / temperature;
        d_m->resize(N, m.cols());
        for (Eigen::Index i = 0; i < N; ++i) {
            const double dot = d_mh.row(i).dot(mh.row(i));
            d_m->row(i) = (d_mh.row(i) - mh.row(i) * dot) / m_norms[i];
        }
    }
    if (d_n != nullptr) {
        const Eigen::MatrixXd d_nh = (d_sims.transpose() * mh) / temperature;
        d_n->resize(N, n.cols());
        for (Eigen::Index j = 0; j < N; ++j) {
            const double dot = d_nh.row(j).dot(nh.row(j));
            d_n->row(j) = (d_nh.row(j) - nh.row(j) * dot) / n_norms[j];
        }
    }
    return loss;
}

double contrastive_loss(const Eigen::MatrixXd& m, const Eigen::MatrixXd& n, double temperature) {
    return contrastive_loss_grad(m, n, temperature, nullptr, nullptr, nullptr);
}

double symmetric_contrastive_grad(const Eigen::MatrixXd& f_a, const Eigen::MatrixXd& f_v,
                                  double temperature, Eigen::MatrixXd* d_a, Eigen::MatrixXd* d_v,
                                  double* d_temperature) {
    Eigen::MatrixXd da1, dv1, da2, dv2;
    double dt1 = 0.0, dt2 = 0.0;
    const double l1 = contrastive_loss_grad(f_a, f_v, temperature, d_a ? &da1 : nullptr,
                                            d_v ? &dv1 : nullptr,
                                            d_temperature ? &dt1 : nullptr);
    const double l2 = contrastive_loss_grad(f_v, f_a, temperature, d_v ? &dv2 : nullptr,
                                            d_a ? &da2 : nullptr,
                                            d_temperature ? &dt2 : nullptr);
    if (d_a != nullptr) *d_a = 0.5 * (da1 + da2);
    if (d_v != nullptr) *d_v = 0.5 * (dv1 + dv2);
    if (d_temperature != nullptr) *d_temperature = 0.5 * (dt1 + dt2);
    return 0.5 * (l1 + l2);
}

double symmetric_contrastive(const Eigen::MatrixXd& f_a, const Eigen::MatrixXd& f_v,
                             double temperature) {
    return symmetric_contrastive_grad(f_a, f_v, temperature, nullptr, nullptr, nullptr);
}

Eigen::MatrixXd pearson_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.rows() != y.rows()) throw std::invalid_argument("pearson_matrix: sample count mismatch");
    const Eigen::Index S = x.rows();
    if (S < 2) throw std::invalid_argument("pearson_matrix: need at least 2 samples");

    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const double denom = static_cast<double>(S - 1);
    const Eigen::MatrixXd cov = (xc.transpose() * yc) / denom;
    const Eigen::VectorXd sx = (xc.colwise().squaredNorm() / denom).cwiseSqrt();
    const Eigen::VectorXd sy = (yc.colwise().squaredNorm() / denom).cwiseSqrt();

    Eigen::MatrixXd p(x.cols(), y.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            p(i, j) = cov(i, j) / (sx[i] * sy[j] + kPearsonEps);
        }
    }
    return p;
}

MemoryBank::MemoryBank(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("MemoryBank: capacity must be >= 1");
}

void MemoryBank::push(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l) {
    if (f_nl.rows() != f_l.rows()) throw std::invalid_argument("MemoryBank: row count mismatch");
    entries_.emplace_back(f_nl, f_l);
    while (static_cast<int>(entries_.size()) > capacity_ - 1) {
        entries_.pop_front();
    }
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> MemoryBank::assemble(
    const Eigen::MatrixXd& cur_nl, const Eigen::MatrixXd& cur_l) const {
    Eigen::Index rows = cur_nl.rows();
    for (const auto& e : entries_) rows += e.first.rows();
    Eigen::MatrixXd all_nl(rows, cur_nl.cols());
    Eigen::MatrixXd all_l(rows, cur_l.cols());
    Eigen::Index at = 0;
    for (const auto& e : entries_) {
        all_nl.middleRows(at, e.first.rows()) = e.first;
        all_l.middleRows(at, e.second.rows()) = e.second;
        at += e.first.rows();
    }
    all_nl.middleRows(at, cur_nl.rows()) = cur_nl;
    all_l.middleRows(at, cur_l.rows()) = cur_l;
    return {std::move(all_nl), std::move(all_l)};
}

double orthogonal_loss_grad(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l,
                            const MemoryBank& bank, Eigen::MatrixXd* d_nl,
                            Eigen::MatrixXd* d_l) {
    if (f_nl.rows() != f_l.rows()) throw std::invalid_argument("orthogonal_loss: row mismatch");
    auto [x, y] = bank.assemble(f_nl, f_l);
    const Eigen::Index S = x.rows();
    if (S < 2) throw std::invalid_argument("orthogonal_loss: need at least 2 samples");
    const Eigen::Index d_v = x.cols();
    const Eigen::Index d_a = y.cols();
    const double denom = static_cast<double>(S - 1);

    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const Eigen::MatrixXd cov = (xc.transpose() * yc) / denom;
    const Eigen::VectorXd sx = (xc.colwise().squaredNorm() / denom).cwiseSqrt();
    const Eigen::VectorXd sy = (yc.colwise().squaredNorm() / denom).cwiseSqrt();

    Eigen::MatrixXd p(d_v, d_a), u(d_v, d_a);
    for (Eigen::Index i = 0; i < d_v; ++i) {
        for (Eigen::Index j = 0; j < d_a; ++j) {
            u(i, j) = sx[i] * sy[j] + kPearsonEps;
            p(i, j) = cov(i, j) / u(i, j);
        }
    }
    const double loss = p.squaredNorm() / static_cast<double>(d_v);

    if (d_nl != nullptr || d_l != nullptr) {
        // dL/dP = (2/d_v) P; chain through cov and through the sigmas.
        const Eigen::MatrixXd g = (2.0 / static_cast<double>(d_v)) * p;
        const Eigen::MatrixXd a = g.cwiseQuotient(u) / denom;

        if (d_nl != nullptr) {
            Eigen::VectorXd bx(d_v);
            for (Eigen::Index i = 0; i < d_v; ++i) {
                double s = 0.0;
                for (Eigen::Index j = 0; j < d_a; ++j) {
                    s += g(i, j) * p(i, j) * sy[j] / (u(i, j) * denom * sx[i]);
                }
                bx[i] = s;
            }
            Eigen::MatrixXd dx = yc * a.transpose();
            dx -= xc * bx.asDiagonal();
            *d_nl = dx.bottomRows(f_nl.rows());
        }
        if (d_l != nullptr) {
            Eigen::VectorXd by(d_a);
            for (Eigen::Index j = 0; j < d_a; ++j) {
                double s = 0.0;
                for (Eigen::Index i = 0; i < d_v; ++i) {
                    s += g(i, j) * p(i, j) * sx[i] / (u(i, j) * denom * sy[j]);
                }
                by[j] = s;
            }
            Eigen::MatrixXd dy = xc * a;
            dy -= yc * by.asDiagonal();
            *d_l = dy.bottomRows(f_l.rows());
        }
    }
    return loss;
}

double orthogonal_loss(const Eigen::MatrixXd& f_nl, const Eigen::MatrixXd& f_l,
                       MemoryBank& bank) {
    const double loss = orthogonal_loss_grad(f_nl, f_l, bank, nullptr, nullptr);
    bank.push(f_nl, f_l);
    return loss;
}

double feature_l1(const Eigen::VectorXd& feat_gt, const Eigen::VectorXd& feat_gen) {
    if (feat_gt.size() != feat_gen.size()) {
        throw std::invalid_argument("feature_l1: dim mismatch");
    }
    return (feat_gt - feat_gen).lpNorm<1>();
}

double combine_weighted(const std::map<std::string, double>& terms, const LossWeights& weights) {
    double total = 0.0;
    for (const auto& [name, value] : terms) {
        if (name == "ol") {
            total += weights.ol * value;
        } else if (name == "gaze") {
            total += weights.gaze * value;
        } else if (name == "l1") {
            total += weights.l1 * value;
        } else if (name == "gan") {
            total += weights.gan * value;
        } else if (name == "vgg") {
            total += weights.vgg * value;
        } else {
            throw std::invalid_argument("combine_weighted: unknown term '" + name + "'");
        }
    }
    return total;
}

ProjectionHeads::ProjectionHeads(const HeadConfig& cfg) : cfg_(cfg) {
    register_head(params_, "head_l", cfg.d_visual, cfg.hidden, cfg.d_l);
    register_head(params_, "head_nl", cfg.d_visual, cfg.hidden, cfg.d_nl);
}

ProjectionHeads ProjectionHeads::init(const HeadConfig& cfg, Rng& rng) {
    ProjectionHeads h(cfg);
    init_head(h.params_, "head_l", rng);
    init_head(h.params_, "head_nl", rng);
    return h;
}

Eigen::MatrixXd ProjectionHeads::project_l(const Eigen::MatrixXd& visual) const {
    return mlp2_forward(visual, params_.view("head_l.w1"), params_.view("head_l.b1"),
                        params_.view("head_l.w2"), params_.view("head_l.b2"), nullptr);
}

Eigen::MatrixXd ProjectionHeads::project_nl(const Eigen::MatrixXd& visual) const {
    return mlp2_forward(visual, params_.view("head_nl.w1"), params_.view("head_nl.b1"),
                        params_.view("head_nl.w2"), params_.view("head_nl.b2"), nullptr);
}

struct DisentangleTrainer::Opt {
    AdamState adam;
    Opt(std::size_t n, AdamConfig cfg) : adam(n, cfg) {}
};

DisentangleTrainer::DisentangleTrainer(const DisentangleTrainConfig& cfg, Rng& rng)
    : cfg_(cfg), bank_(cfg.bank_capacity) {
    const auto& h = cfg.heads;
    register_head(params_, "head_l", h.d_visual, h.hidden, h.d_l);
    register_head(params_, "head_nl", h.d_visual, h.hidden, h.d_nl);
    params_.add("dec.w", h.d_l + h.d_nl, h.d_visual);
    params_.add("dec.b", 1, h.d_visual);
    params_.add("log_tau", 1, 1);

    init_head(params_, "head_l", rng);
    init_head(params_, "head_nl", rng);
    MatRef dec = params_.view("dec.w");
    const double scale = 1.0 / std::sqrt(static_cast<double>(dec.rows()));
    for (Eigen::Index i = 0; i < dec.rows(); ++i) {
        for (Eigen::Index j = 0; j < dec.cols(); ++j) {
            dec(i, j) = rng.normal() * scale;
        }
    }
    params_.view("log_tau")(0, 0) = std::log(cfg.tau_init);

    AdamConfig ac;
    ac.lr = cfg.lr;
    opt_ = std::make_shared<Opt>(params_.size(), ac);
}

DisentangleTrainer::Losses DisentangleTrainer::step(const Eigen::MatrixXd& lip,
                                                    const Eigen::MatrixXd& visual) {
    if (lip.rows() != visual.rows()) throw std::invalid_argument("step: batch size mismatch");
    const Eigen::Index N = visual.rows();
    const int d_l = cfg_.heads.d_l;
    const int d_nl = cfg_.heads.d_nl;
    const ParamStore& cp = params_;

    Mlp2Cache cache_l, cache_nl;
    const Eigen::MatrixXd f_l =
        mlp2_forward(visual, cp.view("head_l.w1"), cp.view("head_l.b1"),
                     cp.view("head_l.w2"), cp.view("head_l.b2"), &cache_l);
    const Eigen::MatrixXd f_nl =
        mlp2_forward(visual, cp.view("head_nl.w1"), cp.view("head_nl.b1"),
                     cp.view("head_nl.w2"), cp.view("head_nl.b2"), &cache_nl);

    const double tau = temperature();

    Losses losses;
    Eigen::MatrixXd d_fl = Eigen::MatrixXd::Zero(N, d_l);
    Eigen::MatrixXd d_fnl = Eigen::MatrixXd::Zero(N, d_nl);
    GradStore grads(params_);

    {
        Eigen::MatrixXd d_fl_cl;
        double d_tau = 0.0;
        losses.contrastive =
            symmetric_contrastive_grad(lip, f_l, tau, nullptr, &d_fl_cl, &d_tau);
        d_fl += cfg_.lambda_cl * d_fl_cl;
        grads.view("log_tau")(0, 0) += cfg_.lambda_cl * d_tau * tau;
    }
    {
        Eigen::MatrixXd d_fnl_ol;
        losses.orthogonal = orthogonal_loss_grad(f_nl, lip, bank_, &d_fnl_ol, nullptr);
        d_fnl += cfg_.lambda_ol * d_fnl_ol;
    }
    {
        Eigen::MatrixXd joint(N, d_l + d_nl);
        joint.leftCols(d_l) = f_l;
        joint.rightCols(d_nl) = f_nl;
        Eigen::MatrixXd recon = joint * cp.view("dec.w");
        recon.rowwise() += cp.view("dec.b").row(0);
        const Eigen::MatrixXd err = recon - visual;
        losses.reconstruction = err.squaredNorm() / static_cast<double>(err.size());
        const Eigen::MatrixXd d_recon =
            (2.0 * cfg_.lambda_rec / static_cast<double>(err.size())) * err;
        grads.view("dec.w") += joint.transpose() * d_recon;
        grads.view("dec.b").row(0) += d_recon.colwise().sum();
        const Eigen::MatrixXd d_joint = d_recon * cp.view("dec.w").transpose();
        d_fl += d_joint.leftCols(d_l);
        d_fnl += d_joint.rightCols(d_nl);
    }

    mlp2_backward(cache_l, d_fl, cp.view("head_l.w1"), cp.view("head_l.w2"),
                  grads.view("head_l.w1"), grads.view("head_l.b1"), grads.view("head_l.w2"),
                  grads.view("head_l.b2"));
    mlp2_backward(cache_nl, d_fnl, cp.view("head_nl.w1"), cp.view("head_nl.w2"),
                  grads.view("head_nl.w1"), grads.view("head_nl.b1"), grads.view("head_nl.w2"),
                  grads.view("head_nl.b2"));

    opt_->adam.apply(params_.flat(), grads.flat());
    // Keep the temperature in a sane range, mirroring the usual clamp on the
    // learned logit scale.
    double& lt = params_.view("log_tau")(0, 0);
    lt = std::min(std::max(lt, std::log(0.01)), std::log(100.0));

    bank_.push(f_nl, lip);

    losses.total = cfg_.lambda_cl * losses.contrastive + cfg_.lambda_ol * losses.orthogonal +
                   cfg_.lambda_rec * losses.reconstruction;
    return losses;
}

Eigen::MatrixXd DisentangleTrainer::project_l(const Eigen::MatrixXd& visual) const {
    return mlp2_forward(visual, params_.view("head_l.w1"), params_.view("head_l.b1"),
                        params_.view("head_l.w2"), params_.view("head_l.b2"), nullptr);
}

Eigen::MatrixXd DisentangleTrainer::project_nl(const Eigen::MatrixXd& visual) const {
    return mlp2_forward(visual, params_.view("head_nl.w1"), params_.view("head_nl.b1"),
                        params_.view("head_nl.w2"), params_.view("head_nl.b2"), nullptr);
}

double DisentangleTrainer::temperature() const {
    return std::exp(params_.view("log_tau")(0, 0));
}

DisentangleEval evaluate_disentanglement(const DisentangleTrainer& trainer,
                                         const Eigen::MatrixXd& visual,
                                         const Eigen::MatrixXd& lip,
                                         const Eigen::MatrixXd& nonlip) {
    DisentangleEval ev;
    const Eigen::MatrixXd f_nl = trainer.project_nl(visual);
    const Eigen::MatrixXd p = pearson_matrix(f_nl, lip);
    ev.mean_sq_cross_pearson = p.squaredNorm() / static_cast<double>(p.size());

    // Least-squares probe with intercept.
    Eigen::MatrixXd design(f_nl.rows(), f_nl.cols() + 1);
    design.leftCols(f_nl.cols()) = f_nl;
    design.col(f_nl.cols()).setOnes();
    const Eigen::MatrixXd w = design.colPivHouseholderQr().solve(nonlip);
    const Eigen::MatrixXd resid = nonlip - design * w;
    const Eigen::MatrixXd centered = nonlip.rowwise() - nonlip.colwise().mean();
    ev.probe_r2 = 1.0 - resid.squaredNorm() / centered.squaredNorm();
    return ev;
}

}  // namespace a2nl
