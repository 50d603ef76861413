#include "a2nl/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "a2nl/rng.hpp"

namespace a2nl {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// y = gamma .* xhat + beta per row; caches xhat and rstd.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, ConstMatRef gamma, ConstMatRef beta,
                           Eigen::MatrixXd& xhat, Eigen::VectorXd& rstd) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index dim = x.cols();
    xhat.resize(rows, dim);
    rstd.resize(rows);
    Eigen::MatrixXd out(rows, dim);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        rstd[r] = rs;
        xhat.row(r) = (x.row(r).array() - mu) * rs;
        out.row(r) = xhat.row(r).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
    return out;
}

// Backpropagates through layer_norm; returns dx and accumulates dgamma/dbeta.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& rstd, ConstMatRef gamma,
                                    MatRef dgamma, MatRef dbeta) {
    const Eigen::Index rows = dy.rows();
    const Eigen::Index dim = dy.cols();
    Eigen::MatrixXd dx(rows, dim);
    for (Eigen::Index r = 0; r < rows; ++r) {
        dgamma.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
        dbeta.row(0) += dy.row(r);
        const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma.row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = rstd[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
}

std::string layer_key(int layer, const char* suffix) {
    return "layer" + std::to_string(layer) + "." + suffix;
}

}  // namespace

DenoiserConfig DenoiserConfig::desk(int d_v, int d_a) {
    DenoiserConfig c;
    c.num_layers = 2;
    c.token_dim = 64;
    c.ffn_dim = 128;
    c.num_heads = 4;
    c.max_len = 32;
    c.d_v = d_v;
    c.d_a = d_a;
    return c;
}

DenoiserConfig DenoiserConfig::paper(int d_v, int d_a) {
    DenoiserConfig c;
    c.num_layers = 6;
    c.token_dim = 512;
    c.ffn_dim = 1024;
    c.num_heads = 8;
    c.max_len = 128;
    c.d_v = d_v;
    c.d_a = d_a;
    return c;
}

void DenoiserConfig::validate() const {
    if (num_layers < 1 || token_dim < 1 || ffn_dim < 1 || num_heads < 1 ||
        max_len < 1 || d_v < 1 || d_a < 1) {
        throw std::invalid_argument("DenoiserConfig: all dimensions must be positive");
    }
    if (token_dim % num_heads != 0) {
        throw std::invalid_argument("DenoiserConfig: token_dim must be divisible by num_heads");
    }
    if (token_dim % 2 != 0) {
        throw std::invalid_argument("DenoiserConfig: token_dim must be even");
    }
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    register_params();
}

void Denoiser::register_params() {
    const int D = cfg_.token_dim;
    const int F = cfg_.ffn_dim;
    params_.add("in_proj.w", cfg_.d_a + cfg_.d_v, D);
    params_.add("in_proj.b", 1, D);
    params_.add("pos_emb", cfg_.max_len, D);
    params_.add("time_proj.w", D, cfg_.d_a);
    params_.add("time_proj.b", 1, cfg_.d_a);
    params_.add("null_token", 1, cfg_.d_a);
    params_.add("start_token", 1, cfg_.d_v);
    for (int l = 0; l < cfg_.num_layers; ++l) {
        params_.add(layer_key(l, "ln1.gamma"), 1, D);
        params_.add(layer_key(l, "ln1.beta"), 1, D);
        params_.add(layer_key(l, "attn.wq"), D, D);
        params_.add(layer_key(l, "attn.bq"), 1, D);
        params_.add(layer_key(l, "attn.wk"), D, D);
        params_.add(layer_key(l, "attn.bk"), 1, D);
        params_.add(layer_key(l, "attn.wv"), D, D);
        params_.add(layer_key(l, "attn.bv"), 1, D);
        params_.add(layer_key(l, "attn.wo"), D, D);
        params_.add(layer_key(l, "attn.bo"), 1, D);
        params_.add(layer_key(l, "ln2.gamma"), 1, D);
        params_.add(layer_key(l, "ln2.beta"), 1, D);
        params_.add(layer_key(l, "ffn.w1"), D, F);
        params_.add(layer_key(l, "ffn.b1"), 1, F);
        params_.add(layer_key(l, "ffn.w2"), F, D);
        params_.add(layer_key(l, "ffn.b2"), 1, D);
    }
    params_.add("final_ln.gamma", 1, D);
    params_.add("final_ln.beta", 1, D);
    params_.add("out_proj.w", D, cfg_.d_v);
    params_.add("out_proj.b", 1, cfg_.d_v);
}

Denoiser Denoiser::init(const DenoiserConfig& cfg, Rng& rng) {
    Denoiser d(cfg);
    for (const auto& e : d.params_.entries()) {
        MatRef w = d.params_.view(e.name);
        const bool is_gamma = e.name.ends_with("gamma");
        const bool is_bias = e.name.ends_with(".b") || e.name.ends_with("beta") ||
                             e.name.ends_with(".bq") || e.name.ends_with(".bk") ||
                             e.name.ends_with(".bv") || e.name.ends_with(".bo") ||
                             e.name.ends_with(".b1") || e.name.ends_with(".b2");
        if (is_gamma) {
            w.setOnes();
        } else if (is_bias) {
            w.setZero();
        } else {
            double scale = 1.0 / std::sqrt(static_cast<double>(w.rows()));
            if (e.name == "pos_emb") scale = 0.02;
            if (e.name == "null_token" || e.name == "start_token") scale = 1.0;
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    w(i, j) = rng.normal() * scale;
                }
            }
        }
    }
    return d;
}

Eigen::VectorXd Denoiser::time_basis(int t, int dim) {
    if (t < 0) throw std::invalid_argument("time_basis: t must be >= 0");
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time_basis: dim must be even");
    const int half = dim / 2;
    Eigen::VectorXd out(dim);
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        out[k] = std::sin(t * freq);
        out[half + k] = std::cos(t * freq);
    }
    return out;
}

Eigen::VectorXd Denoiser::embed_time(int t) const {
    const Eigen::VectorXd basis = time_basis(t, cfg_.token_dim);
    ConstMatRef w = params_.view("time_proj.w");
    ConstMatRef b = params_.view("time_proj.b");
    return (basis.transpose() * w + b.row(0)).transpose();
}

void Denoiser::validate_batch(const BatchInput& in) const {
    if (in.n_t == nullptr) throw std::invalid_argument("denoise: missing input");
    if (in.L < 1 || in.L > cfg_.max_len) {
        throw std::invalid_argument("denoise: sequence length exceeds max_len");
    }
    if (in.n_t->cols() != cfg_.d_v) throw std::invalid_argument("denoise: target dim mismatch");
    if (in.n_t->rows() % in.L != 0) throw std::invalid_argument("denoise: ragged batch");
    const int B = static_cast<int>(in.n_t->rows() / in.L);
    if (static_cast<int>(in.t.size()) != B) throw std::invalid_argument("denoise: t count mismatch");
    for (int t : in.t) {
        if (t < 0) throw std::invalid_argument("denoise: negative time step");
    }
    if (!in.cond_is_null.empty() && static_cast<int>(in.cond_is_null.size()) != B) {
        throw std::invalid_argument("denoise: cond flag count mismatch");
    }
    bool needs_cond = in.cond_is_null.empty();
    for (std::uint8_t f : in.cond_is_null) {
        if (!f) needs_cond = true;
    }
    if (needs_cond) {
        if (in.cond == nullptr) throw std::invalid_argument("denoise: missing condition");
        if (in.cond->rows() != in.n_t->rows() || in.cond->cols() != cfg_.d_a) {
            throw std::invalid_argument("denoise: condition shape mismatch");
        }
    }
}

Eigen::MatrixXd Denoiser::forward(const BatchInput& in) const {
    DenoiserTape tape;
    return forward(in, tape);
}

Eigen::MatrixXd Denoiser::forward(const BatchInput& in, DenoiserTape& tape) const {
    validate_batch(in);
    const int L = in.L;
    const int B = static_cast<int>(in.n_t->rows() / L);
    const int R = B * L;
    const int D = cfg_.token_dim;
    const int H = cfg_.num_heads;
    const int hd = D / H;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool causal = cfg_.attention_mode == AttentionMode::causal;

    tape.B = B;
    tape.L = L;
    tape.t = in.t;
    tape.cond_null = in.cond_is_null;
    if (tape.cond_null.empty()) tape.cond_null.assign(B, 0);

    ConstMatRef null_token = params_.view("null_token");
    ConstMatRef wt = params_.view("time_proj.w");
    ConstMatRef bt = params_.view("time_proj.b");

    // Fuse condition with the projected time embedding, concat with the noisy
    // frames, project to token space and add positional embeddings.
    tape.time_basis.resize(B);
    tape.x0.resize(R, cfg_.d_a + cfg_.d_v);
    for (int b = 0; b < B; ++b) {
        tape.time_basis[b] = time_basis(in.t[b], D);
        const Eigen::RowVectorXd tvec =
            tape.time_basis[b].transpose() * wt + bt.row(0);
        for (int i = 0; i < L; ++i) {
            const int r = b * L + i;
            if (tape.cond_null[b]) {
                tape.x0.row(r).head(cfg_.d_a) = null_token.row(0) + tvec;
            } else {
                tape.x0.row(r).head(cfg_.d_a) = in.cond->row(r) + tvec;
            }
            tape.x0.row(r).tail(cfg_.d_v) = in.n_t->row(r);
        }
    }

    ConstMatRef win = params_.view("in_proj.w");
    ConstMatRef bin = params_.view("in_proj.b");
    ConstMatRef pos = params_.view("pos_emb");

    Eigen::MatrixXd tok = tape.x0 * win;
    tok.rowwise() += bin.row(0);
    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < L; ++i) {
            tok.row(b * L + i) += pos.row(i);
        }
    }

    tape.layers.resize(cfg_.num_layers);
    for (int l = 0; l < cfg_.num_layers; ++l) {
        auto& tl = tape.layers[l];
        tl.y = layer_norm(tok, params_.view(layer_key(l, "ln1.gamma")),
                          params_.view(layer_key(l, "ln1.beta")), tl.ln1_xhat, tl.ln1_rstd);

        tl.q = tl.y * params_.view(layer_key(l, "attn.wq"));
        tl.q.rowwise() += params_.view(layer_key(l, "attn.bq")).row(0);
        tl.k = tl.y * params_.view(layer_key(l, "attn.wk"));
        tl.k.rowwise() += params_.view(layer_key(l, "attn.bk")).row(0);
        tl.v = tl.y * params_.view(layer_key(l, "attn.wv"));
        tl.v.rowwise() += params_.view(layer_key(l, "attn.bv")).row(0);

        tl.attn.assign(static_cast<std::size_t>(B) * H, Eigen::MatrixXd());
        tl.ocat.resize(R, D);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qb = tl.q.block(b * L, h * hd, L, hd);
                const auto kb = tl.k.block(b * L, h * hd, L, hd);
                const auto vb = tl.v.block(b * L, h * hd, L, hd);
                Eigen::MatrixXd scores = (qb * kb.transpose()) * att_scale;
                Eigen::MatrixXd& probs = tl.attn[static_cast<std::size_t>(b) * H + h];
                probs.resize(L, L);
                for (int i = 0; i < L; ++i) {
                    const int limit = causal ? i + 1 : L;
                    auto row = scores.row(i).head(limit);
                    const double mx = row.maxCoeff();
                    Eigen::RowVectorXd e = (row.array() - mx).exp();
                    probs.row(i).setZero();
                    probs.row(i).head(limit) = e / e.sum();
                }
                tl.ocat.block(b * L, h * hd, L, hd) = probs * vb;
            }
        }

        Eigen::MatrixXd proj = tl.ocat * params_.view(layer_key(l, "attn.wo"));
        proj.rowwise() += params_.view(layer_key(l, "attn.bo")).row(0);
        tok += proj;

        tl.z = layer_norm(tok, params_.view(layer_key(l, "ln2.gamma")),
                          params_.view(layer_key(l, "ln2.beta")), tl.ln2_xhat, tl.ln2_rstd);
        tl.f1 = tl.z * params_.view(layer_key(l, "ffn.w1"));
        tl.f1.rowwise() += params_.view(layer_key(l, "ffn.b1")).row(0);
        tl.g = tl.f1.unaryExpr([](double x) { return gelu(x); });
        Eigen::MatrixXd f2 = tl.g * params_.view(layer_key(l, "ffn.w2"));
        f2.rowwise() += params_.view(layer_key(l, "ffn.b2")).row(0);
        tok += f2;
    }

    tape.yf = layer_norm(tok, params_.view("final_ln.gamma"), params_.view("final_ln.beta"),
                         tape.lnf_xhat, tape.lnf_rstd);
    Eigen::MatrixXd out = tape.yf * params_.view("out_proj.w");
    out.rowwise() += params_.view("out_proj.b").row(0);
    return out;
}

void Denoiser::backward(const DenoiserTape& tape, const Eigen::MatrixXd& d_out,
                        GradStore& grads, Eigen::MatrixXd* d_n_t) const {
    const int B = tape.B;
    const int L = tape.L;
    const int D = cfg_.token_dim;
    const int H = cfg_.num_heads;
    const int hd = D / H;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    grads.view("out_proj.w") += tape.yf.transpose() * d_out;
    grads.view("out_proj.b").row(0) += d_out.colwise().sum();
    Eigen::MatrixXd d_yf = d_out * params_.view("out_proj.w").transpose();

    Eigen::MatrixXd d_tok = layer_norm_backward(
        d_yf, tape.lnf_xhat, tape.lnf_rstd, params_.view("final_ln.gamma"),
        grads.view("final_ln.gamma"), grads.view("final_ln.beta"));

    for (int l = cfg_.num_layers - 1; l >= 0; --l) {
        const auto& tl = tape.layers[l];

        // FFN branch.
        grads.view(layer_key(l, "ffn.w2")) += tl.g.transpose() * d_tok;
        grads.view(layer_key(l, "ffn.b2")).row(0) += d_tok.colwise().sum();
        Eigen::MatrixXd d_g = d_tok * params_.view(layer_key(l, "ffn.w2")).transpose();
        Eigen::MatrixXd d_f1 =
            d_g.cwiseProduct(tl.f1.unaryExpr([](double x) { return gelu_grad(x); }));
        grads.view(layer_key(l, "ffn.w1")) += tl.z.transpose() * d_f1;
        grads.view(layer_key(l, "ffn.b1")).row(0) += d_f1.colwise().sum();
        Eigen::MatrixXd d_z = d_f1 * params_.view(layer_key(l, "ffn.w1")).transpose();
        d_tok += layer_norm_backward(d_z, tl.ln2_xhat, tl.ln2_rstd,
                                     params_.view(layer_key(l, "ln2.gamma")),
                                     grads.view(layer_key(l, "ln2.gamma")),
                                     grads.view(layer_key(l, "ln2.beta")));

        // Attention branch.
        grads.view(layer_key(l, "attn.wo")) += tl.ocat.transpose() * d_tok;
        grads.view(layer_key(l, "attn.bo")).row(0) += d_tok.colwise().sum();
        Eigen::MatrixXd d_ocat = d_tok * params_.view(layer_key(l, "attn.wo")).transpose();

        Eigen::MatrixXd d_q(B * L, D), d_k(B * L, D), d_v(B * L, D);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const Eigen::MatrixXd& probs = tl.attn[static_cast<std::size_t>(b) * H + h];
                const auto qb = tl.q.block(b * L, h * hd, L, hd);
                const auto kb = tl.k.block(b * L, h * hd, L, hd);
                const auto vb = tl.v.block(b * L, h * hd, L, hd);
                const auto d_ob = d_ocat.block(b * L, h * hd, L, hd);

                Eigen::MatrixXd d_probs = d_ob * vb.transpose();
                d_v.block(b * L, h * hd, L, hd) = probs.transpose() * d_ob;

                // Softmax rows: ds = p .* (dp - rowsum(dp .* p)).
                Eigen::MatrixXd d_scores(L, L);
                for (int i = 0; i < L; ++i) {
                    const double dot = d_probs.row(i).cwiseProduct(probs.row(i)).sum();
                    d_scores.row(i) =
                        probs.row(i).cwiseProduct((d_probs.row(i).array() - dot).matrix());
                }
                d_q.block(b * L, h * hd, L, hd) = (d_scores * kb) * att_scale;
                d_k.block(b * L, h * hd, L, hd) = (d_scores.transpose() * qb) * att_scale;
            }
        }

        grads.view(layer_key(l, "attn.wq")) += tl.y.transpose() * d_q;
        grads.view(layer_key(l, "attn.bq")).row(0) += d_q.colwise().sum();
        grads.view(layer_key(l, "attn.wk")) += tl.y.transpose() * d_k;
        grads.view(layer_key(l, "attn.bk")).row(0) += d_k.colwise().sum();
        grads.view(layer_key(l, "attn.wv")) += tl.y.transpose() * d_v;
        grads.view(layer_key(l, "attn.bv")).row(0) += d_v.colwise().sum();

        Eigen::MatrixXd d_y = d_q * params_.view(layer_key(l, "attn.wq")).transpose() +
                              d_k * params_.view(layer_key(l, "attn.wk")).transpose() +
                              d_v * params_.view(layer_key(l, "attn.wv")).transpose();
        d_tok += layer_norm_backward(d_y, tl.ln1_xhat, tl.ln1_rstd,
                                     params_.view(layer_key(l, "ln1.gamma")),
                                     grads.view(layer_key(l, "ln1.gamma")),
                                     grads.view(layer_key(l, "ln1.beta")));
    }

    // Input stage.
    MatRef d_pos = grads.view("pos_emb");
    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < L; ++i) {
            d_pos.row(i) += d_tok.row(b * L + i);
        }
    }
    grads.view("in_proj.w") += tape.x0.transpose() * d_tok;
    grads.view("in_proj.b").row(0) += d_tok.colwise().sum();
    Eigen::MatrixXd d_x0 = d_tok * params_.view("in_proj.w").transpose();

    MatRef d_wt = grads.view("time_proj.w");
    MatRef d_bt = grads.view("time_proj.b");
    MatRef d_null = grads.view("null_token");
    for (int b = 0; b < B; ++b) {
        Eigen::RowVectorXd d_tvec = Eigen::RowVectorXd::Zero(cfg_.d_a);
        for (int i = 0; i < L; ++i) {
            const auto d_fused = d_x0.row(b * L + i).head(cfg_.d_a);
            d_tvec += d_fused;
            if (tape.cond_null[b]) {
                d_null.row(0) += d_fused;
            }
        }
        d_wt += tape.time_basis[b] * d_tvec;
        d_bt.row(0) += d_tvec;
    }

    if (d_n_t != nullptr) {
        *d_n_t = d_x0.rightCols(cfg_.d_v);
    }
}

Eigen::MatrixXd Denoiser::denoise(const Eigen::MatrixXd& n_t, int t,
                                  const Eigen::MatrixXd* cond) const {
    if (cond != nullptr && cond->rows() != n_t.rows()) {
        throw std::invalid_argument("denoise: condition length mismatch");
    }
    BatchInput in;
    in.n_t = &n_t;
    in.L = static_cast<int>(n_t.rows());
    in.t = {t};
    in.cond = cond;
    in.cond_is_null = {static_cast<std::uint8_t>(cond == nullptr ? 1 : 0)};
    return forward(in);
}

}  // namespace a2nl
