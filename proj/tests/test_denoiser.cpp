#include <doctest.h>

#include <cmath>

#include "a2nl/denoiser.hpp"
#include "a2nl/rng.hpp"
#include "support/gradcheck.hpp"

using namespace a2nl;

namespace {

DenoiserConfig small_config(AttentionMode mode = AttentionMode::bidirectional) {
    DenoiserConfig cfg = DenoiserConfig::desk(3, 2);
    cfg.attention_mode = mode;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("denoiser");

TEST_CASE("output shape matches the target sequence") {
    Rng rng(1);
    const Denoiser model = Denoiser::init(small_config(), rng);
    const Eigen::MatrixXd nt = rng.randn(10, 3);
    const Eigen::MatrixXd cond = rng.randn(10, 2);
    const Eigen::MatrixXd out = model.denoise(nt, 7, &cond);
    CHECK(out.rows() == 10);
    CHECK(out.cols() == 3);
}

TEST_CASE("causal mode ignores future frames bitwise") {
    Rng rng(2);
    const Denoiser model = Denoiser::init(small_config(AttentionMode::causal), rng);
    const Eigen::MatrixXd nt = rng.randn(12, 3);
    const Eigen::MatrixXd cond = rng.randn(12, 2);

    Eigen::MatrixXd nt2 = nt, cond2 = cond;
    nt2.bottomRows(4) = rng.randn(4, 3);
    cond2.bottomRows(4) = rng.randn(4, 2);

    const Eigen::MatrixXd a = model.denoise(nt, 3, &cond);
    const Eigen::MatrixXd b = model.denoise(nt2, 3, &cond2);
    CHECK((a.topRows(8) - b.topRows(8)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.bottomRows(4) - b.bottomRows(4)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("bidirectional mode lets the last frame influence the first") {
    Rng rng(3);
    const Denoiser model = Denoiser::init(small_config(), rng);
    Eigen::MatrixXd nt = rng.randn(8, 3);
    const Eigen::MatrixXd cond = rng.randn(8, 2);
    const Eigen::MatrixXd a = model.denoise(nt, 5, &cond);
    nt.row(7) += Eigen::RowVector3d(1.0, -2.0, 0.5);
    const Eigen::MatrixXd b = model.denoise(nt, 5, &cond);
    CHECK((a.row(0) - b.row(0)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("init is deterministic per seed") {
    Rng r1(42), r2(42), r3(43);
    const Denoiser a = Denoiser::init(small_config(), r1);
    const Denoiser b = Denoiser::init(small_config(), r2);
    const Denoiser c = Denoiser::init(small_config(), r3);
    CHECK(a.params().flat() == b.params().flat());
    CHECK(a.params().flat() != c.params().flat());
}

TEST_CASE("parameter count matches the closed form") {
    const DenoiserConfig cfg = DenoiserConfig::desk(8, 8);
    Rng rng(5);
    const Denoiser model = Denoiser::init(cfg, rng);

    const std::size_t D = cfg.token_dim, F = cfg.ffn_dim;
    const std::size_t d_v = cfg.d_v, d_a = cfg.d_a, M = cfg.max_len;
    const std::size_t per_layer = 2 * D                 // ln1
                                  + 4 * (D * D + D)     // attention projections
                                  + 2 * D               // ln2
                                  + D * F + F + F * D + D;  // ffn
    const std::size_t expected = (d_a + d_v) * D + D    // input projection
                                 + M * D                // positional embeddings
                                 + D * d_a + d_a        // time projection
                                 + d_a + d_v            // null and start tokens
                                 + cfg.num_layers * per_layer
                                 + 2 * D                // final norm
                                 + D * d_v + d_v;       // output projection
    CHECK(model.param_count() == expected);
}

TEST_CASE("time basis is phase zero at t=0") {
    const Eigen::VectorXd basis = Denoiser::time_basis(0, 8);
    CHECK((basis.head(4).cwiseAbs().maxCoeff()) == 0.0);  // sin half
    CHECK((basis.tail(4).array() - 1.0).abs().maxCoeff() == 0.0);  // cos half
}

TEST_CASE("embed_time separates steps and is deterministic") {
    Rng rng(6);
    const Denoiser model = Denoiser::init(small_config(), rng);
    const Eigen::VectorXd e0 = model.embed_time(0);
    const Eigen::VectorXd e1 = model.embed_time(1);
    const Eigen::VectorXd e0b = model.embed_time(0);
    CHECK((e0 - e0b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((e0 - e1).cwiseAbs().maxCoeff() > 0.0);

    // The projection of the all-phase-zero sinusoid.
    const Eigen::VectorXd basis = Denoiser::time_basis(0, model.config().token_dim);
    const Eigen::VectorXd expected =
        (basis.transpose() * model.params().view("time_proj.w") +
         model.params().view("time_proj.b").row(0))
            .transpose();
    CHECK((e0 - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("null condition ignores candidate values but tracks the null token") {
    Rng rng(7);
    Denoiser model = Denoiser::init(small_config(), rng);
    const Eigen::MatrixXd nt = rng.randn(6, 3);
    const Eigen::MatrixXd a = model.denoise(nt, 4, nullptr);

    // Any candidate condition is irrelevant when the null flag is set.
    const Eigen::MatrixXd cond = rng.randn(6, 2);
    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = 6;
    in.t = {4};
    in.cond = &cond;
    in.cond_is_null = {1};
    CHECK((model.forward(in) - a).cwiseAbs().maxCoeff() == 0.0);

    model.params().view("null_token")(0, 0) += 0.25;
    const Eigen::MatrixXd b = model.denoise(nt, 4, nullptr);
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("validation rejects bad inputs") {
    Rng rng(8);
    const Denoiser model = Denoiser::init(small_config(), rng);
    const Eigen::MatrixXd nt = rng.randn(6, 3);
    const Eigen::MatrixXd short_cond = rng.randn(5, 2);
    CHECK_THROWS_AS(model.denoise(nt, 1, &short_cond), std::invalid_argument);
    const Eigen::MatrixXd long_nt = rng.randn(40, 3);
    const Eigen::MatrixXd long_cond = rng.randn(40, 2);
    CHECK_THROWS_AS(model.denoise(long_nt, 1, &long_cond), std::invalid_argument);
    DenoiserConfig bad = small_config();
    bad.num_heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS([&] { return Denoiser{bad}; }(), std::invalid_argument);
}

TEST_CASE("parameter gradients match finite differences per group") {
    // Desk-scale config; scalar loss = sum of squared outputs.
    const DenoiserConfig cfg = DenoiserConfig::desk(8, 8);
    Rng rng(9);
    Denoiser model = Denoiser::init(cfg, rng);
    const int L = 8;
    const Eigen::MatrixXd nt = rng.randn(2 * L, 8);
    const Eigen::MatrixXd cond = rng.randn(2 * L, 8);

    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = L;
    in.t = {3, 250};
    in.cond = &cond;
    in.cond_is_null = {0, 1};  // exercise the null-token path too

    DenoiserTape tape;
    const Eigen::MatrixXd out = model.forward(in, tape);
    GradStore grads(model.params());
    model.backward(tape, 2.0 * out, grads);

    const auto value = [&] { return model.forward(in).squaredNorm(); };
    Rng pick(99);
    for (const auto& e : model.params().entries()) {
        const double worst = a2nl::testing::check_group(
            model.params().flat(), e.offset, static_cast<std::size_t>(e.rows * e.cols),
            grads.flat(), value, pick);
        INFO("group " << e.name);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("input gradients match finite differences") {
    const DenoiserConfig cfg = small_config(AttentionMode::causal);
    Rng rng(10);
    Denoiser model = Denoiser::init(cfg, rng);
    const int L = 5;
    Eigen::MatrixXd nt = rng.randn(L, 3);
    const Eigen::MatrixXd cond = rng.randn(L, 2);

    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = L;
    in.t = {0};
    in.cond = &cond;

    DenoiserTape tape;
    const Eigen::MatrixXd out = model.forward(in, tape);
    GradStore grads(model.params());
    Eigen::MatrixXd d_nt;
    model.backward(tape, 2.0 * out, grads, &d_nt);

    Rng pick(5);
    for (int k = 0; k < 6; ++k) {
        const int i = static_cast<int>(pick.uniform_int(L));
        const int j = static_cast<int>(pick.uniform_int(3));
        const double orig = nt(i, j);
        nt(i, j) = orig + 1e-5;
        const double up = model.forward(in).squaredNorm();
        nt(i, j) = orig - 1e-5;
        const double down = model.forward(in).squaredNorm();
        nt(i, j) = orig;
        const double fd = (up - down) / 2e-5;
        CHECK(a2nl::testing::rel_err(d_nt(i, j), fd) <= 1e-4);
    }
}

TEST_SUITE_END();
