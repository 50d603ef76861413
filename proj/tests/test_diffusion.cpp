#include <doctest.h>

#include <cmath>

#include "a2nl/diffusion.hpp"
#include "a2nl/world.hpp"
#include "support/gradcheck.hpp"

using namespace a2nl;

namespace {

DenoiserConfig tiny_config(AttentionMode mode = AttentionMode::bidirectional) {
    DenoiserConfig cfg;
    cfg.num_layers = 1;
    cfg.token_dim = 32;
    cfg.ffn_dim = 64;
    cfg.num_heads = 2;
    cfg.max_len = 16;
    cfg.d_v = 3;
    cfg.d_a = 2;
    cfg.attention_mode = mode;
    return cfg;
}

TrainBatch random_batch(Rng& rng, int B, int L, int d_v, int d_a, bool hints = false) {
    TrainBatch batch;
    for (int b = 0; b < B; ++b) {
        batch.n0.push_back(rng.randn(L, d_v));
        batch.cond.push_back(rng.randn(L, d_a));
    }
    if (hints) {
        batch.hints.resize(B);
        for (auto& h : batch.hints) {
            h.resize(L);
            for (int i = 0; i < L; ++i) h[i] = rng.uniform() < 0.1 ? 1 : 0;
        }
    }
    return batch;
}

}  // namespace

TEST_SUITE_BEGIN("diffusion");

TEST_CASE("loss oracle: perfect prediction and constant offset") {
    Rng rng(1);
    TrainBatch batch = random_batch(rng, 3, 6, 3, 2);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 100);
    Rng draw_rng(2);
    const DiffusionDraws draws = sample_draws(batch, sched, 0.1, draw_rng);

    int call = 0;
    const DenoiseFn oracle = [&](const Eigen::MatrixXd&, int,
                                 const Eigen::MatrixXd*) -> Eigen::MatrixXd {
        return batch.n0[static_cast<std::size_t>(call++)];
    };
    CHECK(diffusion_losses_with(oracle, batch, sched, draws).first == 0.0);

    call = 0;
    const double c = 0.75;
    const DenoiseFn offset = [&](const Eigen::MatrixXd&, int,
                                 const Eigen::MatrixXd*) -> Eigen::MatrixXd {
        return batch.n0[static_cast<std::size_t>(call++)].array() + c;
    };
    const auto [simple, vel] = diffusion_losses_with(offset, batch, sched, draws);
    CHECK(simple == doctest::Approx(c * c).epsilon(1e-12));
    CHECK(vel == doctest::Approx(0.0).epsilon(1e-12));  // constant offsets keep deltas
}

TEST_CASE("loss_simple is deterministic per seed and matches the reference path") {
    Rng rng(3);
    Denoiser model = Denoiser::init(tiny_config(), rng);
    TrainBatch batch = random_batch(rng, 4, 8, 3, 2, /*hints=*/true);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 50);

    Rng r1(77), r2(77), r3(77);
    const double a = loss_simple(model, batch, sched, r1);
    const double b = loss_simple(model, batch, sched, r2);
    CHECK(a == b);

    const DiffusionDraws draws = sample_draws(batch, sched, 0.1, r3);
    const DenoiseFn fn = [&](const Eigen::MatrixXd& nt, int t, const Eigen::MatrixXd* cond) {
        return model.denoise(nt, t, cond);
    };
    const double ref = diffusion_losses_with(fn, batch, sched, draws).first;
    CHECK(a == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("loss_velocity hand cases") {
    std::vector<Eigen::MatrixXd> pred(1), gt(1);
    pred[0] = Eigen::MatrixXd(2, 1);
    pred[0] << 0.0, 1.0;
    gt[0] = Eigen::MatrixXd::Zero(2, 1);
    CHECK(loss_velocity(pred, gt) == doctest::Approx(1.0).epsilon(1e-15));

    Rng rng(4);
    std::vector<Eigen::MatrixXd> p2{rng.randn(7, 3)}, g2;
    g2.push_back(p2[0]);
    CHECK(loss_velocity(p2, g2) == 0.0);

    std::vector<Eigen::MatrixXd> p3{p2[0].array() + 2.5}, g3{p2[0]};
    CHECK(loss_velocity(p3, g3) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<Eigen::MatrixXd> short_p{rng.randn(1, 3)}, short_g{rng.randn(1, 3)};
    CHECK_THROWS_AS(loss_velocity(short_p, short_g), std::invalid_argument);
}

TEST_CASE("train_step reports the pre-update loss exactly") {
    Rng rng(5);
    Denoiser model = Denoiser::init(tiny_config(), rng);
    Denoiser before = model;
    TrainBatch batch = random_batch(rng, 4, 8, 3, 2, /*hints=*/true);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 60);

    AdamState opt(model.param_count());
    Rng r1(123), r2(123);
    const StepResult res = train_step(model, batch, sched, opt, r1);

    const DiffusionDraws draws = sample_draws(batch, sched, 0.1, r2);
    const auto [simple, vel] = diffusion_losses(before, batch, sched, draws);
    CHECK(res.loss_simple == simple);
    CHECK(res.loss_velocity == vel);
    CHECK(res.loss == simple + vel);
    CHECK(model.params().flat() != before.params().flat());
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    Rng rng(6);
    Denoiser model = Denoiser::init(tiny_config(), rng);
    const std::vector<double> before = model.params().flat();
    TrainBatch batch = random_batch(rng, 2, 6, 3, 2);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 40);
    AdamConfig ac;
    ac.lr = 0.0;
    AdamState opt(model.param_count(), ac);
    Rng r(9);
    train_step(model, batch, sched, opt, r);
    CHECK(model.params().flat() == before);
}

TEST_CASE("smoothed loss decreases over 200 steps on a 1-mode world") {
    WorldConfig wc;
    wc.seed = 15;
    wc.L = 12;
    wc.d_a = 2;
    wc.d_v = 3;
    wc.M = 1;
    wc.noise_sigma = 0.05;
    const World world(wc);
    const auto dataset = world.gen_dataset(64);

    DenoiserConfig mc = tiny_config();
    mc.max_len = 16;
    Rng rng(20);
    Denoiser model = Denoiser::init(mc, rng);
    AdamConfig ac;
    ac.lr = 1e-3;
    AdamState opt(model.param_count(), ac);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 200);

    std::vector<double> losses;
    const Rng root(31);
    for (int step = 0; step < 200; ++step) {
        Rng batch_rng = root.split("batch", step);
        TrainBatch batch;
        for (int k = 0; k < 16; ++k) {
            const auto idx = batch_rng.uniform_int(dataset.size());
            batch.n0.push_back(dataset[idx].target);
            batch.cond.push_back(dataset[idx].cond);
        }
        Rng draw_rng = root.split("draws", step);
        losses.push_back(train_step(model, batch, sched, opt, draw_rng).loss);
    }

    const auto window = [&](std::size_t at) {
        double s = 0.0;
        for (std::size_t i = at; i < at + 50; ++i) s += losses[i];
        return s / 50.0;
    };
    // The smoothed series decreases monotonically across disjoint windows;
    // adjacent strides of window means still carry the sampling noise of the
    // random time-step draws.
    for (std::size_t k = 0; k + 100 <= losses.size(); k += 50) {
        CHECK(window(k + 50) < window(k));
    }
}

TEST_CASE("guide identities and affinity") {
    Rng rng(7);
    const Eigen::MatrixXd a = rng.randn(5, 3), b = rng.randn(5, 3);
    CHECK((guide(a, b, 1.0) - a).cwiseAbs().maxCoeff() == 0.0);
    CHECK((guide(a, b, 0.0) - b).cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd c(1, 1), u(1, 1);
    c << 2.0;
    u << 1.0;
    CHECK(guide(c, u, 3.0)(0, 0) == doctest::Approx(4.0).epsilon(1e-15));

    const Eigen::MatrixXd x = rng.randn(4, 2), y = rng.randn(4, 2);
    const Eigen::MatrixXd p = rng.randn(4, 2), q = rng.randn(4, 2);
    const Eigen::MatrixXd lhs = guide(x, y, 1.7) + guide(p, q, 1.7);
    const Eigen::MatrixXd rhs = guide(x + p, y + q, 1.7);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(guide(rng.randn(3, 2), rng.randn(2, 2), 1.0), std::invalid_argument);
}

TEST_CASE("sampling is deterministic per seed and seeds differ") {
    Rng rng(8);
    const Denoiser model = Denoiser::init(tiny_config(), rng);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 30);
    const Eigen::MatrixXd cond = rng.randn(10, 2);
    SamplerConfig cfg;
    cfg.guidance = 1.5;

    Rng r1(55), r2(55), r3(56);
    const Eigen::MatrixXd a = sample(model, cond, sched, cfg, r1);
    const Eigen::MatrixXd b = sample(model, cond, sched, cfg, r2);
    const Eigen::MatrixXd c = sample(model, cond, sched, cfg, r3);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("mask editing clamps frames exactly") {
    Rng rng(9);
    const Denoiser model = Denoiser::init(tiny_config(), rng);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 25);
    const Eigen::MatrixXd cond = rng.randn(8, 2);

    SamplerConfig cfg;
    FrameClamp clamp;
    clamp.frame = 3;
    clamp.value = Eigen::Vector3d(0.4, -1.2, 2.0);
    cfg.mask_editing = {clamp};

    Rng r(77);
    const Eigen::MatrixXd out = sample(model, cond, sched, cfg, r);
    CHECK((out.row(3).transpose() - clamp.value).cwiseAbs().maxCoeff() == 0.0);

    SamplerConfig bad = cfg;
    bad.mask_editing[0].frame = 99;
    Rng r2(77);
    CHECK_THROWS_AS(sample(model, cond, sched, bad, r2), std::invalid_argument);
}

TEST_CASE("guidance scale 1 never evaluates the null branch") {
    Rng rng(10);
    const Denoiser model = Denoiser::init(tiny_config(), rng);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 20);
    const Eigen::MatrixXd cond = rng.randn(6, 2);

    SamplerConfig cfg;
    cfg.guidance = 1.0;
    SampleStats stats;
    Rng r(3);
    sample(model, cond, sched, cfg, r, &stats);
    CHECK(stats.null_evals == 0);
    CHECK(stats.cond_evals == 20);

    cfg.guidance = 1.5;
    SampleStats stats2;
    Rng r2(3);
    sample(model, cond, sched, cfg, r2, &stats2);
    CHECK(stats2.null_evals == 20);
}

TEST_CASE("reduced-step sampling uses a strided grid and stays deterministic") {
    Rng rng(11);
    const Denoiser model = Denoiser::init(tiny_config(), rng);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 100);
    const Eigen::MatrixXd cond = rng.randn(6, 2);
    SamplerConfig cfg;
    cfg.steps = 7;
    SampleStats stats;
    Rng r1(4), r2(4);
    const Eigen::MatrixXd a = sample(model, cond, sched, cfg, r1, &stats);
    const Eigen::MatrixXd b = sample(model, cond, sched, cfg, r2);
    CHECK(stats.cond_evals == 7);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

    SamplerConfig bad;
    bad.steps = 101;
    Rng r3(4);
    CHECK_THROWS_AS(sample(model, cond, sched, bad, r3), std::invalid_argument);
}

TEST_CASE("long generation stitches segments through a shared frame") {
    Rng rng(12);
    const Denoiser model = Denoiser::init(tiny_config(), rng);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 25);
    const Eigen::MatrixXd cond0 = rng.randn(9, 2);
    const Eigen::MatrixXd cond1 = rng.randn(9, 2);
    SamplerConfig cfg;

    Rng r1(99);
    const Eigen::MatrixXd full = generate_long(model, {cond0, cond1}, sched, cfg, r1);
    CHECK(full.rows() == 9 + 9 - 1);

    // Reconstruct the two segments the long path must have produced.
    Rng r2(99);
    const Eigen::MatrixXd seg0 = sample(model, cond0, sched, cfg, r2);
    SamplerConfig cfg1 = cfg;
    cfg1.mask_editing = {FrameClamp{0, seg0.bottomRows(1).transpose()}};
    Rng r3 = Rng(99).split("segment", 1);
    const Eigen::MatrixXd seg1 = sample(model, cond1, sched, cfg1, r3);

    CHECK((seg1.row(0) - seg0.row(8)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((full.topRows(9) - seg0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((full.bottomRows(8) - seg1.bottomRows(8)).cwiseAbs().maxCoeff() == 0.0);

    Rng r4(99);
    const Eigen::MatrixXd single = generate_long(model, {cond0}, sched, cfg, r4);
    CHECK((single - seg0).cwiseAbs().maxCoeff() == 0.0);

    Rng r5(99);
    CHECK_THROWS_AS(generate_long(model, {}, sched, cfg, r5), std::invalid_argument);
}

TEST_CASE("ar training oracle and validation") {
    Rng rng(13);
    Denoiser model = Denoiser::init(tiny_config(AttentionMode::causal), rng);
    TrainBatch batch = random_batch(rng, 3, 7, 3, 2);

    int call = 0;
    const DenoiseFn oracle = [&](const Eigen::MatrixXd&, int,
                                 const Eigen::MatrixXd*) -> Eigen::MatrixXd {
        return batch.n0[static_cast<std::size_t>(call++)];
    };
    CHECK(ar_loss_with(oracle, model, batch) == 0.0);

    Denoiser bidir = Denoiser::init(tiny_config(), rng);
    AdamState opt(bidir.param_count());
    Rng r(1);
    CHECK_THROWS_AS(ar_train_step(bidir, batch, opt, r), std::invalid_argument);

    const std::vector<double> before = model.params().flat();
    AdamConfig ac;
    ac.lr = 0.0;
    AdamState opt0(model.param_count(), ac);
    ar_train_step(model, batch, opt0, r);
    CHECK(model.params().flat() == before);
}

TEST_CASE("ar loss decreases over 200 steps on a 1-mode world") {
    WorldConfig wc;
    wc.seed = 16;
    wc.L = 12;
    wc.d_a = 2;
    wc.d_v = 3;
    wc.M = 1;
    wc.noise_sigma = 0.05;
    const World world(wc);
    const auto dataset = world.gen_dataset(64);

    Rng rng(21);
    Denoiser model = Denoiser::init(tiny_config(AttentionMode::causal), rng);
    AdamConfig ac;
    ac.lr = 1e-3;
    AdamState opt(model.param_count(), ac);

    std::vector<double> losses;
    const Rng root(32);
    for (int step = 0; step < 200; ++step) {
        Rng batch_rng = root.split("batch", step);
        TrainBatch batch;
        for (int k = 0; k < 16; ++k) {
            const auto idx = batch_rng.uniform_int(dataset.size());
            batch.n0.push_back(dataset[idx].target);
            batch.cond.push_back(dataset[idx].cond);
        }
        Rng draw_rng = root.split("draws", step);
        losses.push_back(ar_train_step(model, batch, opt, draw_rng).loss);
    }
    const auto window = [&](std::size_t at) {
        double s = 0.0;
        for (std::size_t i = at; i < at + 50; ++i) s += losses[i];
        return s / 50.0;
    };
    CHECK(window(losses.size() - 50) < window(0));
}

TEST_CASE("ar rollout is causal, deterministic, and length-preserving") {
    Rng rng(14);
    const Denoiser model = Denoiser::init(tiny_config(AttentionMode::causal), rng);
    const Eigen::MatrixXd cond = rng.randn(10, 2);

    const Eigen::MatrixXd full = ar_generate(model, cond);
    CHECK(full.rows() == 10);
    CHECK(full.cols() == 3);

    const Eigen::MatrixXd again = ar_generate(model, cond);
    CHECK((full - again).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::MatrixXd prefix = ar_generate(model, cond.topRows(6));
    CHECK((prefix - full.topRows(6)).cwiseAbs().maxCoeff() == 0.0);

    const Denoiser bidir = Denoiser::init(tiny_config(), rng);
    CHECK_THROWS_AS(ar_generate(bidir, cond), std::invalid_argument);
}

TEST_CASE("empty batch is rejected") {
    TrainBatch batch;
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 10);
    Rng rng(1);
    CHECK_THROWS_AS(sample_draws(batch, sched, 0.1, rng), std::invalid_argument);
}

TEST_CASE("gradients of L_simple plus L_vel match finite differences") {
    const DenoiserConfig cfg = DenoiserConfig::desk(8, 8);
    Rng rng(22);
    Denoiser model = Denoiser::init(cfg, rng);
    TrainBatch batch = random_batch(rng, 2, 8, 8, 8, /*hints=*/true);
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 100);
    Rng draw_rng(5);
    const DiffusionDraws draws = sample_draws(batch, sched, 0.5, draw_rng);

    const LossGrads lg = diffusion_loss_grads(model, batch, sched, draws, true);
    const auto value = [&] {
        const auto [simple, vel] = diffusion_losses(model, batch, sched, draws);
        return simple + vel;
    };
    Rng pick(7);
    for (const auto& e : model.params().entries()) {
        const double worst = a2nl::testing::check_group(
            model.params().flat(), e.offset, static_cast<std::size_t>(e.rows * e.cols),
            lg.grads.flat(), value, pick);
        INFO("group " << e.name);
        CHECK(worst <= 1e-4);
    }
}

TEST_SUITE_END();
