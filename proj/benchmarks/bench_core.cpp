#include <benchmark/benchmark.h>

#include "a2nl/diffusion.hpp"
#include "a2nl/metrics.hpp"
#include "a2nl/world.hpp"

using namespace a2nl;

namespace {

Denoiser desk_model() {
    Rng rng(1);
    return Denoiser::init(DenoiserConfig::desk(8, 8), rng);
}

void BM_DenoiserForward(benchmark::State& state) {
    const Denoiser model = desk_model();
    const int B = static_cast<int>(state.range(0));
    const int L = 32;
    Rng rng(2);
    const Eigen::MatrixXd nt = rng.randn(B * L, 8);
    const Eigen::MatrixXd cond = rng.randn(B * L, 8);
    Denoiser::BatchInput in;
    in.n_t = &nt;
    in.L = L;
    in.t.assign(B, 500);
    in.cond = &cond;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(in));
    }
    state.SetItemsProcessed(state.iterations() * B * L);
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(8)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
    Denoiser model = desk_model();
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 1000);
    WorldConfig wc;
    const World world(wc);
    const auto data = world.gen_dataset(64);
    AdamState opt(model.param_count());
    const int B = static_cast<int>(state.range(0));
    long step = 0;
    for (auto _ : state) {
        Rng rng(100 + step++);
        TrainBatch batch;
        for (int k = 0; k < B; ++k) {
            const auto idx = rng.uniform_int(data.size());
            batch.n0.push_back(data[idx].target);
            batch.cond.push_back(data[idx].cond);
        }
        benchmark::DoNotOptimize(train_step(model, batch, sched, opt, rng));
    }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32);

void BM_Sample(benchmark::State& state) {
    const Denoiser model = desk_model();
    const NoiseSchedule sched = build_schedule(ScheduleKind::linear, 1000);
    WorldConfig wc;
    const World world(wc);
    Rng crng(3);
    const Eigen::MatrixXd cond = world.gen_condition(crng, 32);
    SamplerConfig cfg;
    cfg.steps = static_cast<int>(state.range(0));
    long seed = 0;
    for (auto _ : state) {
        Rng rng(seed++);
        benchmark::DoNotOptimize(sample(model, cond, sched, cfg, rng));
    }
}
BENCHMARK(BM_Sample)->Arg(25)->Arg(100);

void BM_FrechetDistance(benchmark::State& state) {
    Rng rng(4);
    const GaussianStats a = gaussian_stats(rng.randn(256, state.range(0)));
    const GaussianStats b = gaussian_stats(rng.randn(256, state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(frechet_distance(a, b));
    }
}
BENCHMARK(BM_FrechetDistance)->Arg(8)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
