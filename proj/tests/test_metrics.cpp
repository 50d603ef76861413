#include <doctest.h>

#include <cmath>

#include "a2nl/metrics.hpp"
#include "a2nl/rng.hpp"

using namespace a2nl;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("gaussian_stats hand cases and brute-force agreement") {
    Eigen::MatrixXd two(2, 1);
    two << 0.0, 2.0;
    const GaussianStats s = gaussian_stats(two);
    CHECK(s.mean(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.cov(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

    Eigen::MatrixXd same(4, 2);
    same << 1, 2, 1, 2, 1, 2, 1, 2;
    CHECK(gaussian_stats(same).cov.cwiseAbs().maxCoeff() == 0.0);

    Rng rng(1);
    const Eigen::MatrixXd x = rng.randn(1000, 3);
    const GaussianStats g = gaussian_stats(x);
    for (int i = 0; i < 3; ++i) {
        double mean = 0.0;
        for (int r = 0; r < 1000; ++r) mean += x(r, i);
        mean /= 1000.0;
        CHECK(g.mean(i) == doctest::Approx(mean).epsilon(1e-10));
        for (int j = 0; j < 3; ++j) {
            double mj = 0.0;
            for (int r = 0; r < 1000; ++r) mj += x(r, j);
            mj /= 1000.0;
            double cov = 0.0;
            for (int r = 0; r < 1000; ++r) cov += (x(r, i) - mean) * (x(r, j) - mj);
            cov /= 999.0;
            CHECK(g.cov(i, j) == doctest::Approx(cov).epsilon(1e-10));
        }
    }

    CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd::Zero(1, 3)), std::invalid_argument);
}

namespace {

GaussianStats diag_stats(const Eigen::VectorXd& mean, const Eigen::VectorXd& var) {
    GaussianStats s;
    s.mean = mean;
    s.cov = var.asDiagonal();
    s.n = 1000;
    return s;
}

double closed_form_diag(const GaussianStats& a, const GaussianStats& b) {
    double d = (a.mean - b.mean).squaredNorm();
    for (Eigen::Index i = 0; i < a.mean.size(); ++i) {
        const double sa = std::sqrt(a.cov(i, i));
        const double sb = std::sqrt(b.cov(i, i));
        d += (sa - sb) * (sa - sb);
    }
    return d;
}

}  // namespace

TEST_CASE("frechet_distance matches 1-D closed forms") {
    const GaussianStats n01 = diag_stats(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
    GaussianStats n11 = n01;
    n11.mean(0) = 1.0;
    CHECK(frechet_distance(n01, n11) == doctest::Approx(1.0).epsilon(1e-6));

    GaussianStats n04 = n01;
    n04.cov(0, 0) = 4.0;
    CHECK(frechet_distance(n01, n04) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK(std::abs(frechet_distance(n01, n01)) <= 1e-6);
}

TEST_CASE("frechet_distance against random diagonal closed forms") {
    Rng rng(2);
    for (int k = 0; k < 50; ++k) {
        const int d = (k % 2 == 0) ? 1 : 2;
        Eigen::VectorXd ma(d), mb(d), va(d), vb(d);
        for (int i = 0; i < d; ++i) {
            ma(i) = 2.0 * rng.uniform() - 1.0;
            mb(i) = 2.0 * rng.uniform() - 1.0;
            va(i) = 1.0 + 2.0 * rng.uniform();
            vb(i) = 1.0 + 2.0 * rng.uniform();
        }
        const GaussianStats a = diag_stats(ma, va);
        const GaussianStats b = diag_stats(mb, vb);
        const double got = frechet_distance(a, b);
        const double expect = closed_form_diag(a, b);
        CHECK(std::abs(got - expect) / std::max(expect, 1e-12) <= 1e-6);
    }
}

TEST_CASE("frechet_distance symmetry and validation") {
    Rng rng(3);
    const GaussianStats a = gaussian_stats(rng.randn(200, 4));
    const GaussianStats b = gaussian_stats(rng.randn(200, 4));
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
    CHECK(frechet_distance(a, b) > -1e-6);

    const GaussianStats c = gaussian_stats(rng.randn(50, 3));
    CHECK_THROWS_AS(frechet_distance(a, c), std::invalid_argument);

    GaussianStats bad = a;
    bad.mean(0) = std::nan("");
    CHECK_THROWS_AS(frechet_distance(bad, b), std::invalid_argument);
}

TEST_CASE("variance_metric hand cases and permutation invariance") {
    std::vector<Eigen::MatrixXd> constant{Eigen::MatrixXd::Ones(5, 2)};
    CHECK(variance_metric(constant) == 0.0);

    Eigen::MatrixXd v(2, 1);
    v << 0.0, 2.0;
    CHECK(variance_metric({v}) == doctest::Approx(2.0).epsilon(1e-15));

    Rng rng(4);
    Eigen::MatrixXd video = rng.randn(10, 3);
    const double base = variance_metric({video});
    Eigen::MatrixXd shuffled = video;
    shuffled.row(0).swap(shuffled.row(7));
    shuffled.row(2).swap(shuffled.row(9));
    CHECK(variance_metric({shuffled}) == doctest::Approx(base).epsilon(1e-12));

    CHECK_THROWS_AS(variance_metric({Eigen::MatrixXd::Zero(1, 2)}), std::invalid_argument);
}

TEST_CASE("fid_fm paired and pooled modes") {
    Rng rng(5);
    std::vector<Eigen::MatrixXd> gen, ref;
    for (int i = 0; i < 3; ++i) {
        gen.push_back(rng.randn(40, 2));
        ref.push_back(rng.randn(40, 2));
    }
    CHECK(std::abs(fid_fm(gen, gen, true)) <= 1e-6);
    CHECK(std::abs(fid_fm(gen, gen, false)) <= 1e-6);

    // K=1 reduces to a single distance.
    const double single = fid_fm({gen[0]}, {ref[0]}, true);
    const double direct = frechet_distance(gaussian_stats(gen[0]), gaussian_stats(ref[0]));
    CHECK(single == doctest::Approx(direct).epsilon(1e-12));

    // Two 1-D videos with known per-video stats: average the closed forms.
    std::vector<Eigen::MatrixXd> g1, r1;
    Rng r(6);
    for (int i = 0; i < 2; ++i) {
        g1.push_back(r.randn(64, 1));
        r1.push_back(r.randn(64, 1).array() + 0.5 * (i + 1));
    }
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
        const auto sa = gaussian_stats(g1[i]);
        const auto sb = gaussian_stats(r1[i]);
        const double dmu = (sa.mean - sb.mean).squaredNorm();
        const double ds = std::sqrt(sa.cov(0, 0) + 1e-6) - std::sqrt(sb.cov(0, 0) + 1e-6);
        expect += dmu + ds * ds;
    }
    expect /= 2.0;
    CHECK(fid_fm(g1, r1, true) == doctest::Approx(expect).epsilon(1e-9));

    CHECK_THROWS_AS(fid_fm(gen, {ref[0]}, true), std::invalid_argument);
    CHECK_THROWS_AS(fid_fm({Eigen::MatrixXd::Zero(1, 2)}, {ref[0]}, true),
                    std::invalid_argument);
}

TEST_CASE("fid_delta_fm ignores per-video constant offsets") {
    Rng rng(7);
    std::vector<Eigen::MatrixXd> gen, shifted;
    for (int i = 0; i < 3; ++i) {
        gen.push_back(rng.randn(30, 2));
        shifted.push_back(gen.back().rowwise() + Eigen::RowVector2d(3.0 * i + 1.0, -2.0));
    }
    CHECK(std::abs(fid_delta_fm(gen, gen, true)) <= 1e-10);
    CHECK(std::abs(fid_delta_fm(gen, shifted, true)) <= 1e-10);

    CHECK_THROWS_AS(fid_delta_fm({Eigen::MatrixXd::Zero(2, 2)}, {Eigen::MatrixXd::Zero(2, 2)},
                                 true),
                    std::invalid_argument);

    // Hand-built 1-D case with known delta statistics.
    Eigen::MatrixXd ramp(4, 1), steep(4, 1);
    ramp << 0, 1, 2, 3;     // deltas all 1 -> var 0
    steep << 0, 2, 4, 6;    // deltas all 2 -> var 0
    const double got = fid_delta_fm({ramp}, {steep}, true);
    // Means differ by 1, variances both ~0 (plus shrinkage, which cancels).
    CHECK(got == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("snd reproduces the additive anchors") {
    CHECK(snd(3.81, 1.13) == 3.81 + 1.13);
    CHECK(snd(3.81, 1.13) == doctest::Approx(4.94).epsilon(1e-12));
    CHECK(snd(5.94, 1.30) == doctest::Approx(7.24).epsilon(1e-12));
    CHECK(snd(0.0, 0.0) == 0.0);
    CHECK_THROWS_AS(snd(std::nan(""), 1.0), std::invalid_argument);
}

TEST_CASE("multimodality hand cases") {
    std::vector<std::vector<Eigen::MatrixXd>> identical{
        {Eigen::MatrixXd::Ones(5, 2), Eigen::MatrixXd::Ones(5, 2)}};
    CHECK(multimodality(identical) == 0.0);

    std::vector<std::vector<Eigen::MatrixXd>> pair{
        {Eigen::MatrixXd::Zero(4, 1), Eigen::MatrixXd::Constant(4, 1, 3.0)}};
    CHECK(multimodality(pair) == doctest::Approx(3.0).epsilon(1e-15));

    Rng rng(8);
    std::vector<Eigen::MatrixXd> runs{rng.randn(6, 2), rng.randn(6, 2), rng.randn(6, 2)};
    const double a = multimodality({runs});
    std::swap(runs[0], runs[2]);
    CHECK(multimodality({runs}) == doctest::Approx(a).epsilon(1e-12));

    CHECK_THROWS_AS(multimodality({{rng.randn(4, 2)}}), std::invalid_argument);
}

TEST_CASE("MetricReport keeps the additive identity and serializes") {
    MetricReport rep;
    rep.var = 1.5;
    rep.set_fids(3.81, 1.13);
    rep.multimodality = 2.31;
    rep.metadata["seed"] = "42";
    rep.metadata["config_hash"] = "deadbeef";
    rep.metadata["n"] = "64";

    REQUIRE(rep.snd.has_value());
    CHECK(*rep.snd == *rep.fid_fm + *rep.fid_delta_fm);

    const std::string csv = rep.to_csv();
    CHECK(csv.find("metric,value,n,seed,config_hash") == 0);
    CHECK(csv.find("snd,") != std::string::npos);
    CHECK(csv.find("deadbeef") != std::string::npos);

    const std::string table = rep.to_table(1.98);
    CHECK(table.find("ground-truth") != std::string::npos);
    CHECK(table.find("checkpoint") != std::string::npos);
}

TEST_SUITE_END();
