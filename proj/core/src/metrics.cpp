#include "a2nl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace a2nl {

namespace {

constexpr double kShrinkage = 1e-6;

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("frechet_distance: eigendecomposition failed");
    }
    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * clipped.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

std::vector<Eigen::MatrixXd> first_differences(const std::vector<Eigen::MatrixXd>& videos) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(videos.size());
    for (const auto& v : videos) {
        if (v.rows() < 3) {
            throw std::invalid_argument("fid_delta_fm: videos need at least 3 frames");
        }
        out.push_back(v.bottomRows(v.rows() - 1) - v.topRows(v.rows() - 1));
    }
    return out;
}

Eigen::MatrixXd pool_frames(const std::vector<Eigen::MatrixXd>& videos) {
    Eigen::Index rows = 0;
    for (const auto& v : videos) rows += v.rows();
    Eigen::MatrixXd all(rows, videos.front().cols());
    Eigen::Index at = 0;
    for (const auto& v : videos) {
        all.middleRows(at, v.rows()) = v;
        at += v.rows();
    }
    return all;
}

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

GaussianStats gaussian_stats(const Eigen::MatrixXd& samples) {
    if (samples.rows() < 2) {
        throw std::invalid_argument("gaussian_stats: need at least 2 samples");
    }
    GaussianStats s;
    s.n = samples.rows();
    s.mean = samples.colwise().mean();
    const Eigen::MatrixXd centered = samples.rowwise() - s.mean.transpose();
    s.cov = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
    return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size()) {
        throw std::invalid_argument("frechet_distance: dim mismatch");
    }
    if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite()) {
        throw std::invalid_argument("frechet_distance: non-finite stats");
    }
    const Eigen::Index d = a.mean.size();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd sa = a.cov + kShrinkage * id;
    const Eigen::MatrixXd sb = b.cov + kShrinkage * id;

    const Eigen::MatrixXd root_a = sqrtm_psd(sa);
    Eigen::MatrixXd inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose());
    const Eigen::MatrixXd cross = sqrtm_psd(inner);

    const double mean_term = (a.mean - b.mean).squaredNorm();
    return mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
}

double variance_metric(const std::vector<Eigen::MatrixXd>& videos) {
    if (videos.empty()) throw std::invalid_argument("variance_metric: no videos");
    double total = 0.0;
    for (const auto& v : videos) {
        if (v.rows() < 2) throw std::invalid_argument("variance_metric: video too short");
        const Eigen::RowVectorXd mean = v.colwise().mean();
        const Eigen::MatrixXd centered = v.rowwise() - mean;
        const Eigen::RowVectorXd var =
            centered.colwise().squaredNorm() / static_cast<double>(v.rows() - 1);
        total += var.mean();
    }
    return total / static_cast<double>(videos.size());
}

double fid_fm(const std::vector<Eigen::MatrixXd>& gen, const std::vector<Eigen::MatrixXd>& ref,
              bool paired) {
    if (gen.empty() || ref.empty()) throw std::invalid_argument("fid_fm: empty input");
    for (const auto& v : gen) {
        if (v.rows() < 2) throw std::invalid_argument("fid_fm: video with < 2 frames");
    }
    for (const auto& v : ref) {
        if (v.rows() < 2) throw std::invalid_argument("fid_fm: video with < 2 frames");
    }
    if (paired) {
        if (gen.size() != ref.size()) {
            throw std::invalid_argument("fid_fm: paired mode needs equal list lengths");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < gen.size(); ++i) {
            total += frechet_distance(gaussian_stats(gen[i]), gaussian_stats(ref[i]));
        }
        return total / static_cast<double>(gen.size());
    }
    return frechet_distance(gaussian_stats(pool_frames(gen)), gaussian_stats(pool_frames(ref)));
}

double fid_delta_fm(const std::vector<Eigen::MatrixXd>& gen,
                    const std::vector<Eigen::MatrixXd>& ref, bool paired) {
    return fid_fm(first_differences(gen), first_differences(ref), paired);
}

double snd(double fid_fm_val, double fid_delta_val) {
    if (!std::isfinite(fid_fm_val) || !std::isfinite(fid_delta_val)) {
        throw std::invalid_argument("snd: non-finite inputs");
    }
    return fid_fm_val + fid_delta_val;
}

double multimodality(const std::vector<std::vector<Eigen::MatrixXd>>& runs_per_condition) {
    if (runs_per_condition.empty()) throw std::invalid_argument("multimodality: no conditions");
    double total = 0.0;
    for (const auto& runs : runs_per_condition) {
        if (runs.size() < 2) throw std::invalid_argument("multimodality: need at least 2 runs");
        double pair_sum = 0.0;
        long pairs = 0;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            for (std::size_t j = i + 1; j < runs.size(); ++j) {
                if (runs[i].rows() != runs[j].rows() || runs[i].cols() != runs[j].cols()) {
                    throw std::invalid_argument("multimodality: run shape mismatch");
                }
                double frame_sum = 0.0;
                for (Eigen::Index f = 0; f < runs[i].rows(); ++f) {
                    frame_sum += (runs[i].row(f) - runs[j].row(f)).norm();
                }
                pair_sum += frame_sum / static_cast<double>(runs[i].rows());
                pairs += 1;
            }
        }
        total += pair_sum / static_cast<double>(pairs);
    }
    return total / static_cast<double>(runs_per_condition.size());
}

void MetricReport::set_fids(double fm, double delta_fm) {
    fid_fm = fm;
    fid_delta_fm = delta_fm;
    snd = a2nl::snd(fm, delta_fm);
}

std::string MetricReport::to_csv() const {
    const auto meta = [&](const char* key) {
        const auto it = metadata.find(key);
        return it == metadata.end() ? std::string("-") : it->second;
    };
    std::string out = "metric,value,n,seed,config_hash\n";
    const std::string n = meta("n");
    const std::string seed = meta("seed");
    const std::string hash = meta("config_hash");
    const auto row = [&](const char* name, const std::optional<double>& v) {
        if (!v) return;
        out += name;
        out += ',';
        out += format_value(*v);
        out += ',' + n + ',' + seed + ',' + hash + '\n';
    };
    row("var", var);
    row("fid_fm", fid_fm);
    row("fid_delta_fm", fid_delta_fm);
    row("snd", snd);
    row("multimodality", multimodality);
    return out;
}

std::string MetricReport::to_table(std::optional<double> reference_var) const {
    const auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("       -");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%8.4f", *v);
        return std::string(buf);
    };
    std::string out;
    out += "method            Var   FID_fm  FID_dfm      SND   Multimod\n";
    if (reference_var) {
        out += "ground-truth " + cell(reference_var) + "        -        -        -          -\n";
    }
    out += "checkpoint   " + cell(var) + " " + cell(fid_fm) + " " + cell(fid_delta_fm) + " " +
           cell(snd) + "   " + cell(multimodality) + "\n";
    return out;
}

}  // namespace a2nl
