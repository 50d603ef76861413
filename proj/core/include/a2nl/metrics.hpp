#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace a2nl {

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased
    long n = 0;
};

// Sample mean and unbiased covariance; needs at least 2 rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& samples);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2). Matrix square
// roots via symmetric eigendecomposition with negative eigenvalues clipped,
// after adding 1e-6 * I shrinkage for small-sample stability.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Per video: per-dimension unbiased variance over frames, averaged over
// dimensions; then averaged over videos.
double variance_metric(const std::vector<Eigen::MatrixXd>& videos);

// Paired mode (default): mean over video index of the Frechet distance
// between gen_i's and ref_i's frame distributions. Pooled: one distance
// between all gen frames and all ref frames.
double fid_fm(const std::vector<Eigen::MatrixXd>& gen, const std::vector<Eigen::MatrixXd>& ref,
              bool paired = true);

// fid_fm on first differences of consecutive frames.
double fid_delta_fm(const std::vector<Eigen::MatrixXd>& gen,
                    const std::vector<Eigen::MatrixXd>& ref, bool paired = true);

double snd(double fid_fm_val, double fid_delta_val);

// Mean over conditions of the mean over unordered run pairs of the
// frame-averaged Euclidean distance between two sequences.
double multimodality(const std::vector<std::vector<Eigen::MatrixXd>>& runs_per_condition);

struct MetricReport {
    std::optional<double> var;
    std::optional<double> fid_fm;
    std::optional<double> fid_delta_fm;
    std::optional<double> snd;
    std::optional<double> multimodality;
    std::map<std::string, std::string> metadata;  // seeds, config hash, counts

    // Stores both distances and their exact sum.
    void set_fids(double fm, double delta_fm);

    // CSV with columns metric,value,n,seed,config_hash.
    std::string to_csv() const;
    // Table with one row per available metric source.
    std::string to_table(std::optional<double> reference_var = std::nullopt) const;
};

}  // namespace a2nl
