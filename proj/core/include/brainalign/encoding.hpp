#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "brainalign/common.hpp"
#include "brainalign/corpus.hpp"
#include "brainalign/model.hpp"
#include "brainalign/simulate.hpp"

namespace brainalign {

// Plain (non-differentiable) sample Pearson correlation; 0 on zero variance.
double pearson_r(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y);

// Per-TR mean of last-block token representations. TR t is encoded from the
// window of up to `context` preceding TRs within the same run, so each TR
// sees the most stimulus context available to it.
Mat compute_tr_features(const DualHeadModel& model, const StimulusCorpus& corpus, int context = 4);

struct LaggedFeatures {
    Mat features;  // [n_TRs x (lag+1)*d_model]
    int lag = 5;
    std::string model_id;
    std::string corpus_id;
};

// Row t concatenates TR-averaged representations for TRs t, t-1, ..., t-lag;
// slots reaching before the corpus start are zero.
LaggedFeatures build_lagged_features(const DualHeadModel& model, const StimulusCorpus& corpus,
                                     int lag = 5, const std::string& model_id = "");

// Closed-form ridge: argmin |XW - Y|^2 + lambda |W|^2.
Mat ridge_fit(const Mat& X, const Mat& Y, double lambda);

// Eigendecomposition of X^T X, reused across regularization strengths and
// target blocks. Thread-safe for concurrent solves on a shared const object.
class RidgeSolver {
public:
    explicit RidgeSolver(const Mat& X);

    Mat solve(const Mat& Y, double lambda) const;
    Mat solve_per_column(const Mat& Y, const Vec& lambda_per_col) const;

    // Split form for sweeping a lambda grid over fixed targets:
    // project(Y) once, then weights(basis, lambda) per grid point. scaled()
    // applies only the spectral shrinkage, for predictions computed in the
    // eigenbasis (X_val * eigenvectors() * scaled(basis, lambda)).
    Mat project(const Mat& Y) const;
    Mat weights(const Mat& basis, double lambda) const;
    Mat scaled(const Mat& basis, double lambda) const;
    const Mat& eigenvectors() const { return eigvecs_; }

private:
    Mat x_;
    Mat eigvecs_;
    Vec eigvals_;
};

std::vector<double> default_lambda_grid();  // 10 log-spaced values in [1e-2, 1e4]

struct AlignmentReport {
    Mat r_per_run;       // [n_runs x n_voxels], NaN for runs not evaluated
    Mat lambda_per_run;  // selected ridge strength per (outer run, voxel)
    Vec r_aggregated;    // r of concatenated held-out predictions (all-runs mode)
};

// Outer loop holds out each run (or only `only_outer_run`); the inner loop
// selects lambda per voxel by leave-one-run-out Pearson r over the three
// training runs; features/targets are standardized on training folds only.
AlignmentReport nested_cv_alignment(const Mat& features, const Mat& responses,
                                    const std::vector<std::pair<int, int>>& runs,
                                    const std::vector<double>& lambda_grid,
                                    std::optional<int> only_outer_run = std::nullopt);

// Cross-participant noise ceiling: predict each voxel of each participant
// from every other participant's full response matrix with the same nested
// CV protocol, aggregate each source's held-out predictions across the four
// runs, correlate with truth, and average the per-source correlations.
// Returns [n_participants x n_voxels].
Mat estimate_noise_ceiling(const std::vector<NeuralRecording>& cohort,
                           const std::vector<std::pair<int, int>>& runs,
                           const std::vector<double>& lambda_grid, int jobs = 1);

// Per-sample LM losses over overlapping tr_window-TR token windows inside
// the held-out run. mask_seed feeds masked-objective sampling only.
std::vector<double> evaluate_lm(const DualHeadModel& model, const StimulusCorpus& corpus,
                                int heldout_run, int tr_window = 5, int stride = 1,
                                std::uint64_t mask_seed = 0);

}  // namespace brainalign
