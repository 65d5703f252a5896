#include "brainalign/encoding.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "brainalign/parallel.hpp"
#include "brainalign/rng.hpp"

namespace brainalign {

double pearson_r(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y) {
    const Eigen::Index n = x.size();
    if (n != y.size() || n < 2) throw ContractError("pearson_r: need two equal-length vectors, n >= 2");
    const double mx = x.mean(), my = y.mean();
    const Vec a = x.array() - mx;
    const Vec b = y.array() - my;
    const double saa = a.squaredNorm(), sbb = b.squaredNorm();
    const double tol = static_cast<double>(n) * 1e-24;
    if (saa <= tol * std::max(1.0, mx * mx) || sbb <= tol * std::max(1.0, my * my)) return 0.0;
    return a.dot(b) / std::sqrt(saa * sbb);
}

Mat compute_tr_features(const DualHeadModel& model, const StimulusCorpus& corpus, int context) {
    corpus.validate();
    NoGradGuard no_grad;
    const int d = model.config().d_model;
    const int n_trs = corpus.n_trs();
    Mat out(n_trs, d);
    for (int t = 0; t < n_trs; ++t) {
        const auto [tb, te] = corpus.tr_boundaries[static_cast<std::size_t>(t)];
        if (te <= tb) throw ContractError("compute_tr_features: empty TR window at TR " + std::to_string(t));
        const int run_begin = corpus.run_boundaries[static_cast<std::size_t>(corpus.run_of_tr(t))].first;
        const int w0 = std::max(run_begin, t - context);
        const std::vector<int> tokens = corpus.tr_tokens(w0, t + 1);
        const Tensor rep = model.encode(tokens);
        const int offset = tb - corpus.tr_boundaries[static_cast<std::size_t>(w0)].first;
        out.row(t) = rep.value().middleRows(offset, te - tb).colwise().mean();
    }
    return out;
}

LaggedFeatures build_lagged_features(const DualHeadModel& model, const StimulusCorpus& corpus,
                                     int lag, const std::string& model_id) {
    if (lag < 0) throw ConfigError("build_lagged_features: lag must be >= 0");
    if (corpus.n_trs() <= lag) throw ContractError("build_lagged_features: corpus TR count must exceed lag");
    const Mat feats = compute_tr_features(model, corpus);
    const int d = model.config().d_model;
    const int n_trs = corpus.n_trs();

    LaggedFeatures lf;
    lf.lag = lag;
    lf.model_id = model_id;
    lf.features = Mat::Zero(n_trs, static_cast<Eigen::Index>(lag + 1) * d);
    for (int t = 0; t < n_trs; ++t)
        for (int j = 0; j <= lag; ++j)
            if (t - j >= 0) lf.features.block(t, static_cast<Eigen::Index>(j) * d, 1, d) = feats.row(t - j);
    return lf;
}

// ---------------------------------- ridge ----------------------------------

RidgeSolver::RidgeSolver(const Mat& X) : x_(X) {
    Mat xtx = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Mat> es(xtx);
    if (es.info() != Eigen::Success) throw ContractError("RidgeSolver: eigendecomposition failed");
    eigvecs_ = es.eigenvectors();
    eigvals_ = es.eigenvalues();
}

Mat RidgeSolver::project(const Mat& Y) const { return eigvecs_.transpose() * (x_.transpose() * Y); }

Mat RidgeSolver::scaled(const Mat& basis, double lambda) const {
    if (!(lambda > 0.0)) throw ConfigError("ridge: lambda must be positive");
    Mat b = basis;
    for (Eigen::Index i = 0; i < b.rows(); ++i) b.row(i) /= (eigvals_(i) + lambda);
    return b;
}

Mat RidgeSolver::weights(const Mat& basis, double lambda) const { return eigvecs_ * scaled(basis, lambda); }

Mat RidgeSolver::solve(const Mat& Y, double lambda) const { return weights(project(Y), lambda); }

Mat RidgeSolver::solve_per_column(const Mat& Y, const Vec& lambda_per_col) const {
    if (lambda_per_col.size() != Y.cols()) throw ContractError("ridge: one lambda per target column required");
    Mat b = project(Y);
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        const double lambda = lambda_per_col(c);
        if (!(lambda > 0.0)) throw ConfigError("ridge: lambda must be positive");
        for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, c) /= (eigvals_(i) + lambda);
    }
    return eigvecs_ * b;
}

Mat ridge_fit(const Mat& X, const Mat& Y, double lambda) {
    if (X.rows() != Y.rows()) throw ContractError("ridge_fit: X and Y row counts differ");
    return RidgeSolver(X).solve(Y, lambda);
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    grid.reserve(10);
    for (int i = 0; i < 10; ++i) grid.push_back(std::pow(10.0, -2.0 + 6.0 * i / 9.0));
    return grid;
}

// ------------------------------ nested CV core ------------------------------

namespace {

struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd inv_std;

    static Standardizer fit(const Mat& X) {
        Standardizer s;
        s.mean = X.colwise().mean();
        s.inv_std.resize(X.cols());
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            const double var = (X.col(c).array() - s.mean(c)).square().mean();
            const double sd = std::sqrt(var);
            s.inv_std(c) = sd < 1e-12 ? 0.0 : 1.0 / sd;  // constant columns drop out
        }
        return s;
    }

    Mat apply(const Mat& X) const {
        Mat out = X.rowwise() - mean;
        out.array().rowwise() *= inv_std.array();
        return out;
    }
};

Mat stack_runs(const Mat& X, const std::vector<std::pair<int, int>>& runs,
               const std::vector<int>& which) {
    Eigen::Index rows = 0;
    for (int r : which) rows += runs[static_cast<std::size_t>(r)].second - runs[static_cast<std::size_t>(r)].first;
    Mat out(rows, X.cols());
    Eigen::Index cursor = 0;
    for (int r : which) {
        const auto [b, e] = runs[static_cast<std::size_t>(r)];
        out.middleRows(cursor, e - b) = X.middleRows(b, e - b);
        cursor += e - b;
    }
    return out;
}

struct Fold {
    Standardizer x_std;
    Mat xtr;        // standardized training features
    Mat xva;        // standardized validation features
    RidgeSolver solver;
    Mat xva_basis;  // xva rotated into the solver eigenbasis

    Fold(const Mat& X, const std::vector<std::pair<int, int>>& runs, const std::vector<int>& train,
         const std::vector<int>& val)
        : x_std(Standardizer::fit(stack_runs(X, runs, train))),
          xtr(x_std.apply(stack_runs(X, runs, train))),
          xva(x_std.apply(stack_runs(X, runs, val))),
          solver(xtr),
          xva_basis(xva * solver.eigenvectors()) {}
};

}  // namespace

AlignmentReport nested_cv_alignment(const Mat& features, const Mat& responses,
                                    const std::vector<std::pair<int, int>>& runs,
                                    const std::vector<double>& lambda_grid,
                                    std::optional<int> only_outer_run) {
    if (runs.size() != 4) throw ContractError("nested_cv_alignment: exactly 4 runs required");
    if (features.rows() != responses.rows()) throw ContractError("nested_cv_alignment: row mismatch");
    if (lambda_grid.empty()) throw ConfigError("nested_cv_alignment: empty lambda grid");

    const Eigen::Index n_voxels = responses.cols();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    AlignmentReport report;
    report.r_per_run = Mat::Constant(4, n_voxels, nan);
    report.lambda_per_run = Mat::Constant(4, n_voxels, nan);
    Mat agg_pred = Mat::Zero(features.rows(), n_voxels);
    bool all_runs = !only_outer_run.has_value();

    for (int outer = 0; outer < 4; ++outer) {
        if (only_outer_run && *only_outer_run != outer) continue;
        const auto [hb, he] = runs[static_cast<std::size_t>(outer)];
        if (he - hb < 2) throw ContractError("nested_cv_alignment: held-out run shorter than 2 TRs");

        std::vector<int> train_runs;
        for (int r = 0; r < 4; ++r)
            if (r != outer) train_runs.push_back(r);

        // Inner leave-one-run-out: mean validation r per (lambda, voxel).
        Mat mean_r = Mat::Zero(static_cast<Eigen::Index>(lambda_grid.size()), n_voxels);
        for (int vi = 0; vi < 3; ++vi) {
            std::vector<int> inner_train, inner_val{train_runs[static_cast<std::size_t>(vi)]};
            for (int r : train_runs)
                if (r != inner_val[0]) inner_train.push_back(r);

            const Fold fold(features, runs, inner_train, inner_val);
            const Mat ytr = stack_runs(responses, runs, inner_train);
            const Mat yva = stack_runs(responses, runs, inner_val);
            const Eigen::RowVectorXd y_mean = ytr.colwise().mean();
            const Mat basis = fold.solver.project(ytr.rowwise() - y_mean);

            for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
                const Mat pred = fold.xva_basis * fold.solver.scaled(basis, lambda_grid[li]);
                for (Eigen::Index v = 0; v < n_voxels; ++v)
                    mean_r(static_cast<Eigen::Index>(li), v) += pearson_r(pred.col(v), yva.col(v));
            }
        }
        mean_r /= 3.0;

        // Per-voxel argmax; ties resolve toward stronger regularization.
        Vec lambda_sel(n_voxels);
        for (Eigen::Index v = 0; v < n_voxels; ++v) {
            Eigen::Index best = 0;
            for (Eigen::Index li = 1; li < mean_r.rows(); ++li)
                if (mean_r(li, v) >= mean_r(best, v)) best = li;
            lambda_sel(v) = lambda_grid[static_cast<std::size_t>(best)];
            report.lambda_per_run(outer, v) = lambda_sel(v);
        }

        // Final fit on all three training runs, evaluated on the held-out run.
        const Fold fold(features, runs, train_runs, {outer});
        const Mat ytr = stack_runs(responses, runs, train_runs);
        const Eigen::RowVectorXd y_mean = ytr.colwise().mean();
        const Mat w = fold.solver.solve_per_column(ytr.rowwise() - y_mean, lambda_sel);
        const Mat pred = fold.xva * w;
        const Mat yho = responses.middleRows(hb, he - hb);
        for (Eigen::Index v = 0; v < n_voxels; ++v)
            report.r_per_run(outer, v) = pearson_r(pred.col(v), yho.col(v));
        agg_pred.middleRows(hb, he - hb) = pred;
    }

    if (all_runs) {
        report.r_aggregated.resize(n_voxels);
        for (Eigen::Index v = 0; v < n_voxels; ++v)
            report.r_aggregated(v) = pearson_r(agg_pred.col(v), responses.col(v));
    }
    return report;
}

Mat estimate_noise_ceiling(const std::vector<NeuralRecording>& cohort,
                           const std::vector<std::pair<int, int>>& runs,
                           const std::vector<double>& lambda_grid, int jobs) {
    if (cohort.size() < 2) throw ContractError("estimate_noise_ceiling: need at least 2 participants");
    const int n_trs = cohort.front().n_trs();
    const int n_voxels = cohort.front().n_voxels();
    for (const auto& rec : cohort)
        if (rec.n_trs() != n_trs || rec.n_voxels() != n_voxels)
            throw ContractError("estimate_noise_ceiling: participants must share the TR grid");

    const std::size_t p_count = cohort.size();
    Mat r_sum = Mat::Zero(static_cast<Eigen::Index>(p_count), n_voxels);

    for (std::size_t q = 0; q < p_count; ++q) {
        // All targets reuse this source's per-fold solvers.
        std::vector<std::size_t> targets;
        for (std::size_t p = 0; p < p_count; ++p)
            if (p != q) targets.push_back(p);

        parallel_for(targets.size(), jobs, [&](std::size_t ti) {
            const std::size_t p = targets[ti];
            const AlignmentReport rep = nested_cv_alignment(cohort[q].responses, cohort[p].responses,
                                                            runs, lambda_grid, std::nullopt);
            for (Eigen::Index v = 0; v < n_voxels; ++v) {
                // Aggregated-prediction r over the full series.
                r_sum(static_cast<Eigen::Index>(p), v) += rep.r_aggregated(v);
            }
        });
    }

    return r_sum / static_cast<double>(p_count - 1);
}

std::vector<double> evaluate_lm(const DualHeadModel& model, const StimulusCorpus& corpus,
                                int heldout_run, int tr_window, int stride, std::uint64_t mask_seed) {
    corpus.validate();
    if (heldout_run < 0 || heldout_run >= 4) throw ContractError("evaluate_lm: held-out run must be in 0..3");
    if (tr_window < 1 || stride < 1) throw ConfigError("evaluate_lm: window and stride must be positive");
    const auto [rb, re] = corpus.run_boundaries[static_cast<std::size_t>(heldout_run)];
    if (re - rb < tr_window) throw ContractError("evaluate_lm: held-out run shorter than the window");

    NoGradGuard no_grad;
    std::vector<double> losses;
    for (int w = rb; w + tr_window <= re; w += stride) {
        const std::vector<int> tokens = corpus.tr_tokens(w, w + tr_window);
        const auto fwd = model.forward_lm({tokens}, derive_seed(mask_seed, "evallm", static_cast<std::uint64_t>(w)));
        losses.push_back(fwd.loss.item());
    }
    return losses;
}

}  // namespace brainalign
