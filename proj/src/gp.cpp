#include "oodbench/gp.hpp"

#include "oodbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oodbench {

namespace {
constexpr int kJitterRetries = 3;
}

GpRegressor GpRegressor::fit(Matrix inputs, const Matrix& targets, RbfKernel kernel, Vector noise_variance) {
    require(inputs.rows() >= 1 && targets.rows() == inputs.rows(), "gp: input/target count mismatch");
    require(noise_variance.size() == inputs.rows(), "gp: one noise variance per observation");
    require(kernel.lengthscale > 0.0 && kernel.signal_variance > 0.0, "gp: kernel parameters must be positive");
    require((noise_variance.array() >= 0.0).all(), "gp: noise variances must be non-negative");

    GpRegressor gp;
    gp.inputs_ = std::move(inputs);
    gp.kernel_ = kernel;
    gp.noise_ = std::move(noise_variance);
    gp.prior_mean_ = targets.colwise().mean().transpose();
    gp.centred_targets_ = targets.rowwise() - gp.prior_mean_.transpose();
    gp.factorise();
    return gp;
}

void GpRegressor::factorise() {
    Matrix k = kernels::rbf(inputs_, inputs_, kernel_.lengthscale, kernel_.signal_variance);
    k.diagonal() += noise_;
    double jitter = 0.0;
    for (int attempt = 0; attempt <= kJitterRetries; ++attempt) {
        Matrix trial = k;
        trial.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(trial);
        if (llt.info() == Eigen::Success) {
            chol_ = llt.matrixL();
            alpha_ = llt.solve(centred_targets_);
            jitter_ = jitter;
            return;
        }
        jitter = jitter == 0.0 ? 1e-8 * kernel_.signal_variance : jitter * 10.0;
    }
    throw NumericalError("gp: kernel matrix is not positive definite even with jitter");
}

Matrix GpRegressor::predict_mean(const Matrix& query) const {
    const Matrix k = kernels::rbf(query, inputs_, kernel_.lengthscale, kernel_.signal_variance);
    return (k * alpha_).rowwise() + prior_mean_.transpose();
}

Vector GpRegressor::predict_latent_variance(const Matrix& query) const {
    const Matrix k = kernels::rbf(query, inputs_, kernel_.lengthscale, kernel_.signal_variance);
    // v = L^{-1} k^T; var = s^2 - |v|^2
    const Matrix v = chol_.triangularView<Eigen::Lower>().solve(k.transpose());
    const Vector reduction = v.colwise().squaredNorm().transpose();
    return (kernel_.signal_variance - reduction.array()).cwiseMax(0.0).matrix();
}

void GpRegressor::save(ModelBlob& blob, const std::string& prefix) const {
    blob.put(prefix + "inputs", inputs_);
    blob.put(prefix + "centred_targets", centred_targets_);
    blob.put(prefix + "prior_mean", prior_mean_);
    blob.put(prefix + "noise", noise_);
    blob.put_scalar(prefix + "lengthscale", kernel_.lengthscale);
    blob.put_scalar(prefix + "signal_variance", kernel_.signal_variance);
    blob.put(prefix + "cholesky", chol_);
    blob.put(prefix + "alpha", alpha_);
    blob.put_scalar(prefix + "jitter", jitter_);
}

GpRegressor GpRegressor::load(const ModelBlob& blob, const std::string& prefix) {
    GpRegressor gp;
    gp.inputs_ = blob.matrix(prefix + "inputs");
    gp.centred_targets_ = blob.matrix(prefix + "centred_targets");
    gp.prior_mean_ = blob.vector(prefix + "prior_mean");
    gp.noise_ = blob.vector(prefix + "noise");
    gp.kernel_ = {blob.scalar(prefix + "lengthscale"), blob.scalar(prefix + "signal_variance")};
    gp.chol_ = blob.matrix(prefix + "cholesky");
    gp.alpha_ = blob.matrix(prefix + "alpha");
    gp.jitter_ = blob.scalar(prefix + "jitter");
    return gp;
}

double GpRegressor::log_marginal_likelihood() const {
    const double fit = -0.5 * (centred_targets_.array() * alpha_.array()).sum();
    const double complexity = -chol_.diagonal().array().log().sum() * static_cast<double>(alpha_.cols());
    return fit + complexity;
}

double select_lengthscale(const Matrix& inputs, const Matrix& targets, double signal_variance,
                          const Vector& noise_variance, double anchor) {
    require(anchor > 0.0, "gp: length-scale anchor must be positive");
    double best = anchor;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (int k = -6; k <= 8; ++k) {
        const double candidate = anchor * std::exp2(0.5 * k);
        try {
            const GpRegressor gp = GpRegressor::fit(inputs, targets, {candidate, signal_variance}, noise_variance);
            const double lml = gp.log_marginal_likelihood();
            if (lml > best_lml) {
                best_lml = lml;
                best = candidate;
            }
        } catch (const NumericalError&) {
            // candidate too smooth to factorise; skip it
        }
    }
    return best;
}

double median_lengthscale(const Matrix& standardized_inputs, Index max_rows) {
    const Index rows = std::min(standardized_inputs.rows(), max_rows);
    const double median = kernels::median_pairwise_distance(standardized_inputs.topRows(rows));
    return median > 0.0 ? median : 1.0;
}

}  // namespace oodbench
