#pragma once

#include "oodbench/core.hpp"
#include "oodbench/serialize.hpp"

#include <string>

namespace oodbench {

struct RbfKernel {
    double lengthscale = 1.0;
    double signal_variance = 1.0;
};

/// Exact GP regression with an RBF kernel, a constant prior mean (the target
/// mean) and per-observation noise variances.
class GpRegressor {
public:
    GpRegressor() = default;

    /// targets: n x T (T independent outputs sharing the kernel).
    /// A failed Cholesky factorisation is retried with 10x more diagonal
    /// jitter, up to three times.
    static GpRegressor fit(Matrix inputs, const Matrix& targets, RbfKernel kernel, Vector noise_variance);

    Matrix predict_mean(const Matrix& query) const;
    /// Posterior variance of the latent function (observation noise excluded).
    Vector predict_latent_variance(const Matrix& query) const;

    const Matrix& inputs() const noexcept { return inputs_; }
    const Vector& noise_variance() const noexcept { return noise_; }
    const RbfKernel& kernel() const noexcept { return kernel_; }
    double jitter() const noexcept { return jitter_; }

    /// log p(y | X) up to the constant -n/2 log(2 pi), summed over outputs.
    double log_marginal_likelihood() const;

    void save(ModelBlob& blob, const std::string& prefix) const;
    static GpRegressor load(const ModelBlob& blob, const std::string& prefix);

private:
    void factorise();

    Matrix inputs_;
    RbfKernel kernel_;
    Vector noise_;
    Vector prior_mean_;
    Matrix alpha_;  // (K + diag(noise))^{-1} (Y - prior_mean)
    Matrix chol_;   // lower Cholesky factor
    Matrix centred_targets_;
    double jitter_ = 0.0;
};

/// Median of pairwise distances over at most the first `max_rows` rows
/// (keeps the heuristic O(max_rows^2)).
double median_lengthscale(const Matrix& standardized_inputs, Index max_rows = 2000);

/// Length scale maximising the marginal likelihood over the grid
/// anchor * 2^(k/2), k = -6..8, with the other hyperparameters held fixed.
double select_lengthscale(const Matrix& inputs, const Matrix& targets, double signal_variance,
                          const Vector& noise_variance, double anchor);

}  // namespace oodbench
