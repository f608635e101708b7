#pragma once

#include "oodbench/core.hpp"
#include "oodbench/gp.hpp"
#include "oodbench/mlp.hpp"
#include "oodbench/serialize.hpp"
#include "oodbench/standardizer.hpp"
#include "oodbench/toyspace.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace oodbench {

/// A fitted unsupervised detector. Scores are OOD scores: higher means more
/// out-of-distribution. Fitted models are immutable; scoring is const and
/// safe to call from several threads.
class Detector {
public:
    virtual ~Detector() = default;

    virtual std::string kind() const = 0;
    virtual Vector score(const Matrix& points) const = 0;
    virtual void save(ModelBlob& blob) const = 0;
};

std::vector<std::uint8_t> serialize(const Detector& detector);
std::unique_ptr<Detector> deserialize(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Analytic reference

/// Distance to the toy's known ID manifold.
class ReferenceDetector final : public Detector {
public:
    explicit ReferenceDetector(ToySpec spec) : spec_(std::move(spec)) {}

    std::string kind() const override { return "reference"; }
    Vector score(const Matrix& points) const override { return reference_ood_score(spec_, points); }
    void save(ModelBlob& blob) const override;

private:
    ToySpec spec_;
};

// ---------------------------------------------------------------------------
// Mahalanobis distance

class MahalanobisModel final : public Detector {
public:
    std::string kind() const override { return "md"; }
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static MahalanobisModel load(const ModelBlob& blob);

    const Vector& mean() const noexcept { return mean_; }
    /// Regularised covariance Sigma + lambda I.
    const Matrix& covariance() const noexcept { return covariance_; }

    /// Builds a model directly from moments (used by MD(AA) tests and fitting).
    static MahalanobisModel from_moments(Vector mean, Matrix covariance);

private:
    Vector mean_;
    Matrix covariance_;
    Matrix chol_;
};

/// Sample mean and unbiased covariance, regularised by 1e-6 * mean diagonal.
/// Requires more rows than columns.
MahalanobisModel fit_mahalanobis(const Matrix& train);

// ---------------------------------------------------------------------------
// Local outlier factor (novelty mode)

class LofModel final : public Detector {
public:
    std::string kind() const override { return "lof"; }
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static LofModel load(const ModelBlob& blob);

    Index neighbours() const noexcept { return k_; }

private:
    friend LofModel fit_lof(const Matrix& train, Index k);

    Matrix train_;
    Index k_ = 20;
    Vector k_distance_;
    Vector lrd_;
};

/// 1 <= k < n_train. Reachability distances are floored at 1e-12 so that
/// duplicated training points keep finite densities.
LofModel fit_lof(const Matrix& train, Index k = 20);

// ---------------------------------------------------------------------------
// One-class SVM

struct OcSvmOptions {
    double nu = 0.5;
    /// <= 0 selects 1 / (D * total variance), total variance being the trace
    /// of the standardized training covariance.
    double gamma = 0.0;
    double tolerance = 1e-4;
    Index max_iterations = 10'000'000;
};

class OcSvmModel final : public Detector {
public:
    std::string kind() const override { return "ocsvm"; }
    /// Negated decision function -(sum_i alpha_i k(x_i, x) - rho).
    Vector score(const Matrix& points) const override;
    Vector decision_function(const Matrix& points) const;
    void save(ModelBlob& blob) const override;
    static OcSvmModel load(const ModelBlob& blob);

    const Matrix& support_vectors() const noexcept { return support_; }
    const Vector& dual_coefficients() const noexcept { return alpha_; }
    double rho() const noexcept { return rho_; }
    double gamma() const noexcept { return gamma_; }
    double nu() const noexcept { return nu_; }
    bool converged() const noexcept { return converged_; }
    Index iterations() const noexcept { return iterations_; }
    const Standardizer& standardizer() const noexcept { return standardizer_; }

private:
    friend OcSvmModel fit_ocsvm(const Matrix& train, const OcSvmOptions& options);

    Standardizer standardizer_;
    Matrix support_;
    Vector alpha_;
    double rho_ = 0.0;
    double gamma_ = 1.0;
    double nu_ = 0.5;
    bool converged_ = false;
    Index iterations_ = 0;
};

/// Solves the nu-one-class dual  min 1/2 a^T K a  s.t. 0 <= a_i <= 1/(nu n),
/// sum a_i = 1  by SMO with second-order working-set selection.
OcSvmModel fit_ocsvm(const Matrix& train, const OcSvmOptions& options = {});

/// Raw dual solution on a precomputed kernel matrix (exposed for testing).
struct OcSvmDual {
    Vector alpha;
    double rho = 0.0;
    bool converged = false;
    Index iterations = 0;
};
OcSvmDual solve_ocsvm_dual(const Matrix& kernel, double nu, double tolerance, Index max_iterations);

// ---------------------------------------------------------------------------
// Gaussian-process detectors

enum class LengthscaleRule {
    /// Median pairwise distance of the standardized training inputs.
    Median,
    /// Grid search on the marginal likelihood around the median distance.
    MarginalLikelihood,
};

struct GpOptions {
    double subsample_fraction = 0.1;
    double noise_variance = 1e-2;
    /// > 0 fixes the length scale and bypasses `rule`.
    double lengthscale = 0.0;
    LengthscaleRule rule = LengthscaleRule::MarginalLikelihood;
};

struct NcGpOptions {
    double subsample_fraction = 0.1;
    double noise_variance = 1e-2;
    double lengthscale = 0.0;
    /// Applied to the un-augmented subsample.
    LengthscaleRule rule = LengthscaleRule::MarginalLikelihood;
    /// Std of the Gaussian input perturbation (standardized units).
    double noise_scale = 0.5;
    /// Observation noise variance of every pseudo-point, as a multiple of the
    /// GP signal variance.
    double pseudo_noise_variance = 1.0;
};

/// Scores with the GP predictive standard deviation. The noise-contrastive
/// variant adds the observation noise its pseudo-points carry in excess of
/// the base noise, interpolated to the query by kernel weights.
class GpModel final : public Detector {
public:
    std::string kind() const override { return noise_contrastive_ ? "ncgp" : "gp"; }
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static GpModel load(const ModelBlob& blob);

    Vector predictive_variance(const Matrix& points) const;
    Vector predictive_mean(const Matrix& points) const;
    const GpRegressor& regressor() const noexcept { return gp_; }
    const Standardizer& standardizer() const noexcept { return standardizer_; }

private:
    friend GpModel fit_gp(const Dataset& train, const GpOptions& options, std::uint64_t seed);
    friend GpModel fit_ncgp(const Dataset& train, const NcGpOptions& options, std::uint64_t seed);

    Standardizer standardizer_;
    GpRegressor gp_;
    bool noise_contrastive_ = false;
    double base_noise_ = 1e-2;
};

GpModel fit_gp(const Dataset& train, const GpOptions& options, std::uint64_t seed);
GpModel fit_ncgp(const Dataset& train, const NcGpOptions& options, std::uint64_t seed);

/// Uniform subsample without replacement; count = round(fraction * n), >= 2.
std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Truncated PCA

class PcaTruncModel final : public Detector {
public:
    std::string kind() const override { return "pca"; }
    /// Squared reconstruction error in standardized space. Identically zero
    /// when every component is retained.
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static PcaTruncModel load(const ModelBlob& blob);

    Index retained() const noexcept { return components_.cols(); }
    const Matrix& components() const noexcept { return components_; }

private:
    friend PcaTruncModel fit_pca_trunc(const Matrix& train, double variance_threshold);

    Standardizer standardizer_;
    Vector centre_;
    Matrix components_;  // D x k, orthonormal columns
    Matrix discarded_;   // D x (D - k)
};

PcaTruncModel fit_pca_trunc(const Matrix& train, double variance_threshold = 0.95);

// ---------------------------------------------------------------------------
// Auto-associative MLP and MD(AA)

struct AutoAssocOptions {
    std::vector<Index> hidden{16, 1, 16};
    TrainOptions train{};
};

class AutoAssocModel final : public Detector {
public:
    std::string kind() const override { return "aa"; }
    /// Per-point sum of squared reconstruction errors (standardized space).
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static AutoAssocModel load(const ModelBlob& blob);

    /// e(x) = x_hat - x in standardized space.
    Matrix reconstruction_errors(const Matrix& points) const;
    const Mlp& network() const noexcept { return net_; }
    const TrainReport& report() const noexcept { return report_; }

private:
    friend AutoAssocModel fit_autoassoc(const Matrix& train, const AutoAssocOptions& options, std::uint64_t seed);

    Standardizer standardizer_;
    Mlp net_;
    TrainReport report_;
};

/// Requires at least 32 training points.
AutoAssocModel fit_autoassoc(const Matrix& train, const AutoAssocOptions& options, std::uint64_t seed);

class MdAaModel final : public Detector {
public:
    MdAaModel(std::shared_ptr<const AutoAssocModel> aa, MahalanobisModel errors)
        : aa_(std::move(aa)), errors_(std::move(errors)) {}

    std::string kind() const override { return "mdaa"; }
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static MdAaModel load(const ModelBlob& blob);

    const MahalanobisModel& error_model() const noexcept { return errors_; }

private:
    std::shared_ptr<const AutoAssocModel> aa_;
    MahalanobisModel errors_;
};

MdAaModel fit_md_aa(const Matrix& train, std::shared_ptr<const AutoAssocModel> aa);

// ---------------------------------------------------------------------------
// Auto-associative GP

class AaGpModel final : public Detector {
public:
    std::string kind() const override { return "aagp"; }
    /// sum_d (x_d - m_d(x))^2 in standardized space.
    Vector score(const Matrix& points) const override;
    void save(ModelBlob& blob) const override;
    static AaGpModel load(const ModelBlob& blob);

    Matrix reconstruct(const Matrix& points) const;
    const std::vector<GpRegressor>& regressors() const noexcept { return gps_; }

private:
    friend AaGpModel fit_aa_gp(const Matrix& train, const GpOptions& options, std::uint64_t seed);

    Standardizer standardizer_;
    std::vector<GpRegressor> gps_;
};

/// Uses options.lengthscale when positive and the median rule otherwise: an
/// identity-like reconstruction target would drive the marginal likelihood
/// to very long length scales and flatten the score.
AaGpModel fit_aa_gp(const Matrix& train, const GpOptions& options, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Confidence calibration

/// Sorted validation OOD scores. confidence(s) is the fraction of validation
/// scores >= s: the empirical upper-tail p-value of the raw score.
class Calibrator {
public:
    explicit Calibrator(const Vector& validation_scores);

    double confidence(double raw_score) const;
    Vector confidence(const Vector& raw_scores) const;

    const std::vector<double>& sorted_scores() const noexcept { return sorted_; }

private:
    std::vector<double> sorted_;
};

Vector calibrate_confidence(const Calibrator& calibrator, const Vector& raw_scores);

}  // namespace oodbench
