#include "oodbench/detectors.hpp"

#include "oodbench/kernels.hpp"
#include "oodbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oodbench {

namespace {

constexpr double kReachFloor = 1e-12;

Matrix spd_cholesky(const Matrix& m) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance is not positive definite");
    }
    return llt.matrixL();
}

void put_spec(ModelBlob& blob, const ToySpec& spec) {
    blob.put_scalar("toy", static_cast<double>(static_cast<int>(spec.kind)));
    blob.put_scalar("noise_sigma", spec.noise_sigma);
    const auto& l = spec.line;
    Matrix line(1, 9);
    line << l.anchor.x(), l.anchor.y(), l.direction.x(), l.direction.y(), l.clusters[0][0], l.clusters[0][1],
        l.clusters[1][0], l.clusters[1][1], l.window;
    blob.put("line", line);
    const auto& c = spec.circle;
    Matrix circle(1, 6);
    circle << c.center.x(), c.center.y(), c.base_radius, c.amplitude, static_cast<double>(c.frequency), c.window;
    blob.put("circle", circle);
    if (spec.kind == ToyKind::Haystack) {
        const auto& h = spec.haystack;
        blob.put("haystack_mean", h.mean);
        blob.put("haystack_covariance", h.covariance);
        Matrix extra(1, 3);
        extra << static_cast<double>(h.constant_index), h.constant_value, h.sweep_half_width;
        blob.put("haystack_constant", extra);
    }
}

ToySpec get_spec(const ModelBlob& blob) {
    ToySpec spec;
    spec.kind = static_cast<ToyKind>(static_cast<int>(blob.scalar("toy")));
    spec.noise_sigma = blob.scalar("noise_sigma");
    const Matrix& line = blob.matrix("line");
    spec.line.anchor = {line(0, 0), line(0, 1)};
    spec.line.direction = {line(0, 2), line(0, 3)};
    spec.line.clusters = {{{line(0, 4), line(0, 5)}, {line(0, 6), line(0, 7)}}};
    spec.line.window = line(0, 8);
    const Matrix& circle = blob.matrix("circle");
    spec.circle.center = {circle(0, 0), circle(0, 1)};
    spec.circle.base_radius = circle(0, 2);
    spec.circle.amplitude = circle(0, 3);
    spec.circle.frequency = static_cast<int>(circle(0, 4));
    spec.circle.window = circle(0, 5);
    if (spec.kind == ToyKind::Haystack) {
        spec.haystack.mean = blob.vector("haystack_mean");
        spec.haystack.covariance = blob.matrix("haystack_covariance");
        const Matrix& extra = blob.matrix("haystack_constant");
        spec.haystack.constant_index = static_cast<Index>(extra(0, 0));
        spec.haystack.constant_value = extra(0, 1);
        spec.haystack.sweep_half_width = extra(0, 2);
    }
    return spec;
}

void put_standardizer(ModelBlob& blob, const Standardizer& s, const std::string& prefix = "") {
    blob.put(prefix + "mean", s.mean);
    blob.put(prefix + "scale", s.scale);
}

Standardizer get_standardizer(const ModelBlob& blob, const std::string& prefix = "") {
    return {blob.vector(prefix + "mean"), blob.vector(prefix + "scale")};
}

double sample_variance(const Vector& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    return (v.array() - v.mean()).square().mean();
}

// Signal variance of a GP fitted to targets with this spread.
double signal_variance_for(const Vector& targets) {
    const double var = sample_variance(targets);
    return var > kVarianceFloor ? var : 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize(const Detector& detector) {
    ModelBlob blob;
    blob.kind = detector.kind();
    detector.save(blob);
    return blob.encode();
}

std::unique_ptr<Detector> deserialize(std::span<const std::uint8_t> bytes) {
    const ModelBlob blob = ModelBlob::decode(bytes);
    const std::string& k = blob.kind;
    if (k == "reference") return std::make_unique<ReferenceDetector>(get_spec(blob));
    if (k == "md") return std::make_unique<MahalanobisModel>(MahalanobisModel::load(blob));
    if (k == "lof") return std::make_unique<LofModel>(LofModel::load(blob));
    if (k == "ocsvm") return std::make_unique<OcSvmModel>(OcSvmModel::load(blob));
    if (k == "gp" || k == "ncgp") return std::make_unique<GpModel>(GpModel::load(blob));
    if (k == "pca") return std::make_unique<PcaTruncModel>(PcaTruncModel::load(blob));
    if (k == "aa") return std::make_unique<AutoAssocModel>(AutoAssocModel::load(blob));
    if (k == "mdaa") return std::make_unique<MdAaModel>(MdAaModel::load(blob));
    if (k == "aagp") return std::make_unique<AaGpModel>(AaGpModel::load(blob));
    throw InvalidArgument("unknown model kind '" + k + "'");
}

void ReferenceDetector::save(ModelBlob& blob) const { put_spec(blob, spec_); }

// ---------------------------------------------------------------------------
// Mahalanobis

MahalanobisModel MahalanobisModel::from_moments(Vector mean, Matrix covariance) {
    require(covariance.rows() == mean.size() && covariance.cols() == mean.size(), "md: covariance shape mismatch");
    MahalanobisModel m;
    m.mean_ = std::move(mean);
    m.covariance_ = std::move(covariance);
    m.chol_ = spd_cholesky(m.covariance_);
    return m;
}

MahalanobisModel fit_mahalanobis(const Matrix& train) {
    const Index n = train.rows();
    const Index d = train.cols();
    require(n > d, "md: need more training points than dimensions");
    Vector mean = train.colwise().mean().transpose();
    const Matrix centred = train.rowwise() - mean.transpose();
    Matrix cov = (centred.transpose() * centred) / static_cast<double>(n - 1);
    const double lambda = std::max(1e-6 * cov.diagonal().mean(), kVarianceFloor);
    cov.diagonal().array() += lambda;
    return MahalanobisModel::from_moments(std::move(mean), std::move(cov));
}

Vector MahalanobisModel::score(const Matrix& points) const {
    require(points.cols() == mean_.size(), "md: dimension mismatch");
    const Matrix centred = (points.rowwise() - mean_.transpose()).transpose();
    const Matrix w = chol_.triangularView<Eigen::Lower>().solve(centred);
    return w.colwise().norm().transpose();
}

void MahalanobisModel::save(ModelBlob& blob) const {
    blob.put("mean", mean_);
    blob.put("covariance", covariance_);
    blob.put("cholesky", chol_);
}

MahalanobisModel MahalanobisModel::load(const ModelBlob& blob) {
    MahalanobisModel m;
    m.mean_ = blob.vector("mean");
    m.covariance_ = blob.matrix("covariance");
    m.chol_ = blob.matrix("cholesky");
    return m;
}

// ---------------------------------------------------------------------------
// LOF

LofModel fit_lof(const Matrix& train, Index k) {
    const Index n = train.rows();
    require(k >= 1 && k < n, "lof: need 1 <= k < n_train");
    LofModel m;
    m.train_ = train;
    m.k_ = k;
    const auto nb = kernels::knn(train, train, k, true);
    m.k_distance_ = nb.distance.col(k - 1);
    m.lrd_.resize(n);
    for (Index i = 0; i < n; ++i) {
        double reach = 0.0;
        for (Index j = 0; j < k; ++j) {
            reach += std::max({m.k_distance_[nb.index(i, j)], nb.distance(i, j), kReachFloor});
        }
        m.lrd_[i] = static_cast<double>(k) / reach;
    }
    return m;
}

Vector LofModel::score(const Matrix& points) const {
    require(points.cols() == train_.cols(), "lof: dimension mismatch");
    const auto nb = kernels::knn(points, train_, k_, false);
    Vector out(points.rows());
    for (Index q = 0; q < points.rows(); ++q) {
        double reach = 0.0;
        double lrd_sum = 0.0;
        for (Index j = 0; j < k_; ++j) {
            const Index r = nb.index(q, j);
            reach += std::max({k_distance_[r], nb.distance(q, j), kReachFloor});
            lrd_sum += lrd_[r];
        }
        // mean(lrd of neighbours) / lrd(query), with lrd(query) = k / reach
        out[q] = (lrd_sum / static_cast<double>(k_)) * reach / static_cast<double>(k_);
    }
    return out;
}

void LofModel::save(ModelBlob& blob) const {
    blob.put("train", train_);
    blob.put_scalar("k", static_cast<double>(k_));
    blob.put("k_distance", k_distance_);
    blob.put("lrd", lrd_);
}

LofModel LofModel::load(const ModelBlob& blob) {
    LofModel m;
    m.train_ = blob.matrix("train");
    m.k_ = static_cast<Index>(blob.scalar("k"));
    m.k_distance_ = blob.vector("k_distance");
    m.lrd_ = blob.vector("lrd");
    return m;
}

// ---------------------------------------------------------------------------
// GP

std::vector<Index> subsample_indices(Index n, double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction <= 1.0, "subsample fraction must lie in (0, 1]");
    const Index count = std::min(n, std::max<Index>(2, std::llround(fraction * static_cast<double>(n))));
    require(n >= 2, "subsample needs at least two points");
    Rng rng(seed);
    std::vector<Index> idx = rng.choose(n, count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

Matrix take_rows(const Matrix& m, const std::vector<Index>& idx) {
    Matrix out(static_cast<Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out.row(static_cast<Index>(r)) = m.row(idx[r]);
    }
    return out;
}

Vector take(const Vector& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out[static_cast<Index>(r)] = v[idx[r]];
    }
    return out;
}

double choose_lengthscale(const Matrix& all_inputs, const Matrix& inputs, const Vector& targets, double sv,
                          const Vector& noise, double fixed, LengthscaleRule rule) {
    if (fixed > 0.0) {
        return fixed;
    }
    const double median = median_lengthscale(all_inputs);
    if (rule == LengthscaleRule::Median) {
        return median;
    }
    return select_lengthscale(inputs, targets, sv, noise, median);
}

}  // namespace

GpModel fit_gp(const Dataset& train, const GpOptions& options, std::uint64_t seed) {
    require(train.targets.size() == train.points.rows(), "gp: training targets are required");
    require(options.noise_variance >= 0.0, "gp: noise variance must be non-negative");
    GpModel m;
    m.standardizer_ = Standardizer::fit(train.points);
    const Matrix z = m.standardizer_.apply(train.points);
    const auto idx = subsample_indices(z.rows(), options.subsample_fraction, derive_seed(seed, {"gp", "subsample"}));
    const Vector y = take(train.targets, idx);
    const Matrix inputs = take_rows(z, idx);
    const Vector noise = Vector::Constant(inputs.rows(), options.noise_variance);
    const double sv = signal_variance_for(y);
    const double lengthscale = choose_lengthscale(z, inputs, y, sv, noise, options.lengthscale, options.rule);
    m.gp_ = GpRegressor::fit(inputs, y, {lengthscale, sv}, noise);
    m.base_noise_ = options.noise_variance;
    return m;
}

GpModel fit_ncgp(const Dataset& train, const NcGpOptions& options, std::uint64_t seed) {
    require(train.targets.size() == train.points.rows(), "ncgp: training targets are required");
    require(options.noise_scale >= 0.0, "ncgp: noise scale must be non-negative");
    require(options.noise_variance >= 0.0 && options.pseudo_noise_variance >= 0.0,
            "ncgp: noise variances must be non-negative");
    GpModel m;
    m.noise_contrastive_ = true;
    m.base_noise_ = options.noise_variance;
    m.standardizer_ = Standardizer::fit(train.points);
    const Matrix z = m.standardizer_.apply(train.points);
    const auto idx = subsample_indices(z.rows(), options.subsample_fraction, derive_seed(seed, {"gp", "subsample"}));
    const Matrix base = take_rows(z, idx);
    const Vector y = take(train.targets, idx);
    const Index s = base.rows();
    const double sv = signal_variance_for(y);
    const double lengthscale = choose_lengthscale(z, base, y, sv, Vector::Constant(s, options.noise_variance),
                                                  options.lengthscale, options.rule);

    Rng rng(derive_seed(seed, {"ncgp", "pseudo"}));
    Matrix inputs(2 * s, z.cols());
    inputs.topRows(s) = base;
    for (Index i = 0; i < s; ++i) {
        for (Index j = 0; j < z.cols(); ++j) {
            inputs(s + i, j) = base(i, j) + options.noise_scale * rng.normal();
        }
    }
    Vector targets(2 * s);
    targets.head(s) = y;
    targets.tail(s).setConstant(y.mean());
    Vector noise(2 * s);
    noise.head(s).setConstant(options.noise_variance);
    noise.tail(s).setConstant(options.pseudo_noise_variance * sv);

    m.gp_ = GpRegressor::fit(std::move(inputs), targets, {lengthscale, sv}, std::move(noise));
    return m;
}

Vector GpModel::predictive_variance(const Matrix& points) const {
    const Matrix z = standardizer_.apply(points);
    Vector var = gp_.predict_latent_variance(z);
    if (!noise_contrastive_) {
        return var;
    }
    // Kernel-weighted average of the excess observation noise. Distances are
    // shifted by the nearest one so far-away queries keep finite weights.
    const Vector excess = (gp_.noise_variance().array() - base_noise_).cwiseMax(0.0);
    const Matrix d2 = kernels::sq_dists(z, gp_.inputs());
    const double inv = 1.0 / (2.0 * gp_.kernel().lengthscale * gp_.kernel().lengthscale);
    for (Index q = 0; q < z.rows(); ++q) {
        const double nearest = d2.row(q).minCoeff();
        double wsum = 0.0;
        double esum = 0.0;
        for (Index i = 0; i < d2.cols(); ++i) {
            const double w = std::exp(-(d2(q, i) - nearest) * inv);
            wsum += w;
            esum += w * excess[i];
        }
        var[q] += esum / wsum;
    }
    return var;
}

Vector GpModel::predictive_mean(const Matrix& points) const {
    return gp_.predict_mean(standardizer_.apply(points)).col(0);
}

Vector GpModel::score(const Matrix& points) const { return predictive_variance(points).array().sqrt(); }

void GpModel::save(ModelBlob& blob) const {
    put_standardizer(blob, standardizer_);
    gp_.save(blob, "gp.");
    blob.put_scalar("noise_contrastive", noise_contrastive_ ? 1.0 : 0.0);
    blob.put_scalar("base_noise", base_noise_);
}

GpModel GpModel::load(const ModelBlob& blob) {
    GpModel m;
    m.standardizer_ = get_standardizer(blob);
    m.gp_ = GpRegressor::load(blob, "gp.");
    m.noise_contrastive_ = blob.scalar("noise_contrastive") != 0.0;
    m.base_noise_ = blob.scalar("base_noise");
    return m;
}

// ---------------------------------------------------------------------------
// PCA

PcaTruncModel fit_pca_trunc(const Matrix& train, double variance_threshold) {
    require(variance_threshold > 0.0 && variance_threshold < 1.0, "pca: variance threshold must lie in (0, 1)");
    require(train.rows() >= 2, "pca: need at least two training points");
    PcaTruncModel m;
    m.standardizer_ = Standardizer::fit(train);
    const Matrix z = m.standardizer_.apply(train);
    m.centre_ = z.colwise().mean().transpose();
    const Matrix centred = z.rowwise() - m.centre_.transpose();
    const Matrix cov = centred.transpose() * centred / static_cast<double>(z.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("pca: eigendecomposition failed");
    }
    // Eigen sorts ascending; walk from the largest.
    const Index d = cov.rows();
    const Vector values = eig.eigenvalues().reverse().cwiseMax(0.0);
    const Matrix vectors = eig.eigenvectors().rowwise().reverse();
    const double total = values.sum();
    Index keep = 0;
    if (total > 0.0) {
        double acc = 0.0;
        while (keep < d && acc < variance_threshold * total) {
            acc += values[keep];
            ++keep;
        }
    }
    m.components_ = vectors.leftCols(keep);
    m.discarded_ = vectors.rightCols(d - keep);
    return m;
}

Vector PcaTruncModel::score(const Matrix& points) const {
    const Matrix centred = standardizer_.apply(points).rowwise() - centre_.transpose();
    if (discarded_.cols() == 0) {
        return Vector::Zero(points.rows());
    }
    // Residual energy = energy in the discarded (orthonormal) directions.
    return (centred * discarded_).rowwise().squaredNorm();
}

void PcaTruncModel::save(ModelBlob& blob) const {
    put_standardizer(blob, standardizer_);
    blob.put("centre", centre_);
    blob.put("components", components_);
    blob.put("discarded", discarded_);
}

PcaTruncModel PcaTruncModel::load(const ModelBlob& blob) {
    PcaTruncModel m;
    m.standardizer_ = get_standardizer(blob);
    m.centre_ = blob.vector("centre");
    m.components_ = blob.matrix("components");
    m.discarded_ = blob.matrix("discarded");
    return m;
}

// ---------------------------------------------------------------------------
// Auto-associative MLP

AutoAssocModel fit_autoassoc(const Matrix& train, const AutoAssocOptions& options, std::uint64_t seed) {
    require(train.rows() >= 32, "aa: need at least 32 training points");
    require(!options.hidden.empty(), "aa: need at least one hidden layer");
    AutoAssocModel m;
    m.standardizer_ = Standardizer::fit(train);
    const Matrix z = m.standardizer_.apply(train);
    std::vector<Index> sizes{z.cols()};
    sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
    sizes.push_back(z.cols());
    std::vector<Activation> acts(options.hidden.size(), Activation::Tanh);
    acts.push_back(Activation::Identity);

    Rng init(derive_seed(seed, {"aa", "init"}));
    m.net_ = Mlp(sizes, acts, init);
    Rng shuffle(derive_seed(seed, {"aa", "shuffle"}));
    m.report_ = train_mlp(m.net_, z, z, Vector::Ones(z.rows()), Loss::MeanSquared, options.train, shuffle);
    return m;
}

Matrix AutoAssocModel::reconstruction_errors(const Matrix& points) const {
    const Matrix z = standardizer_.apply(points);
    return net_.forward(z) - z;
}

Vector AutoAssocModel::score(const Matrix& points) const {
    return reconstruction_errors(points).rowwise().squaredNorm();
}

void AutoAssocModel::save(ModelBlob& blob) const {
    put_standardizer(blob, standardizer_);
    net_.save(blob, "net.");
}

AutoAssocModel AutoAssocModel::load(const ModelBlob& blob) {
    AutoAssocModel m;
    m.standardizer_ = get_standardizer(blob);
    m.net_ = Mlp::load(blob, "net.");
    return m;
}

MdAaModel fit_md_aa(const Matrix& train, std::shared_ptr<const AutoAssocModel> aa) {
    require(aa != nullptr, "mdaa: auto-associative model required");
    MahalanobisModel errors = fit_mahalanobis(aa->reconstruction_errors(train));
    return MdAaModel(std::move(aa), std::move(errors));
}

Vector MdAaModel::score(const Matrix& points) const { return errors_.score(aa_->reconstruction_errors(points)); }

void MdAaModel::save(ModelBlob& blob) const {
    ModelBlob inner;
    aa_->save(inner);
    for (auto& [name, value] : inner.arrays) {
        blob.put("aa." + name, std::move(value));
    }
    blob.put("md.mean", errors_.mean());
    blob.put("md.covariance", errors_.covariance());
}

MdAaModel MdAaModel::load(const ModelBlob& blob) {
    ModelBlob aa;
    for (const auto& [name, value] : blob.arrays) {
        if (name.rfind("aa.", 0) == 0) {
            aa.put(name.substr(3), value);
        }
    }
    auto model = std::make_shared<const AutoAssocModel>(AutoAssocModel::load(aa));
    return MdAaModel(std::move(model),
                     MahalanobisModel::from_moments(blob.vector("md.mean"), blob.matrix("md.covariance")));
}

// ---------------------------------------------------------------------------
// Auto-associative GP

AaGpModel fit_aa_gp(const Matrix& train, const GpOptions& options, std::uint64_t seed) {
    AaGpModel m;
    m.standardizer_ = Standardizer::fit(train);
    const Matrix z = m.standardizer_.apply(train);
    const auto idx = subsample_indices(z.rows(), options.subsample_fraction, derive_seed(seed, {"aagp", "subsample"}));
    const double lengthscale = options.lengthscale > 0.0 ? options.lengthscale : median_lengthscale(z);
    const Matrix inputs = take_rows(z, idx);
    const Index s = inputs.rows();
    for (Index d = 0; d < z.cols(); ++d) {
        const Vector y = inputs.col(d);
        m.gps_.push_back(GpRegressor::fit(inputs, y, {lengthscale, signal_variance_for(y)},
                                          Vector::Constant(s, options.noise_variance)));
    }
    return m;
}

Matrix AaGpModel::reconstruct(const Matrix& points) const {
    const Matrix z = standardizer_.apply(points);
    Matrix out(z.rows(), z.cols());
    for (Index d = 0; d < z.cols(); ++d) {
        out.col(d) = gps_[static_cast<std::size_t>(d)].predict_mean(z).col(0);
    }
    return out;
}

Vector AaGpModel::score(const Matrix& points) const {
    const Matrix z = standardizer_.apply(points);
    return (reconstruct(points) - z).rowwise().squaredNorm();
}

void AaGpModel::save(ModelBlob& blob) const {
    put_standardizer(blob, standardizer_);
    blob.put_scalar("outputs", static_cast<double>(gps_.size()));
    for (std::size_t d = 0; d < gps_.size(); ++d) {
        gps_[d].save(blob, "gp" + std::to_string(d) + ".");
    }
}

AaGpModel AaGpModel::load(const ModelBlob& blob) {
    AaGpModel m;
    m.standardizer_ = get_standardizer(blob);
    const auto count = static_cast<std::size_t>(blob.scalar("outputs"));
    for (std::size_t d = 0; d < count; ++d) {
        m.gps_.push_back(GpRegressor::load(blob, "gp" + std::to_string(d) + "."));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Calibration

Calibrator::Calibrator(const Vector& validation_scores) {
    require(validation_scores.size() >= 1, "calibrator: validation scores must be non-empty");
    require(validation_scores.allFinite(), "calibrator: validation scores must be finite");
    sorted_.assign(validation_scores.data(), validation_scores.data() + validation_scores.size());
    std::sort(sorted_.begin(), sorted_.end());
}

double Calibrator::confidence(double raw_score) const {
    const auto first_ge = std::lower_bound(sorted_.begin(), sorted_.end(), raw_score);
    return static_cast<double>(sorted_.end() - first_ge) / static_cast<double>(sorted_.size());
}

Vector Calibrator::confidence(const Vector& raw_scores) const {
    Vector out(raw_scores.size());
    for (Index i = 0; i < raw_scores.size(); ++i) {
        out[i] = confidence(raw_scores[i]);
    }
    return out;
}

Vector calibrate_confidence(const Calibrator& calibrator, const Vector& raw_scores) {
    return calibrator.confidence(raw_scores);
}

}  // namespace oodbench
