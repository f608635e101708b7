#include "oodbench/toyspace.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

namespace oodbench {

namespace {

constexpr std::uint64_t kHaystackRotationSeed = 0x4a61a7c3u;

// Gaussian scatter truncated to the ID band so that every generated ID point
// satisfies ground_truth_id.
double truncated_offset(Rng& rng, double sigma) {
    const double limit = 2.0 * sigma * (1.0 - 1e-9);
    for (;;) {
        const double z = rng.normal(0.0, sigma);
        if (std::abs(z) <= limit) {
            return z;
        }
    }
}

Eigen::Vector2d line_normal(const LineParams& p) { return {-p.direction.y(), p.direction.x()}; }

double circle_boundary(const CircleParams& p, double theta) {
    return p.base_radius + p.amplitude * std::sin(p.frequency * theta);
}

void check_dims(const ToySpec& spec, const Matrix& points) {
    require(points.cols() == spec.dims(), "toy: point dimension does not match the toy");
}

Index first_free_feature(const HaystackParams& p) { return p.constant_index == 0 ? 1 : 0; }

}  // namespace

std::string_view to_string(ToyKind kind) noexcept {
    switch (kind) {
        case ToyKind::Line: return "line";
        case ToyKind::Circle: return "circle";
        case ToyKind::Haystack: return "haystack";
    }
    return "unknown";
}

ToyKind parse_toy_kind(std::string_view name) {
    if (name == "line") return ToyKind::Line;
    if (name == "circle") return ToyKind::Circle;
    if (name == "haystack") return ToyKind::Haystack;
    throw InvalidArgument("unknown toy '" + std::string(name) + "'");
}

ToySpec ToySpec::line_default() {
    ToySpec spec;
    spec.kind = ToyKind::Line;
    return spec;
}

ToySpec ToySpec::circle_default() {
    ToySpec spec;
    spec.kind = ToyKind::Circle;
    return spec;
}

ToySpec ToySpec::haystack_default() {
    constexpr Index dims = 10;
    constexpr double scale = 4.0;
    ToySpec spec;
    spec.kind = ToyKind::Haystack;
    spec.haystack.mean = Vector::Zero(dims);

    // Covariance = Q diag(0.25 .. 1.0) Q^T * scale with a fixed random rotation Q.
    Rng rng(kHaystackRotationSeed);
    Matrix gaussian(dims, dims);
    for (Index i = 0; i < dims; ++i) {
        for (Index j = 0; j < dims; ++j) {
            gaussian(i, j) = rng.normal();
        }
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
    const Eigen::MatrixXd q = qr.householderQ();
    const Vector eigenvalues = Vector::LinSpaced(dims, 0.25, 1.0) * scale;
    const Eigen::MatrixXd cov = q * eigenvalues.asDiagonal() * q.transpose();
    spec.haystack.covariance = 0.5 * (cov + cov.transpose());
    return spec;
}

ToySpec ToySpec::make_default(ToyKind kind) {
    switch (kind) {
        case ToyKind::Line: return line_default();
        case ToyKind::Circle: return circle_default();
        case ToyKind::Haystack: return haystack_default();
    }
    throw InvalidArgument("unknown toy kind");
}

void ToySpec::validate() const {
    require(noise_sigma > 0.0, "toy: noise_sigma must be positive");
    switch (kind) {
        case ToyKind::Line: {
            require(std::abs(line.direction.norm() - 1.0) < 1e-9, "line: direction must be a unit vector");
            const auto& [a, b] = line.clusters;
            require(a[0] < a[1] && b[0] < b[1], "line: cluster intervals must be non-empty");
            require(a[1] < b[0] || b[1] < a[0], "line: cluster intervals must be disjoint");
            require(line.window > 0.0, "line: window must be positive");
            break;
        }
        case ToyKind::Circle:
            require(circle.base_radius > 0.0, "circle: radius must be positive");
            require(circle.amplitude >= 0.0 && circle.amplitude < circle.base_radius,
                    "circle: amplitude must be below the base radius");
            require(circle.window > 0.0, "circle: window must be positive");
            break;
        case ToyKind::Haystack: {
            const auto& h = haystack;
            const Index d = h.mean.size();
            require(d >= 2, "haystack: needs at least two features");
            require(h.covariance.rows() == d && h.covariance.cols() == d, "haystack: covariance shape");
            require((h.covariance - h.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12,
                    "haystack: covariance must be symmetric");
            require(Eigen::LLT<Matrix>(h.covariance).info() == Eigen::Success,
                    "haystack: covariance must be positive definite");
            require(h.constant_index >= 0 && h.constant_index < d, "haystack: constant index out of range");
            require(h.sweep_half_width > 0.0, "haystack: sweep half width must be positive");
            break;
        }
    }
}

Vector toy_targets(const ToySpec& spec, const Matrix& points) {
    check_dims(spec, points);
    Vector out(points.rows());
    for (Index i = 0; i < points.rows(); ++i) {
        switch (spec.kind) {
            case ToyKind::Line:
                out[i] = (points.row(i).transpose() - spec.line.anchor).dot(spec.line.direction);
                break;
            case ToyKind::Circle: {
                const Eigen::Vector2d p = points.row(i).transpose() - spec.circle.center;
                out[i] = std::atan2(p.y(), p.x());
                break;
            }
            case ToyKind::Haystack:
                out[i] = points(i, first_free_feature(spec.haystack));
                break;
        }
    }
    return out;
}

Dataset sample_id(const ToySpec& spec, Rng& rng, Index n) {
    Matrix points(n, spec.dims());
    switch (spec.kind) {
        case ToyKind::Line: {
            const auto& p = spec.line;
            const Eigen::Vector2d normal = line_normal(p);
            for (Index i = 0; i < n; ++i) {
                const auto& cluster = p.clusters[rng.below(2)];
                const double t = rng.uniform(cluster[0], cluster[1]);
                const double offset = truncated_offset(rng, spec.noise_sigma);
                points.row(i) = (p.anchor + t * p.direction + offset * normal).transpose();
            }
            break;
        }
        case ToyKind::Circle: {
            const auto& p = spec.circle;
            for (Index i = 0; i < n; ++i) {
                const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
                const double r = circle_boundary(p, theta) + truncated_offset(rng, spec.noise_sigma);
                points(i, 0) = p.center.x() + r * std::cos(theta);
                points(i, 1) = p.center.y() + r * std::sin(theta);
            }
            break;
        }
        case ToyKind::Haystack: {
            const auto& p = spec.haystack;
            const Matrix chol = Eigen::LLT<Matrix>(p.covariance).matrixL();
            for (Index i = 0; i < n; ++i) {
                points.row(i) = (p.mean + chol * rng.normal_vector(p.mean.size())).transpose();
                points(i, p.constant_index) = p.constant_value;
            }
            break;
        }
    }
    return Dataset{points, toy_targets(spec, points)};
}

Matrix sample_ood(const ToySpec& spec, Rng& rng, Index n) {
    if (spec.kind == ToyKind::Haystack) {
        const auto& p = spec.haystack;
        Matrix points = sample_id(spec, rng, n).points;
        for (Index i = 0; i < n; ++i) {
            double v = p.constant_value;
            while (v == p.constant_value) {
                v = rng.uniform(p.constant_value - p.sweep_half_width, p.constant_value + p.sweep_half_width);
            }
            points(i, p.constant_index) = v;
        }
        return points;
    }
    const double window = spec.kind == ToyKind::Line ? spec.line.window : spec.circle.window;
    const Eigen::Vector2d center = spec.kind == ToyKind::Line ? Eigen::Vector2d::Zero() : spec.circle.center;
    Matrix points(n, 2);
    Matrix candidate(1, 2);
    for (Index i = 0; i < n;) {
        candidate(0, 0) = center.x() + rng.uniform(-window, window);
        candidate(0, 1) = center.y() + rng.uniform(-window, window);
        if (!ground_truth_id(spec, candidate)[0]) {
            points.row(i++) = candidate.row(0);
        }
    }
    return points;
}

LabeledSplits generate_toy(const ToySpec& spec, std::uint64_t seed, SplitCounts counts) {
    require(counts.train >= 1 && counts.valid >= 1 && counts.test >= 1, "generate_toy: counts must be >= 1");
    spec.validate();
    const auto name = to_string(spec.kind);

    Rng train_rng(derive_seed(seed, {name, "train"}));
    Rng valid_rng(derive_seed(seed, {name, "valid"}));
    Rng branch_rng(derive_seed(seed, {name, "test-branch"}));
    Rng test_rng(derive_seed(seed, {name, "test"}));

    LabeledSplits out;
    out.train = sample_id(spec, train_rng, counts.train);
    out.valid = sample_id(spec, valid_rng, counts.valid);

    out.test_is_id.resize(counts.test);
    out.test.points.resize(counts.test, spec.dims());
    for (Index i = 0; i < counts.test; ++i) {
        const bool is_id = branch_rng.below(2) == 0;
        out.test_is_id[i] = is_id;
        out.test.points.row(i) = is_id ? sample_id(spec, test_rng, 1).points.row(0) : sample_ood(spec, test_rng, 1).row(0);
    }
    out.test.targets = toy_targets(spec, out.test.points);
    return out;
}

Vector reference_ood_score(const ToySpec& spec, const Matrix& points) {
    check_dims(spec, points);
    Vector out(points.rows());
    switch (spec.kind) {
        case ToyKind::Line: {
            const Eigen::Vector2d normal = line_normal(spec.line);
            for (Index i = 0; i < points.rows(); ++i) {
                out[i] = std::abs((points.row(i).transpose() - spec.line.anchor).dot(normal));
            }
            break;
        }
        case ToyKind::Circle: {
            const auto& p = spec.circle;
            for (Index i = 0; i < points.rows(); ++i) {
                const Eigen::Vector2d d = points.row(i).transpose() - p.center;
                out[i] = std::abs(d.norm() - circle_boundary(p, std::atan2(d.y(), d.x())));
            }
            break;
        }
        case ToyKind::Haystack: {
            const auto& p = spec.haystack;
            out = (points.col(p.constant_index).array() - p.constant_value).abs();
            break;
        }
    }
    return out;
}

BoolVector ground_truth_id(const ToySpec& spec, const Matrix& points) {
    check_dims(spec, points);
    if (spec.kind == ToyKind::Haystack) {
        const auto& p = spec.haystack;
        return (points.col(p.constant_index).array() == p.constant_value).matrix();
    }
    return (reference_ood_score(spec, points).array() <= 2.0 * spec.noise_sigma).matrix();
}

Matrix reference_error_gradient(const ToySpec& spec, const Matrix& points) {
    check_dims(spec, points);
    Matrix grad = Matrix::Zero(points.rows(), points.cols());
    switch (spec.kind) {
        case ToyKind::Line: {
            const Eigen::Vector2d normal = line_normal(spec.line);
            for (Index i = 0; i < points.rows(); ++i) {
                const double d = (points.row(i).transpose() - spec.line.anchor).dot(normal);
                grad.row(i) = (2.0 * d * normal).transpose();
            }
            break;
        }
        case ToyKind::Circle: {
            const auto& p = spec.circle;
            for (Index i = 0; i < points.rows(); ++i) {
                const Eigen::Vector2d d = points.row(i).transpose() - p.center;
                const double r2 = d.squaredNorm();
                if (r2 == 0.0) {
                    continue;
                }
                const double r = std::sqrt(r2);
                const double theta = std::atan2(d.y(), d.x());
                const double err = r - circle_boundary(p, theta);
                const Eigen::Vector2d d_radius = d / r;
                const Eigen::Vector2d d_theta = Eigen::Vector2d(-d.y(), d.x()) / r2;
                const Eigen::Vector2d d_err =
                    d_radius - p.amplitude * p.frequency * std::cos(p.frequency * theta) * d_theta;
                grad.row(i) = (2.0 * err * d_err).transpose();
            }
            break;
        }
        case ToyKind::Haystack: {
            const auto& p = spec.haystack;
            grad.col(p.constant_index) = 2.0 * (points.col(p.constant_index).array() - p.constant_value).matrix();
            break;
        }
    }
    return grad;
}

void write_dataset_csv(std::ostream& out, const Dataset& data, const BoolVector* is_id) {
    require(is_id == nullptr || is_id->size() == data.size(), "write_dataset_csv: label count mismatch");
    for (Index j = 0; j < data.dims(); ++j) {
        out << 'x' << j << ',';
    }
    out << "target,is_id\n";
    const auto old_precision = out.precision(17);
    for (Index i = 0; i < data.size(); ++i) {
        for (Index j = 0; j < data.dims(); ++j) {
            out << data.points(i, j) << ',';
        }
        out << (data.targets.size() == data.size() ? data.targets[i] : 0.0) << ','
            << ((is_id == nullptr || (*is_id)[i]) ? 1 : 0) << '\n';
    }
    out.precision(old_precision);
}

}  // namespace oodbench
