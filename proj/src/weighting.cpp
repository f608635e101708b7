#include "oodbench/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oodbench {

namespace {
constexpr double kDensityFloor = 1e-12;
}

Vector PdfProxy::operator()(const Matrix& points) const {
    require(points.cols() == samples.cols(), "pdf: dimension mismatch");
    return kernels::density(points, samples, kernel, bandwidth);
}

PdfProxy estimate_pdf(Matrix samples, DensityKernel kernel, double bandwidth) {
    require(samples.rows() >= 1, "pdf: need at least one sample");
    require(bandwidth > 0.0, "pdf: bandwidth must be positive");
    return PdfProxy{kernel, bandwidth, std::move(samples)};
}

double domination_scale(const Vector& f_x, const Vector& f) {
    require(f_x.size() == f.size(), "domination: size mismatch");
    if (!(f_x.array() > 0.0).any()) {
        throw NumericalError("domination: input-domain pdf vanishes on every evaluation point");
    }
    double scale = 1.0;
    for (Index i = 0; i < f.size(); ++i) {
        if (f[i] >= kDensityFloor) {
            scale = std::min(scale, f_x[i] / f[i]);
        }
    }
    return scale;
}

WeightingContext rescale_dominate(WeightingContext ctx, const Matrix& eval_points) {
    const Vector fx = ctx.f_x(eval_points);
    ctx.s_id = domination_scale(fx, ctx.f_id(eval_points));
    ctx.s_ood = domination_scale(fx, ctx.f_ood(eval_points));
    return ctx;
}

double ood_weight(double a, double b) noexcept {
    if (a < kDensityFloor && b < kDensityFloor) {
        return 1.0;
    }
    return 1.0 - a / std::max(a, b);
}

double id_weight(double a, double b) noexcept {
    if (a < kDensityFloor && b < kDensityFloor) {
        return 0.0;
    }
    return a / std::max(a, b);
}

Vector ood_weight(const Vector& scaled_id, const Vector& scaled_ood) {
    require(scaled_id.size() == scaled_ood.size(), "weights: size mismatch");
    return scaled_id.binaryExpr(scaled_ood, [](double a, double b) { return ood_weight(a, b); });
}

Vector id_weight(const Vector& scaled_id, const Vector& scaled_ood) {
    require(scaled_id.size() == scaled_ood.size(), "weights: size mismatch");
    return scaled_id.binaryExpr(scaled_ood, [](double a, double b) { return id_weight(a, b); });
}

Vector ood_weight(const WeightingContext& ctx, const Matrix& points) {
    return ood_weight(ctx.scaled_id(points), ctx.scaled_ood(points));
}

Vector id_weight(const WeightingContext& ctx, const Matrix& points) {
    return id_weight(ctx.scaled_id(points), ctx.scaled_ood(points));
}

Matrix proxy_coordinates(const ToySpec& spec, const Matrix& points, PdfSpace space) {
    if (space == PdfSpace::InputSpace) {
        return points;
    }
    return reference_ood_score(spec, points);
}

Matrix bounding_grid(const Matrix& points, Index count) {
    require(points.rows() >= 1 && count >= 1, "grid: need points and a positive count");
    const Index d = points.cols();
    auto per_axis = static_cast<Index>(std::floor(std::pow(static_cast<double>(count), 1.0 / static_cast<double>(d)) + 1e-9));
    per_axis = std::max<Index>(per_axis, 1);
    const Vector lo = points.colwise().minCoeff().transpose();
    const Vector hi = points.colwise().maxCoeff().transpose();
    Index total = 1;
    for (Index j = 0; j < d; ++j) {
        total *= per_axis;
    }
    Matrix grid(total, d);
    for (Index r = 0; r < total; ++r) {
        Index rest = r;
        for (Index j = d - 1; j >= 0; --j) {
            const Index k = rest % per_axis;
            rest /= per_axis;
            grid(r, j) = per_axis == 1 ? 0.5 * (lo[j] + hi[j])
                                       : lo[j] + (hi[j] - lo[j]) * static_cast<double>(k) / static_cast<double>(per_axis - 1);
        }
    }
    return grid;
}

WeightingContext build_weighting_context(const Matrix& id_points, const Matrix& ood_points, const ToySpec& spec,
                                         const WeightingOptions& options) {
    const Matrix id = proxy_coordinates(spec, id_points, options.space);
    const Matrix ood = proxy_coordinates(spec, ood_points, options.space);
    const DensityKernel kernel = options.kernel.value_or(
        options.space == PdfSpace::ReferenceErrorSpace ? DensityKernel::Linear : DensityKernel::Gaussian);

    Matrix pooled(id.rows() + ood.rows(), id.cols());
    pooled.topRows(id.rows()) = id;
    pooled.bottomRows(ood.rows()) = ood;
    const double bandwidth = options.bandwidth > 0.0 ? options.bandwidth : scott_bandwidth(pooled);

    WeightingContext ctx;
    ctx.f_id = estimate_pdf(id, kernel, bandwidth);
    ctx.f_ood = estimate_pdf(ood, kernel, bandwidth);
    ctx.f_x = ctx.f_ood;  // the synthetic sampler is taken to cover the input domain

    const Matrix grid = bounding_grid(pooled, options.grid_points);
    Matrix eval(pooled.rows() + grid.rows(), pooled.cols());
    eval.topRows(pooled.rows()) = pooled;
    eval.bottomRows(grid.rows()) = grid;
    return rescale_dominate(std::move(ctx), eval);
}

SynthesisedSet weight_synthesised_set(const Matrix& train, SynthesisedSet set, const ToySpec& spec,
                                      const WeightingOptions& options) {
    const WeightingContext ctx = build_weighting_context(train, set.points, spec, options);
    set.weights = ood_weight(ctx, proxy_coordinates(spec, set.points, options.space));
    return set;
}

}  // namespace oodbench
