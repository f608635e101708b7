#pragma once

#include "oodbench/core.hpp"
#include "oodbench/kernels.hpp"
#include "oodbench/synthesis.hpp"
#include "oodbench/toyspace.hpp"

#include <optional>

namespace oodbench {

enum class PdfSpace {
    InputSpace,           ///< KDE over raw input points
    ReferenceErrorSpace,  ///< 1-D KDE over reference detector scores
};

using kernels::DensityKernel;

/// Kernel density estimate over a fixed sample.
struct PdfProxy {
    DensityKernel kernel = DensityKernel::Linear;
    double bandwidth = 1.0;
    Matrix samples;

    Vector operator()(const Matrix& points) const;
    Index dims() const noexcept { return samples.cols(); }
};

PdfProxy estimate_pdf(Matrix samples, DensityKernel kernel, double bandwidth);

/// Input-domain pdf f_X plus the ID and OOD pdfs, each with a scale factor
/// applied after domination rescaling.
struct WeightingContext {
    PdfProxy f_x;
    PdfProxy f_id;
    PdfProxy f_ood;
    double s_id = 1.0;
    double s_ood = 1.0;

    Vector scaled_id(const Matrix& points) const { return s_id * f_id(points); }
    Vector scaled_ood(const Matrix& points) const { return s_ood * f_ood(points); }
};

/// min over points of f_x / f, ignoring points where f < 1e-12, clamped to
/// at most 1. Throws NumericalError when f_x vanishes on every point.
double domination_scale(const Vector& f_x, const Vector& f);

WeightingContext rescale_dominate(WeightingContext ctx, const Matrix& eval_points);

/// 1 - a / max(a, b), and 1 where both densities fall below 1e-12.
double ood_weight(double scaled_id, double scaled_ood) noexcept;
/// a / max(a, b), and 0 where both densities fall below 1e-12.
double id_weight(double scaled_id, double scaled_ood) noexcept;

Vector ood_weight(const Vector& scaled_id, const Vector& scaled_ood);
Vector id_weight(const Vector& scaled_id, const Vector& scaled_ood);
Vector ood_weight(const WeightingContext& ctx, const Matrix& points);
Vector id_weight(const WeightingContext& ctx, const Matrix& points);

struct WeightingOptions {
    PdfSpace space = PdfSpace::ReferenceErrorSpace;
    /// Linear for error space and Gaussian for input space unless set.
    std::optional<DensityKernel> kernel;
    /// <= 0 selects one Scott bandwidth for the pooled ID and OOD samples.
    double bandwidth = 0.0;
    /// Size of the regular grid added to the domination check.
    Index grid_points = 512;
};

/// Maps points into the proxy space of `space`.
Matrix proxy_coordinates(const ToySpec& spec, const Matrix& points, PdfSpace space);

/// Regular grid over the bounding box of `points`; floor(count^(1/d)) values per axis.
Matrix bounding_grid(const Matrix& points, Index count);

WeightingContext build_weighting_context(const Matrix& id_points, const Matrix& ood_points, const ToySpec& spec,
                                         const WeightingOptions& options = {});

/// Builds f_ID from the training points and f_OOD = f_X from the synthetic
/// points, rescales, and overwrites set.weights with w_OOD.
SynthesisedSet weight_synthesised_set(const Matrix& train, SynthesisedSet set, const ToySpec& spec,
                                      const WeightingOptions& options = {});

}  // namespace oodbench
