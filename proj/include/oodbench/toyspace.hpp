#pragma once

#include "oodbench/core.hpp"
#include "oodbench/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

namespace oodbench {

enum class ToyKind { Line, Circle, Haystack };

std::string_view to_string(ToyKind kind) noexcept;
ToyKind parse_toy_kind(std::string_view name);

struct LineParams {
    Eigen::Vector2d anchor{0.0, 0.0};
    Eigen::Vector2d direction{2.0 / std::sqrt(5.0), 1.0 / std::sqrt(5.0)};
    /// Two disjoint parameter intervals along the line, one per training cluster.
    std::array<std::array<double, 2>, 2> clusters{{{-3.0, -1.0}, {1.0, 3.0}}};
    double window = 5.0;  ///< plotting / test window is [-window, window]^2
};

struct CircleParams {
    Eigen::Vector2d center{0.0, 0.0};
    double base_radius = 2.0;
    double amplitude = 0.3;
    int frequency = 6;
    double window = 3.5;
};

struct HaystackParams {
    Vector mean;
    Matrix covariance;
    Index constant_index = 4;
    double constant_value = 0.5;
    /// OOD test points and the confidence sweep draw the constant feature
    /// from [c - half_width, c + half_width].
    double sweep_half_width = 2.0;
};

/// One of the three toy problems plus its ground-truth rule.
struct ToySpec {
    ToyKind kind = ToyKind::Line;
    double noise_sigma = 0.1;
    LineParams line;
    CircleParams circle;
    HaystackParams haystack;

    static ToySpec line_default();
    static ToySpec circle_default();
    static ToySpec haystack_default();
    static ToySpec make_default(ToyKind kind);

    Index dims() const noexcept { return kind == ToyKind::Haystack ? haystack.mean.size() : 2; }

    /// Throws InvalidArgument when an invariant is broken.
    void validate() const;
};

struct Dataset {
    Matrix points;
    Vector targets;

    Index size() const noexcept { return points.rows(); }
    Index dims() const noexcept { return points.cols(); }
};

struct LabeledSplits {
    Dataset train;
    Dataset valid;
    Dataset test;
    BoolVector test_is_id;
};

struct SplitCounts {
    Index train = 1000;
    Index valid = 1000;
    Index test = 2000;
};

/// Deterministic for a fixed (spec, seed, counts). Train and validation hold
/// ID points only; the test split alternates between the ID and OOD branches.
LabeledSplits generate_toy(const ToySpec& spec, std::uint64_t seed, SplitCounts counts);

/// Draws n ID points (targets filled in).
Dataset sample_id(const ToySpec& spec, Rng& rng, Index n);
/// Draws n OOD points.
Matrix sample_ood(const ToySpec& spec, Rng& rng, Index n);

/// The regression target the toy attaches to a point: position along the
/// line, angle around the circle, or the first non-constant haystack feature.
Vector toy_targets(const ToySpec& spec, const Matrix& points);

BoolVector ground_truth_id(const ToySpec& spec, const Matrix& points);

/// Distance to the ID manifold: 0 on it, positive off it.
Vector reference_ood_score(const ToySpec& spec, const Matrix& points);

/// Gradient of reference_ood_score(x)^2 with respect to x.
Matrix reference_error_gradient(const ToySpec& spec, const Matrix& points);

/// CSV with header x0,...,x{D-1},target,is_id. `is_id` may be omitted
/// (written as 1, since train and validation are ID by construction).
void write_dataset_csv(std::ostream& out, const Dataset& data, const BoolVector* is_id = nullptr);

}  // namespace oodbench
