#pragma once

#include "oodbench/core.hpp"

#include <vector>

// Data-parallel inner loops. Every kernel has a straightforward serial
// reference in `kernels::serial` and an OpenMP version in
// `kernels::parallel`; the dispatching overloads pick one via `Exec`.
// The two are required to agree bit-for-bit (each output element is computed
// by the same arithmetic in the same order).

namespace oodbench::kernels {

enum class Exec { Serial, Parallel };

enum class DensityKernel {
    Linear,    ///< triangular, max(0, 1 - |u|), product form in d > 1
    Gaussian,  ///< standard normal density, product form
};

struct Neighbours {
    /// Row i holds the k nearest reference rows of query i, closest first.
    Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> index;
    Matrix distance;
};

namespace serial {
Matrix sq_dists(const Matrix& a, const Matrix& b);
Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var);
Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index);
Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth);
double median_pairwise_distance(const Matrix& points);
}  // namespace serial

namespace parallel {
Matrix sq_dists(const Matrix& a, const Matrix& b);
Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var);
Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index);
Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth);
double median_pairwise_distance(const Matrix& points);
}  // namespace parallel

/// Squared Euclidean distances, |a| x |b|.
Matrix sq_dists(const Matrix& a, const Matrix& b, Exec exec = Exec::Parallel);

/// signal_var * exp(-|a_i - b_j|^2 / (2 lengthscale^2)).
Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var,
           Exec exec = Exec::Parallel);

/// Exact brute-force k nearest neighbours. With `exclude_same_index`, query
/// row i never lists reference row i (query and reference are the same set).
/// Ties are broken by the lower reference index.
Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index,
               Exec exec = Exec::Parallel);

/// Kernel density estimate (1 / (n h^d)) sum_i K((x - x_i) / h) at each row of `eval`.
Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth,
               Exec exec = Exec::Parallel);

/// Median of all pairwise Euclidean distances between distinct rows.
double median_pairwise_distance(const Matrix& points, Exec exec = Exec::Parallel);

}  // namespace oodbench::kernels
