#include "oodbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

#include <omp.h>

namespace oodbench::kernels {

namespace {

inline double row_sq_dist(const Matrix& a, Index i, const Matrix& b, Index j) noexcept {
    double acc = 0.0;
    for (Index d = 0; d < a.cols(); ++d) {
        const double diff = a(i, d) - b(j, d);
        acc += diff * diff;
    }
    return acc;
}

inline double kernel_product(const Matrix& eval, Index i, const Matrix& samples, Index j,
                             DensityKernel kernel, double h, double inv_h) noexcept {
    double prod = 1.0;
    for (Index d = 0; d < eval.cols(); ++d) {
        const double dist = std::abs(eval(i, d) - samples(j, d));
        const double u = dist * inv_h;
        if (kernel == DensityKernel::Linear) {
            // Compared in distance units so the support edge does not depend on
            // the rounding of 1/h.
            if (dist >= h) {
                return 0.0;
            }
            prod *= std::max(0.0, 1.0 - u);
        } else {
            prod *= std::exp(-0.5 * u * u) * (1.0 / std::sqrt(2.0 * std::numbers::pi));
        }
    }
    return prod;
}

inline double density_at(const Matrix& eval, Index i, const Matrix& samples, DensityKernel kernel,
                         double bandwidth) noexcept {
    const double inv_h = 1.0 / bandwidth;
    double acc = 0.0;
    for (Index j = 0; j < samples.rows(); ++j) {
        acc += kernel_product(eval, i, samples, j, kernel, bandwidth, inv_h);
    }
    const double norm = static_cast<double>(samples.rows()) * std::pow(bandwidth, static_cast<double>(eval.cols()));
    return acc / norm;
}

// Selects the k smallest (distance, index) pairs for query row i.
void knn_row(const Matrix& query, Index i, const Matrix& reference, Index k, bool exclude_same_index,
             std::vector<std::pair<double, Index>>& scratch, Neighbours& out) {
    scratch.clear();
    for (Index j = 0; j < reference.rows(); ++j) {
        if (exclude_same_index && j == i) {
            continue;
        }
        scratch.emplace_back(row_sq_dist(query, i, reference, j), j);
    }
    std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
    for (Index n = 0; n < k; ++n) {
        out.index(i, n) = scratch[static_cast<std::size_t>(n)].second;
        out.distance(i, n) = std::sqrt(scratch[static_cast<std::size_t>(n)].first);
    }
}

void check_knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index) {
    require(query.cols() == reference.cols(), "knn: dimension mismatch");
    const Index available = reference.rows() - (exclude_same_index ? 1 : 0);
    require(k >= 1 && k <= available, "knn: k out of range");
    require(!exclude_same_index || query.rows() == reference.rows(),
            "knn: exclude_same_index needs query == reference");
}

double median_of(std::vector<double>& values) {
    require(!values.empty(), "median of an empty set");
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

inline std::size_t pair_offset(Index i, Index n) noexcept {
    // Number of pairs (r, c), r < c, with r < i.
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n) -
           static_cast<std::size_t>(i) * static_cast<std::size_t>(i + 1) / 2;
}

}  // namespace

namespace serial {

Matrix sq_dists(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "sq_dists: dimension mismatch");
    Matrix out(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < b.rows(); ++j) {
            out(i, j) = row_sq_dist(a, i, b, j);
        }
    }
    return out;
}

Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var) {
    require(a.cols() == b.cols(), "rbf: dimension mismatch");
    const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
    Matrix out(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < b.rows(); ++j) {
            out(i, j) = signal_var * std::exp(-row_sq_dist(a, i, b, j) * inv);
        }
    }
    return out;
}

Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index) {
    check_knn(query, reference, k, exclude_same_index);
    Neighbours out{decltype(Neighbours::index)(query.rows(), k), Matrix(query.rows(), k)};
    std::vector<std::pair<double, Index>> scratch;
    for (Index i = 0; i < query.rows(); ++i) {
        knn_row(query, i, reference, k, exclude_same_index, scratch, out);
    }
    return out;
}

Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth) {
    require(eval.cols() == samples.cols(), "density: dimension mismatch");
    require(samples.rows() >= 1 && bandwidth > 0.0, "density: needs samples and a positive bandwidth");
    Vector out(eval.rows());
    for (Index i = 0; i < eval.rows(); ++i) {
        out[i] = density_at(eval, i, samples, kernel, bandwidth);
    }
    return out;
}

double median_pairwise_distance(const Matrix& points) {
    const Index n = points.rows();
    require(n >= 2, "median_pairwise_distance needs two points");
    std::vector<double> dists;
    dists.reserve(pair_offset(n, n));
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            dists.push_back(std::sqrt(row_sq_dist(points, i, points, j)));
        }
    }
    return median_of(dists);
}

}  // namespace serial

namespace parallel {

Matrix sq_dists(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "sq_dists: dimension mismatch");
    Matrix out(a.rows(), b.rows());
    const Index rows = a.rows();
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < b.rows(); ++j) {
            out(i, j) = row_sq_dist(a, i, b, j);
        }
    }
    return out;
}

Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var) {
    require(a.cols() == b.cols(), "rbf: dimension mismatch");
    const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
    Matrix out(a.rows(), b.rows());
    const Index rows = a.rows();
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < b.rows(); ++j) {
            out(i, j) = signal_var * std::exp(-row_sq_dist(a, i, b, j) * inv);
        }
    }
    return out;
}

Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index) {
    check_knn(query, reference, k, exclude_same_index);
    Neighbours out{decltype(Neighbours::index)(query.rows(), k), Matrix(query.rows(), k)};
    const Index rows = query.rows();
#pragma omp parallel
    {
        std::vector<std::pair<double, Index>> scratch;
#pragma omp for schedule(dynamic, 16)
        for (Index i = 0; i < rows; ++i) {
            knn_row(query, i, reference, k, exclude_same_index, scratch, out);
        }
    }
    return out;
}

Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth) {
    require(eval.cols() == samples.cols(), "density: dimension mismatch");
    require(samples.rows() >= 1 && bandwidth > 0.0, "density: needs samples and a positive bandwidth");
    Vector out(eval.rows());
    const Index rows = eval.rows();
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < rows; ++i) {
        out[i] = density_at(eval, i, samples, kernel, bandwidth);
    }
    return out;
}

double median_pairwise_distance(const Matrix& points) {
    const Index n = points.rows();
    require(n >= 2, "median_pairwise_distance needs two points");
    std::vector<double> dists(pair_offset(n, n));
#pragma omp parallel for schedule(dynamic, 8)
    for (Index i = 0; i < n; ++i) {
        std::size_t slot = pair_offset(i, n);
        for (Index j = i + 1; j < n; ++j) {
            dists[slot++] = std::sqrt(row_sq_dist(points, i, points, j));
        }
    }
    return median_of(dists);
}

}  // namespace parallel

Matrix sq_dists(const Matrix& a, const Matrix& b, Exec exec) {
    return exec == Exec::Serial ? serial::sq_dists(a, b) : parallel::sq_dists(a, b);
}

Matrix rbf(const Matrix& a, const Matrix& b, double lengthscale, double signal_var, Exec exec) {
    return exec == Exec::Serial ? serial::rbf(a, b, lengthscale, signal_var)
                                : parallel::rbf(a, b, lengthscale, signal_var);
}

Neighbours knn(const Matrix& query, const Matrix& reference, Index k, bool exclude_same_index, Exec exec) {
    return exec == Exec::Serial ? serial::knn(query, reference, k, exclude_same_index)
                                : parallel::knn(query, reference, k, exclude_same_index);
}

Vector density(const Matrix& eval, const Matrix& samples, DensityKernel kernel, double bandwidth, Exec exec) {
    return exec == Exec::Serial ? serial::density(eval, samples, kernel, bandwidth)
                                : parallel::density(eval, samples, kernel, bandwidth);
}

double median_pairwise_distance(const Matrix& points, Exec exec) {
    return exec == Exec::Serial ? serial::median_pairwise_distance(points)
                                : parallel::median_pairwise_distance(points);
}

}  // namespace oodbench::kernels
