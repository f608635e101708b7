#pragma once
// Slow, obviously-correct reference computations used as test oracles.

#include "oodbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

using oodbench::BoolVector;
using oodbench::Index;
using oodbench::Matrix;
using oodbench::Vector;

/// Pairwise Mann-Whitney count: wins + half ties over all ID x OOD pairs.
inline double pairwise_auc(const Vector& conf, const BoolVector& is_id) {
    double wins = 0.0;
    double pairs = 0.0;
    for (Index i = 0; i < conf.size(); ++i) {
        if (!is_id[i]) continue;
        for (Index j = 0; j < conf.size(); ++j) {
            if (is_id[j]) continue;
            pairs += 1.0;
            if (conf[i] > conf[j]) wins += 1.0;
            if (conf[i] == conf[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

/// Local outlier factor straight from the definition: k-distance,
/// reachability distance, local reachability density, then the ratio.
inline double lof(const std::vector<std::vector<double>>& train, const std::vector<double>& query, int k) {
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
        return std::sqrt(s);
    };
    const std::size_t n = train.size();
    auto neighbours = [&](const std::vector<double>& p, std::size_t self) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != self) all.push_back({dist(p, train[j]), j});
        }
        std::sort(all.begin(), all.end());
        all.resize(static_cast<std::size_t>(k));
        return all;
    };
    std::vector<double> kdist(n);
    std::vector<std::vector<std::pair<double, std::size_t>>> nb(n);
    for (std::size_t i = 0; i < n; ++i) {
        nb[i] = neighbours(train[i], i);
        kdist[i] = nb[i].back().first;
    }
    auto lrd_of = [&](const std::vector<std::pair<double, std::size_t>>& list) {
        double s = 0.0;
        for (const auto& [d, j] : list) s += std::max(kdist[j], d);
        return static_cast<double>(k) / s;
    };
    std::vector<double> lrd(n);
    for (std::size_t i = 0; i < n; ++i) lrd[i] = lrd_of(nb[i]);
    const auto qn = neighbours(query, n);
    double ratio = 0.0;
    for (const auto& [d, j] : qn) ratio += lrd[j];
    return ratio / static_cast<double>(k) / lrd_of(qn);
}

/// Euclidean projection onto {0 <= a <= cap, sum a = 1} by bisection on the shift.
inline Vector project_capped_simplex(const Vector& v, double cap) {
    double lo = v.minCoeff() - cap - 1.0;
    double hi = v.maxCoeff() + 1.0;
    Vector a;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        a = (v.array() - mid).max(0.0).min(cap).matrix();
        if (a.sum() > 1.0) lo = mid; else hi = mid;
    }
    return a;
}

/// One-class SVM dual in the normalised form min 0.5 a'Ka subject to
/// 0 <= a <= 1/(nu n), sum a = 1, by accelerated projected gradient.
inline Vector ocsvm_dual_qp(const Matrix& kernel, double nu, int iterations = 200000) {
    const Index n = kernel.rows();
    const double cap = 1.0 / (nu * static_cast<double>(n));
    const double step = 1.0 / kernel.cwiseAbs().rowwise().sum().maxCoeff();
    Vector a = project_capped_simplex(Vector::Constant(n, 1.0 / static_cast<double>(n)), cap);
    Vector y = a;
    double t = 1.0;
    for (int it = 0; it < iterations; ++it) {
        const Vector next = project_capped_simplex(y - step * (kernel * y), cap);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = next + ((t - 1.0) / tn) * (next - a);
        a = next;
        t = tn;
    }
    return a;
}

/// Central finite differences of a scalar function of a vector.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-6) {
    Vector g(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Largest componentwise relative error, with `floor` guarding near-zero entries.
inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6) {
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

/// Composite trapezoid rule for f on [lo, hi] with n intervals.
inline double trapezoid(const std::function<double(double)>& f, double lo, double hi, int n) {
    const double h = (hi - lo) / n;
    double s = 0.5 * (f(lo) + f(hi));
    for (int i = 1; i < n; ++i) s += f(lo + i * h);
    return s * h;
}

}  // namespace oracle
