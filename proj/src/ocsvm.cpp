#include "oodbench/detectors.hpp"

#include "oodbench/kernels.hpp"

#include <cmath>
#include <limits>

namespace oodbench {

namespace {

constexpr double kTau = 1e-12;

// Kernel rows, either from a precomputed matrix or computed on demand when
// the full matrix would be too large.
class KernelRows {
public:
    explicit KernelRows(const Matrix& full) : full_(&full), n_(full.rows()) {}
    KernelRows(const Matrix& points, double gamma) : points_(&points), gamma_(gamma), n_(points.rows()) {}

    Index size() const noexcept { return n_; }

    double diag(Index i) const { return full_ ? (*full_)(i, i) : 1.0; }

    void row(Index i, Vector& out) const {
        if (full_) {
            out = full_->row(i).transpose();
            return;
        }
        out.resize(n_);
        for (Index j = 0; j < n_; ++j) {
            out[j] = std::exp(-gamma_ * (points_->row(i) - points_->row(j)).squaredNorm());
        }
    }

private:
    const Matrix* full_ = nullptr;
    const Matrix* points_ = nullptr;
    double gamma_ = 1.0;
    Index n_ = 0;
};

OcSvmDual smo(const KernelRows& q, double nu, double tolerance, Index max_iterations) {
    const Index n = q.size();
    require(n >= 1, "ocsvm: empty training set");
    require(nu > 0.0 && nu <= 1.0, "ocsvm: nu must lie in (0, 1]");
    const double c = 1.0 / (nu * static_cast<double>(n));

    // Feasible start: fill the box greedily until the mass reaches 1.
    Vector alpha = Vector::Zero(n);
    double remaining = 1.0;
    for (Index i = 0; i < n && remaining > 0.0; ++i) {
        alpha[i] = std::min(c, remaining);
        remaining -= alpha[i];
    }

    Vector grad = Vector::Zero(n);
    Vector row_i;
    Vector row_j;
    for (Index i = 0; i < n; ++i) {
        if (alpha[i] > 0.0) {
            q.row(i, row_i);
            grad += alpha[i] * row_i;
        }
    }

    OcSvmDual out;
    Index iter = 0;
    for (; iter < max_iterations; ++iter) {
        // Second-order working-set selection (all labels are +1).
        double gmax = -std::numeric_limits<double>::infinity();
        Index i = -1;
        for (Index t = 0; t < n; ++t) {
            if (alpha[t] < c && -grad[t] >= gmax) {
                gmax = -grad[t];
                i = t;
            }
        }
        if (i < 0) {
            out.converged = true;
            break;
        }
        q.row(i, row_i);
        double gmax2 = -std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        Index j = -1;
        for (Index t = 0; t < n; ++t) {
            if (alpha[t] <= 0.0) {
                continue;
            }
            gmax2 = std::max(gmax2, grad[t]);
            const double diff = gmax + grad[t];
            if (diff > 0.0) {
                double quad = q.diag(i) + q.diag(t) - 2.0 * row_i[t];
                if (quad <= 0.0) {
                    quad = kTau;
                }
                const double gain = -diff * diff / quad;
                if (gain <= best) {
                    best = gain;
                    j = t;
                }
            }
        }
        if (gmax + gmax2 < tolerance || j < 0) {
            out.converged = true;
            break;
        }
        q.row(j, row_j);

        const double old_i = alpha[i];
        const double old_j = alpha[j];
        double quad = q.diag(i) + q.diag(j) - 2.0 * row_i[j];
        if (quad <= 0.0) {
            quad = kTau;
        }
        const double delta = (grad[i] - grad[j]) / quad;
        const double sum = old_i + old_j;
        double ai = old_i - delta;
        double aj = old_j + delta;
        if (sum > c) {
            if (ai > c) {
                ai = c;
                aj = sum - c;
            }
        } else if (aj < 0.0) {
            aj = 0.0;
            ai = sum;
        }
        if (sum > c) {
            if (aj > c) {
                aj = c;
                ai = sum - c;
            }
        } else if (ai < 0.0) {
            ai = 0.0;
            aj = sum;
        }
        alpha[i] = ai;
        alpha[j] = aj;
        grad += (ai - old_i) * row_i + (aj - old_j) * row_j;
    }
    out.iterations = iter;

    // rho: mean gradient over free variables, else the midpoint of the
    // feasible interval.
    double free_sum = 0.0;
    Index free_count = 0;
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    for (Index t = 0; t < n; ++t) {
        if (alpha[t] >= c) {
            lb = std::max(lb, grad[t]);
        } else if (alpha[t] <= 0.0) {
            ub = std::min(ub, grad[t]);
        } else {
            free_sum += grad[t];
            ++free_count;
        }
    }
    if (free_count > 0) {
        out.rho = free_sum / static_cast<double>(free_count);
    } else if (std::isfinite(ub) && std::isfinite(lb)) {
        out.rho = 0.5 * (ub + lb);
    } else {
        out.rho = std::isfinite(ub) ? ub : lb;
    }
    out.alpha = std::move(alpha);
    return out;
}

constexpr Index kFullKernelLimit = 5000;

}  // namespace

OcSvmDual solve_ocsvm_dual(const Matrix& kernel, double nu, double tolerance, Index max_iterations) {
    require(kernel.rows() == kernel.cols(), "ocsvm: kernel matrix must be square");
    return smo(KernelRows(kernel), nu, tolerance, max_iterations);
}

OcSvmModel fit_ocsvm(const Matrix& train, const OcSvmOptions& options) {
    require(train.rows() >= 1, "ocsvm: empty training set");
    require(options.nu > 0.0 && options.nu <= 1.0, "ocsvm: nu must lie in (0, 1]");
    OcSvmModel model;
    model.standardizer_ = Standardizer::fit(train);
    const Matrix z = model.standardizer_.apply(train);

    double gamma = options.gamma;
    if (gamma <= 0.0) {
        const Vector mean = z.colwise().mean().transpose();
        const double total = (z.rowwise() - mean.transpose()).array().square().colwise().mean().sum();
        gamma = total > kVarianceFloor ? 1.0 / (static_cast<double>(z.cols()) * total) : 1.0;
    }
    model.gamma_ = gamma;
    model.nu_ = options.nu;

    const Index max_iter = std::max<Index>(options.max_iterations, 100 * z.rows());
    OcSvmDual dual;
    if (z.rows() <= kFullKernelLimit) {
        const Matrix k = kernels::rbf(z, z, std::sqrt(0.5 / gamma), 1.0);
        dual = smo(KernelRows(k), options.nu, options.tolerance, max_iter);
    } else {
        dual = smo(KernelRows(z, gamma), options.nu, options.tolerance, max_iter);
    }

    Index count = (dual.alpha.array() > 0.0).count();
    model.support_.resize(count, z.cols());
    model.alpha_.resize(count);
    Index s = 0;
    for (Index i = 0; i < z.rows(); ++i) {
        if (dual.alpha[i] > 0.0) {
            model.support_.row(s) = z.row(i);
            model.alpha_[s] = dual.alpha[i];
            ++s;
        }
    }
    model.rho_ = dual.rho;
    model.converged_ = dual.converged;
    model.iterations_ = dual.iterations;
    return model;
}

Vector OcSvmModel::decision_function(const Matrix& points) const {
    const Matrix z = standardizer_.apply(points);
    const Matrix k = kernels::rbf(z, support_, std::sqrt(0.5 / gamma_), 1.0);
    return (k * alpha_).array() - rho_;
}

Vector OcSvmModel::score(const Matrix& points) const { return -decision_function(points); }

void OcSvmModel::save(ModelBlob& blob) const {
    blob.put("mean", standardizer_.mean);
    blob.put("scale", standardizer_.scale);
    blob.put("support", support_);
    blob.put("alpha", alpha_);
    blob.put_scalar("rho", rho_);
    blob.put_scalar("gamma", gamma_);
    blob.put_scalar("nu", nu_);
    blob.put_scalar("converged", converged_ ? 1.0 : 0.0);
    blob.put_scalar("iterations", static_cast<double>(iterations_));
}

OcSvmModel OcSvmModel::load(const ModelBlob& blob) {
    OcSvmModel m;
    m.standardizer_ = {blob.vector("mean"), blob.vector("scale")};
    m.support_ = blob.matrix("support");
    m.alpha_ = blob.vector("alpha");
    m.rho_ = blob.scalar("rho");
    m.gamma_ = blob.scalar("gamma");
    m.nu_ = blob.scalar("nu");
    m.converged_ = blob.scalar("converged") != 0.0;
    m.iterations_ = static_cast<Index>(blob.scalar("iterations"));
    return m;
}

}  // namespace oodbench
