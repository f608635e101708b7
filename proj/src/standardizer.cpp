#include "oodbench/standardizer.hpp"

#include <cmath>

namespace oodbench {

Standardizer Standardizer::fit(const Matrix& train) {
    require(train.rows() >= 1, "standardizer needs at least one row");
    Standardizer s;
    s.mean = train.colwise().mean().transpose();
    s.scale.resize(train.cols());
    for (Index j = 0; j < train.cols(); ++j) {
        const double var = (train.col(j).array() - s.mean[j]).square().mean();
        const double sd = std::sqrt(var);
        s.scale[j] = sd > kVarianceFloor ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(Index dims) {
    return Standardizer{Vector::Zero(dims), Vector::Ones(dims)};
}

Matrix Standardizer::apply(const Matrix& points) const {
    require(points.cols() == dims(), "standardizer: dimension mismatch");
    return (points.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix Standardizer::invert(const Matrix& standardized) const {
    require(standardized.cols() == dims(), "standardizer: dimension mismatch");
    return (standardized.array().rowwise() * scale.transpose().array()).rowwise() + mean.transpose().array();
}

}  // namespace oodbench
