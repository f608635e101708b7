#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oodbench {

/// Points are stored one per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using BoolVector = Eigen::Matrix<bool, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad shapes, counts, parameters).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical routine could not produce a usable result.
class NumericalError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw InvalidArgument(message);
    }
}

/// Zero-variance floor shared by every standardizer and density estimate.
inline constexpr double kVarianceFloor = 1e-12;

}  // namespace oodbench
