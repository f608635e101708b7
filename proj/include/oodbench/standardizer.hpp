#pragma once

#include "oodbench/core.hpp"

namespace oodbench {

/// Per-feature affine map learned on training data.
///
/// Features whose standard deviation falls below the floor keep a unit scale,
/// so they are centred but never divided.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer fit(const Matrix& train);
    static Standardizer identity(Index dims);

    Matrix apply(const Matrix& points) const;
    Matrix invert(const Matrix& standardized) const;

    Index dims() const noexcept { return mean.size(); }
};

}  // namespace oodbench
