#pragma once

#include "oodbench/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oodbench {

/// Versioned model container: magic "OODM", format version, kind tag, then
/// named row-major double arrays. All integers are little-endian.
struct ModelBlob {
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;
    std::vector<std::pair<std::string, Matrix>> arrays;

    void put(std::string name, Matrix value);
    void put(std::string name, const Vector& value);
    void put_scalar(std::string name, double value);

    const Matrix& matrix(const std::string& name) const;
    Vector vector(const std::string& name) const;
    double scalar(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<std::uint8_t> encode() const;
    static ModelBlob decode(std::span<const std::uint8_t> bytes);
};

}  // namespace oodbench
