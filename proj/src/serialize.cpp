#include "oodbench/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace oodbench {

namespace {

constexpr char kMagic[4] = {'O', 'O', 'D', 'M'};

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

template <typename T>
void append(std::vector<std::uint8_t>& out, T value) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), raw, raw + sizeof(T));
}

void append_string(std::vector<std::uint8_t>& out, const std::string& text) {
    append(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string read_string() {
        const auto size = read<std::uint32_t>();
        need(size);
        std::string text(reinterpret_cast<const char*>(bytes_.data() + pos_), size);
        pos_ += size;
        return text;
    }

    void read_doubles(double* dst, std::size_t count) {
        need(count * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t count) const {
        if (bytes_.size() - pos_ < count) {
            throw InvalidArgument("model blob is truncated");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void ModelBlob::put(std::string name, Matrix value) { arrays.emplace_back(std::move(name), std::move(value)); }

void ModelBlob::put(std::string name, const Vector& value) {
    arrays.emplace_back(std::move(name), Matrix(value.transpose()));
}

void ModelBlob::put_scalar(std::string name, double value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    arrays.emplace_back(std::move(name), std::move(m));
}

bool ModelBlob::contains(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const auto& entry) { return entry.first == name; });
}

const Matrix& ModelBlob::matrix(const std::string& name) const {
    for (const auto& [key, value] : arrays) {
        if (key == name) {
            return value;
        }
    }
    throw InvalidArgument("model blob has no array '" + name + "'");
}

Vector ModelBlob::vector(const std::string& name) const {
    const Matrix& m = matrix(name);
    return Eigen::Map<const Vector>(m.data(), m.size());
}

double ModelBlob::scalar(const std::string& name) const {
    const Matrix& m = matrix(name);
    require(m.size() == 1, "model blob array '" + name + "' is not a scalar");
    return m(0, 0);
}

std::vector<std::uint8_t> ModelBlob::encode() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    append(out, kVersion);
    append_string(out, kind);
    append(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, value] : arrays) {
        append_string(out, name);
        append(out, static_cast<std::uint64_t>(value.rows()));
        append(out, static_cast<std::uint64_t>(value.cols()));
        const auto* raw = reinterpret_cast<const std::uint8_t*>(value.data());
        out.insert(out.end(), raw, raw + value.size() * static_cast<Index>(sizeof(double)));
    }
    return out;
}

ModelBlob ModelBlob::decode(std::span<const std::uint8_t> bytes) {
    require(bytes.size() >= 4 && std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()),
            "model blob: bad magic");
    Cursor cursor(bytes.subspan(4));
    const auto version = cursor.read<std::uint32_t>();
    require(version == kVersion, "model blob: unsupported version " + std::to_string(version));
    ModelBlob blob;
    blob.kind = cursor.read_string();
    const auto count = cursor.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = cursor.read_string();
        const auto rows = cursor.read<std::uint64_t>();
        const auto cols = cursor.read<std::uint64_t>();
        require(rows < (1ULL << 32) && cols < (1ULL << 32), "model blob: implausible array shape");
        Matrix value(static_cast<Index>(rows), static_cast<Index>(cols));
        cursor.read_doubles(value.data(), static_cast<std::size_t>(value.size()));
        blob.arrays.emplace_back(std::move(name), std::move(value));
    }
    require(cursor.done(), "model blob: trailing bytes");
    return blob;
}

}  // namespace oodbench
