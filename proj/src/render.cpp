#include "oodbench/bench.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace oodbench {

namespace {

struct Anchor {
    double t;
    double r, g, b;
};

// Dark grey through blue, green and orange to pale yellow. An approximation
// of the perceptually uniform CET-L20 map, interpolated linearly.
constexpr std::array<Anchor, 9> kL20{{
    {0.000, 48, 48, 48},
    {0.125, 42, 56, 120},
    {0.250, 24, 76, 180},
    {0.375, 20, 110, 190},
    {0.500, 40, 145, 140},
    {0.625, 110, 165, 70},
    {0.750, 185, 175, 40},
    {0.875, 235, 190, 55},
    {1.000, 250, 235, 100},
}};

std::vector<Rgb> build_l20() {
    std::vector<Rgb> lut(256);
    for (int i = 0; i < 256; ++i) {
        const double t = i / 255.0;
        std::size_t k = 0;
        while (k + 2 < kL20.size() && t > kL20[k + 1].t) ++k;
        const Anchor& a = kL20[k];
        const Anchor& b = kL20[k + 1];
        const double u = (t - a.t) / (b.t - a.t);
        auto mix = [u](double x, double y) { return static_cast<std::uint8_t>(std::lround(x + u * (y - x))); };
        lut[static_cast<std::size_t>(i)] = {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
    }
    return lut;
}

std::vector<Rgb> build_gray() {
    std::vector<Rgb> lut(256);
    for (int i = 0; i < 256; ++i) {
        const auto v = static_cast<std::uint8_t>(i);
        lut[static_cast<std::size_t>(i)] = {v, v, v};
    }
    return lut;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kWhite{255, 255, 255};

void draw_markers(Image& img, const GridField& g, const Matrix& pts, Rgb color) {
    require(pts.cols() >= 2, "render: overlay points need two columns");
    const double sx = static_cast<double>(img.width - 1) / (g.x_hi - g.x_lo);
    const double sy = static_cast<double>(img.height - 1) / (g.y_hi - g.y_lo);
    for (Index i = 0; i < pts.rows(); ++i) {
        const double fx = (pts(i, 0) - g.x_lo) * sx;
        const double fy = (pts(i, 1) - g.y_lo) * sy;
        if (!std::isfinite(fx) || !std::isfinite(fy)) continue;
        const auto cx = static_cast<Index>(std::lround(fx));
        const auto cy = img.height - 1 - static_cast<Index>(std::lround(fy));
        for (Index dy = -1; dy <= 1; ++dy) {
            for (Index dx = -1; dx <= 1; ++dx) {
                if (dx != 0 && dy != 0) continue;
                const Index x = cx + dx;
                const Index y = cy + dy;
                if (x >= 0 && x < img.width && y >= 0 && y < img.height) img.at(x, y) = color;
            }
        }
    }
}

Image render_lattice(const GridField& g, const std::vector<Rgb>& lut, const Matrix* train, const Matrix* synth) {
    Image img{g.resolution, g.resolution, {}};
    img.pixels.resize(static_cast<std::size_t>(g.resolution * g.resolution));
    for (Index i = 0; i < g.resolution; ++i) {
        for (Index j = 0; j < g.resolution; ++j) {
            img.at(j, g.resolution - 1 - i) = colormap_lookup(lut, g.confidence(i, j));
        }
    }
    if (train) draw_markers(img, g, *train, kBlack);
    if (synth) draw_markers(img, g, *synth, kWhite);
    return img;
}

Image render_sweep(const GridField& g, const std::vector<Rgb>& lut) {
    const Index n = g.sweep_values.size();
    require(n >= 2 && g.quantiles.rows() == n && g.quantiles.cols() == 5, "render: malformed sweep grid");
    Image img{std::max<Index>(4 * n, 256), 256, {}};
    img.pixels.assign(static_cast<std::size_t>(img.width * img.height), lut.front());
    const Rgb outer = lut[112];
    const Rgb inner = lut[192];
    const Rgb median = lut[255];
    const double lo = g.sweep_values[0];
    const double hi = g.sweep_values[n - 1];
    auto row_of = [&](double conf) {
        const double c = std::clamp(conf, 0.0, 1.0);
        return static_cast<Index>(std::lround((1.0 - c) * static_cast<double>(img.height - 1)));
    };
    for (Index x = 0; x < img.width; ++x) {
        const double pos = static_cast<double>(x) * static_cast<double>(n - 1) / static_cast<double>(img.width - 1);
        const auto k = std::min<Index>(static_cast<Index>(pos), n - 2);
        const double u = pos - static_cast<double>(k);
        auto q = [&](Index c) { return g.quantiles(k, c) + u * (g.quantiles(k + 1, c) - g.quantiles(k, c)); };
        for (Index y = row_of(q(4)); y <= row_of(q(0)); ++y) img.at(x, y) = outer;
        for (Index y = row_of(q(3)); y <= row_of(q(1)); ++y) img.at(x, y) = inner;
        const Index m = row_of(q(2));
        for (Index y = std::max<Index>(0, m - 1); y <= std::min<Index>(img.height - 1, m + 1); ++y) {
            img.at(x, y) = median;
        }
    }
    if (g.constant_value >= lo && g.constant_value <= hi) {
        const auto x = static_cast<Index>(
            std::lround((g.constant_value - lo) / (hi - lo) * static_cast<double>(img.width - 1)));
        for (Index y = 0; y < img.height; ++y) img.at(x, y) = kWhite;
    }
    return img;
}

}  // namespace

const std::vector<Rgb>& colormap(const std::string& name) {
    static const std::vector<Rgb> l20 = build_l20();
    static const std::vector<Rgb> gray = build_gray();
    if (name == "cet-l20") return l20;
    if (name == "gray") return gray;
    throw InvalidArgument("unknown colormap '" + name + "'");
}

Rgb colormap_lookup(const std::vector<Rgb>& lut, double value) {
    require(lut.size() == 256, "colormap: lookup table must have 256 entries");
    const double v = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
    return lut[static_cast<std::size_t>(std::lround(v * 255.0))];
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    require(image.width > 0 && image.height > 0, "png: empty image");
    require(image.pixels.size() == static_cast<std::size_t>(image.width * image.height), "png: pixel count mismatch");
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(image.height * (1 + 3 * image.width)));
    for (Index y = 0; y < image.height; ++y) {
        raw.push_back(0);
        for (Index x = 0; x < image.width; ++x) {
            const Rgb& p = image.at(x, y);
            raw.insert(raw.end(), {p.r, p.g, p.b});
        }
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> idat(len);
    if (compress2(idat.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw Error("png: compression failed");
    }
    idat.resize(len);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", idat);
    put_chunk(out, "IEND", {});
    return out;
}

Image render_grid(const GridField& grid, const std::vector<Rgb>& lut, const Matrix* training_overlay,
                  const Matrix* synthetic_overlay) {
    if (grid.is_sweep()) return render_sweep(grid, lut);
    require(grid.resolution >= 2 && grid.confidence.rows() == grid.resolution &&
                grid.confidence.cols() == grid.resolution,
            "render: malformed lattice grid");
    return render_lattice(grid, lut, training_overlay, synthetic_overlay);
}

std::vector<std::uint8_t> render_png(const GridField& grid, const std::string& colormap_name,
                                     const Matrix* training_overlay, const Matrix* synthetic_overlay) {
    return encode_png(render_grid(grid, colormap(colormap_name), training_overlay, synthetic_overlay));
}

}  // namespace oodbench
