#include "oodbench/bench.hpp"
#include "oodbench/detectors.hpp"

#include <gtest/gtest.h>
#include <png.h>

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace oodbench;
namespace fs = std::filesystem;

namespace {

struct Decoded {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    std::vector<Rgb> pixels;
};

// Decodes with libpng so the encoder is checked against an independent reader.
Decoded decode(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw std::runtime_error(image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        throw std::runtime_error(image.message);
    }
    Decoded d{image.width, image.height, {}};
    for (std::size_t i = 0; i + 2 < buffer.size(); i += 3) d.pixels.push_back({buffer[i], buffer[i + 1], buffer[i + 2]});
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("oodbench-test-" + name);
    fs::remove_all(p);
    return p;
}

GridField constant_lattice(double value, Index r) {
    return lattice_grid([value](const Matrix& x) { return Vector::Constant(x.rows(), value); }, 0, 1, 0, 1, r);
}

BenchConfig small_config(const fs::path& out) {
    return parse_config(R"({
        "master_seed": 7,
        "resolution": 12,
        "sweep": {"values": 11, "samples": 50},
        "output_dir": ")" + out.string() + R"(",
        "toys": [{"kind": "line", "n_train": 150, "n_valid": 150, "n_test": 300},
                 {"kind": "haystack", "n_train": 150, "n_valid": 150, "n_test": 300}],
        "methods": ["md", {"name": "lof", "label": "lof-5", "k": 5}]
    })");
}

}  // namespace

TEST(Quantile, TypeSeven) {
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({7}, 0.95), 7.0);
    EXPECT_DOUBLE_EQ(quantile({1, 2}, 1.0), 2.0);
}

TEST(Grid, LatticeIsRowMajorWithYOuter) {
    Matrix seen;
    const auto g = lattice_grid(
        [&](const Matrix& x) {
            seen = x;
            return Vector(x.col(0) + 10.0 * x.col(1));
        },
        0, 1, 0, 1, 3);
    ASSERT_EQ(seen.rows(), 9);
    EXPECT_EQ(seen(1, 0), 0.5);
    EXPECT_EQ(seen(1, 1), 0.0);
    EXPECT_EQ(seen(3, 0), 0.0);
    EXPECT_EQ(seen(3, 1), 0.5);
    EXPECT_EQ(g.confidence(2, 1), 0.5 + 10.0);
}

TEST(Grid, CsvRoundTrip) {
    const auto g = lattice_grid([](const Matrix& x) { return Vector(x.col(0).array().abs() / 3.0); }, -2, 3, -1, 1, 5);
    std::ostringstream out;
    write_grid_csv(out, g);
    EXPECT_EQ(out.str().substr(0, 15), "x,y,confidence\n");
    std::istringstream in(out.str());
    const auto back = read_grid_csv(in);
    EXPECT_EQ(back.resolution, 5);
    EXPECT_EQ(back.x_lo, -2.0);
    EXPECT_EQ(back.y_hi, 1.0);
    EXPECT_TRUE(back.confidence == g.confidence);
}

TEST(Grid, ReferenceSweepPeaksAtTheConstant) {
    const ToySpec spec = ToySpec::haystack_default();
    const auto data = generate_toy(spec, 1, {300, 300, 10});
    const ReferenceDetector ref(spec);
    const Calibrator cal(ref.score(data.valid.points));
    const auto g = sweep_grid([&](const Matrix& x) { return cal.confidence(ref.score(x)); }, spec, {101, 200}, 3);
    ASSERT_EQ(g.sweep_values.size(), 101);
    Index centre = 0;
    for (Index k = 0; k < 101; ++k) {
        if (std::abs(g.sweep_values[k] - spec.haystack.constant_value) < 1e-12) centre = k;
    }
    for (Index k = 0; k < 101; ++k) {
        if (std::abs(g.sweep_values[k] - spec.haystack.constant_value) > 0.5) {
            EXPECT_GT(g.quantiles(centre, 2), g.quantiles(k, 2));
        }
    }
    std::ostringstream out;
    write_grid_csv(out, g);
    EXPECT_EQ(out.str().substr(0, 35), "constant_value,q05,q25,q50,q75,q95\n");
    std::istringstream in(out.str());
    const auto back = read_grid_csv(in);
    EXPECT_TRUE(back.is_sweep());
    EXPECT_TRUE(back.quantiles == g.quantiles);
    EXPECT_NEAR(back.constant_value, spec.haystack.constant_value, 1e-12);
}

TEST(Grid, OcSvmHaystackSweepIsFlatterThanTheReference) {
    const ToySpec spec = ToySpec::haystack_default();
    const auto data = generate_toy(spec, 20240501, {1000, 1000, 10});
    const auto m = fit_ocsvm(data.train.points);
    const Calibrator cal(m.score(data.valid.points));
    const auto g = sweep_grid([&](const Matrix& x) { return cal.confidence(m.score(x)); }, spec, {101, 1000}, 3);
    const ReferenceDetector ref(spec);
    const Calibrator ref_cal(ref.score(data.valid.points));
    const auto r = sweep_grid([&](const Matrix& x) { return ref_cal.confidence(ref.score(x)); }, spec, {101, 1000}, 3);
    const Vector med = g.quantiles.col(2);
    const Vector ref_med = r.quantiles.col(2);
    // Standardizing leaves the constant feature at unit scale, so a shift of
    // two units is still visible to the kernel; the median is not flat.
    EXPECT_LT(med.maxCoeff() - med.minCoeff(), 0.5 * (ref_med.maxCoeff() - ref_med.minCoeff()));
    EXPECT_LT(med.maxCoeff(), 0.6);
    const Index mid = 50;
    EXPECT_GT(g.quantiles(mid, 4) - g.quantiles(mid, 0), 0.7);
}

TEST(Render, ConstantGridsUseTheEndsOfTheColormap) {
    const auto& lut = colormap("cet-l20");
    ASSERT_EQ(lut.size(), 256u);
    for (double v : {0.0, 1.0}) {
        const auto png = render_png(constant_lattice(v, 17), "cet-l20");
        const Decoded d = decode(png);
        EXPECT_EQ(d.width, 17u);
        EXPECT_EQ(d.height, 17u);
        const Rgb want = lut[v == 0.0 ? 0 : 255];
        for (const auto& p : d.pixels) ASSERT_EQ(p, want);
    }
}

TEST(Render, ColormapIsMonotoneInLightness) {
    const auto& lut = colormap("cet-l20");
    auto luma = [](const Rgb& c) { return 0.2126 * c.r + 0.7152 * c.g + 0.0722 * c.b; };
    for (std::size_t i = 1; i < lut.size(); ++i) EXPECT_GE(luma(lut[i]) + 1.0, luma(lut[i - 1]));
    EXPECT_THROW(colormap("jet"), InvalidArgument);
}

TEST(Render, OverlaysAndOrientation) {
    auto g = lattice_grid([](const Matrix& x) { return Vector(x.col(1)); }, 0, 1, 0, 1, 21);
    Matrix train(1, 2), synth(1, 2);
    train << 0.5, 0.5;
    synth << 0.0, 1.0;
    const Image img = render_grid(g, colormap("gray"), &train, &synth);
    EXPECT_EQ(img.at(10, 10), (Rgb{0, 0, 0}));
    EXPECT_EQ(img.at(0, 0), (Rgb{255, 255, 255}));
    // y increases upwards: the bottom row holds the lowest confidence.
    EXPECT_EQ(img.at(20, 20), (Rgb{0, 0, 0}));
    EXPECT_GT(img.at(20, 1).r, 200);
    const Decoded d = decode(encode_png(img));
    EXPECT_EQ(d.pixels[static_cast<std::size_t>(10 * 21 + 10)], (Rgb{0, 0, 0}));
}

TEST(Render, SweepChartHasAWhiteLineAtTheConstant) {
    GridField g;
    g.kind = ToyKind::Haystack;
    g.constant_value = 0.0;
    g.sweep_values = Vector::LinSpaced(11, -1, 1);
    g.quantiles = Matrix::Constant(11, 5, 0.3);
    const Image img = render_grid(g, colormap("cet-l20"));
    const auto x = static_cast<Index>(std::lround(0.5 * static_cast<double>(img.width - 1)));
    for (Index y = 0; y < img.height; ++y) ASSERT_EQ(img.at(x, y), (Rgb{255, 255, 255}));
    const Decoded d = decode(encode_png(img));
    EXPECT_EQ(static_cast<Index>(d.width), img.width);
}

TEST(Config, DefaultsAndStrictKeys) {
    EXPECT_NO_THROW(default_config().validate());
    EXPECT_THROW(parse_config(R"({"toys": ["line"], "methods": ["md"], "bogus": 1})"), InvalidArgument);
    EXPECT_THROW(parse_config(R"({"toys": ["line"], "methods": ["nope"]})"), InvalidArgument);
    EXPECT_THROW(parse_config(R"({"toys": ["line"], "methods": [{"name": "md", "k": 3}]})"), InvalidArgument);
    EXPECT_THROW(parse_config(R"({"toys": ["moon"], "methods": ["md"]})"), InvalidArgument);
    EXPECT_THROW(parse_config(R"({"toys": ["line"], "methods": ["md", "md"]})"), InvalidArgument);
    EXPECT_THROW(parse_config("{not json"), InvalidArgument);
    const auto c = parse_config(
        R"({"toys": [{"kind": "circle", "n_train": 50}], "methods": [{"name": "gp", "lengthscale_rule": "median",
            "subsample_fraction": 0.5}, {"name": "uniform", "weighted": true}]})");
    EXPECT_EQ(c.toys[0].counts.train, 50);
    EXPECT_EQ(c.methods[0].get("lengthscale_rule", std::string()), "median");
    EXPECT_EQ(c.methods[1].get("weighted", 0.0), 1.0);
    EXPECT_TRUE(c.methods[1].is_synthesiser());
}

TEST(Run, CellCountDeterminismAndLayout) {
    const fs::path a = scratch("run-a");
    const fs::path b = scratch("run-b");
    auto ca = small_config(a);
    auto cb = small_config(b);
    const auto ra = run_benchmark(ca, 2);
    const auto rb = run_benchmark(cb, 1);
    EXPECT_EQ(ra.exit_code, 0);
    EXPECT_EQ(ra.cells.size(), 4u);
    std::ifstream in(a / "report.csv");
    const auto reports = read_report_csv(in);
    EXPECT_EQ(reports.size(), 4u);
    std::size_t grids = 0;
    for (const auto& e : fs::directory_iterator(a / "grids")) {
        ++grids;
        EXPECT_EQ(slurp(e.path()), slurp(b / "grids" / e.path().filename()));
        std::ifstream gin(e.path());
        const auto g = read_grid_csv(gin);
        if (!g.is_sweep()) {
            EXPECT_GE(g.confidence.minCoeff(), 0.0);
            EXPECT_LE(g.confidence.maxCoeff(), 1.0);
        }
    }
    EXPECT_EQ(grids, 4u);
    EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
    EXPECT_TRUE(fs::exists(a / "png" / "lof-5__haystack.png"));
    EXPECT_TRUE(fs::exists(a / "report.txt"));
}

TEST(Run, FailingCellIsIsolated) {
    const fs::path ok = scratch("run-ok");
    const fs::path bad = scratch("run-bad");
    const auto base = small_config(ok);
    auto broken = small_config(bad);
    MethodSpec lof;
    lof.name = "lof";
    lof.label = "lof-huge";
    lof.params["k"] = 100000;
    broken.methods.push_back(lof);
    EXPECT_EQ(run_benchmark(base, 1).exit_code, 0);
    const auto r = run_benchmark(broken, 2);
    EXPECT_EQ(r.exit_code, 2);
    const std::string failures = slurp(bad / "failures.csv");
    EXPECT_NE(failures.find("lof-huge,line"), std::string::npos);
    EXPECT_EQ(slurp(ok / "report.csv"), slurp(bad / "report.csv"));
    EXPECT_EQ(slurp(ok / "grids" / "md__line.csv"), slurp(bad / "grids" / "md__line.csv"));
}

TEST(Run, UnwritableOutputDirectoryIsAnError) {
    const fs::path file = scratch("not-a-dir");
    std::ofstream(file) << "x";
    auto c = small_config(file / "sub");
    EXPECT_THROW(run_benchmark(c, 1), Error);
}

TEST(Run, SynthesiserCellsWriteTheirPoints) {
    const fs::path out = scratch("run-synth");
    auto c = parse_config(R"({"master_seed": 3, "resolution": 8, "sweep": {"values": 5, "samples": 20},
        "output_dir": ")" + out.string() + R"(",
        "toys": [{"kind": "line", "n_train": 120, "n_valid": 120, "n_test": 200}],
        "methods": [{"name": "fgsm-uniform", "weighted": true, "max_epochs": 20}]})");
    EXPECT_EQ(run_benchmark(c, 1).exit_code, 0);
    std::ifstream in(out / "synthetic" / "fgsm-uniform__line.csv");
    const Matrix pts = read_points_csv(in);
    EXPECT_EQ(pts.rows(), 120);
}
