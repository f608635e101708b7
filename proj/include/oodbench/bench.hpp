#pragma once

#include "oodbench/core.hpp"
#include "oodbench/metrics.hpp"
#include "oodbench/synthesis.hpp"
#include "oodbench/toyspace.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oodbench {

/// One benchmark method: an unsupervised detector or an OOD synthesiser
/// feeding the supervised classifier. `params` holds numeric settings
/// (booleans as 0/1), `options` string-valued ones.
struct MethodSpec {
    std::string name;
    std::string label;
    std::map<std::string, double> params;
    std::map<std::string, std::string> options;

    double get(const std::string& key, double fallback) const;
    std::string get(const std::string& key, const std::string& fallback) const;

    bool is_synthesiser() const;
    /// Throws InvalidArgument for unknown names or keys.
    void validate() const;
};

std::vector<std::string> known_methods();

struct ToyConfig {
    ToySpec spec;
    SplitCounts counts;
};

struct SweepOptions {
    Index values = 101;
    Index samples = 1000;
};

struct BenchConfig {
    std::uint64_t master_seed = 20240501;
    std::vector<ToyConfig> toys;
    std::vector<MethodSpec> methods;
    Index resolution = 101;
    SweepOptions sweep;
    std::string colormap = "cet-l20";
    std::filesystem::path output_dir = "oodbench-out";
    bool png = true;
    /// Timing columns are measured only when set; otherwise they are written
    /// as 0 so that reruns produce identical bytes.
    bool profile = false;
    int profile_repeats = 3;
    /// Training / synthetic points drawn on PNG heatmaps.
    Index overlay_points = 200;

    void validate() const;
};

/// Parses the JSON configuration. Unknown keys are errors.
BenchConfig parse_config(const std::string& json_text);
BenchConfig load_config(const std::filesystem::path& path);
BenchConfig default_config();

/// A fitted method reduced to what the harness needs.
struct FittedMethod {
    std::function<Vector(const Matrix&)> confidence;
    std::size_t serialized_bytes = 0;
    std::optional<SynthesisedSet> synthetic;
    /// Free-form diagnostics (t-poking trace, solver flags).
    std::vector<std::string> notes;
};

/// Seeds used by run_benchmark: one data stream per toy, one stream per cell.
std::uint64_t data_seed(std::uint64_t master_seed, ToyKind toy);
std::uint64_t cell_seed(std::uint64_t master_seed, const std::string& label, ToyKind toy);
std::uint64_t sweep_seed(std::uint64_t master_seed, ToyKind toy);

FittedMethod fit_method(const MethodSpec& method, const ToySpec& spec, const LabeledSplits& data,
                        std::uint64_t seed);

/// Confidence over a lattice (line/circle) or the constant-feature sweep (haystack).
struct GridField {
    ToyKind kind = ToyKind::Line;
    // lattice
    Index resolution = 0;
    double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
    /// R x R; row i is y_i (ascending), column j is x_j (ascending).
    Matrix confidence;
    // sweep
    double constant_value = 0.0;
    Vector sweep_values;
    /// rows: sweep values; columns: q05, q25, q50, q75, q95
    Matrix quantiles;

    bool is_sweep() const noexcept { return kind == ToyKind::Haystack; }
};

using ConfidenceFn = std::function<Vector(const Matrix&)>;

GridField lattice_grid(const ConfidenceFn& confidence, double x_lo, double x_hi, double y_lo, double y_hi,
                       Index resolution);
GridField sweep_grid(const ConfidenceFn& confidence, const ToySpec& spec, const SweepOptions& sweep,
                     std::uint64_t seed);
GridField emit_grid(const ConfidenceFn& confidence, const ToySpec& spec, Index resolution,
                    const SweepOptions& sweep, std::uint64_t seed);

/// Linear-interpolation quantile (the common "type 7" definition).
double quantile(std::vector<double> values, double q);

void write_grid_csv(std::ostream& out, const GridField& grid);
GridField read_grid_csv(std::istream& in);

/// CSV (source of truth) and an aligned text table with one row per method
/// and the toys joined as "a / b / c".
std::string emit_table_csv(const std::vector<MetricsReport>& reports);
std::string emit_table_text(const std::vector<MetricsReport>& reports);

struct CellOutcome {
    std::string method;
    std::string toy;
    bool ok = false;
    std::string error;
    MetricsReport report;
};

struct RunSummary {
    std::vector<CellOutcome> cells;
    int exit_code = 0;  ///< 0 all cells ok, 2 some cell failed
};

/// Runs every method x toy cell and writes report.csv, report.txt,
/// grids/<method>__<toy>.csv, synthetic/<method>__<toy>.csv and optional
/// png/<method>__<toy>.png under config.output_dir. Files are written
/// atomically. A failing cell is logged to failures.csv and skipped.
RunSummary run_benchmark(const BenchConfig& config, int jobs = 1, std::ostream* log = nullptr);

/// Writes via a temporary file in the same directory followed by a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// ---------------------------------------------------------------------------
// Rendering

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

/// 256-entry lookup table for a named colormap ("cet-l20" or "gray").
const std::vector<Rgb>& colormap(const std::string& name);
Rgb colormap_lookup(const std::vector<Rgb>& lut, double value);

struct Image {
    Index width = 0;
    Index height = 0;
    std::vector<Rgb> pixels;  // row-major, top row first

    Rgb& at(Index x, Index y) { return pixels[static_cast<std::size_t>(y * width + x)]; }
    const Rgb& at(Index x, Index y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

std::vector<std::uint8_t> encode_png(const Image& image);

/// Lattice grids render one pixel per cell (y up); training points become
/// black markers and synthetic points white markers. Sweep grids render as
/// quantile bands with a white vertical line at the training constant.
Image render_grid(const GridField& grid, const std::vector<Rgb>& lut, const Matrix* training_overlay = nullptr,
                  const Matrix* synthetic_overlay = nullptr);

std::vector<std::uint8_t> render_png(const GridField& grid, const std::string& colormap_name,
                                     const Matrix* training_overlay = nullptr,
                                     const Matrix* synthetic_overlay = nullptr);

/// Reads the x0, x1 columns of a dataset or synthetic-set CSV.
Matrix read_points_csv(std::istream& in);

}  // namespace oodbench
