// oodbench: run the toy OOD benchmark, print tables, emit grids and plots.
#include "oodbench/bench.hpp"
#include "oodbench/detectors.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace oodbench;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_run(const std::string& config_path, const std::string& out, int jobs, std::optional<std::uint64_t> seed) {
    BenchConfig config = config_path.empty() ? default_config() : load_config(config_path);
    if (!out.empty()) config.output_dir = out;
    if (seed) config.master_seed = *seed;
    const RunSummary summary = run_benchmark(config, jobs, &std::cerr);
    std::cout << slurp(config.output_dir / "report.txt");
    return summary.exit_code;
}

int cmd_table(const std::string& dir, const std::string& format) {
    std::ifstream in(std::filesystem::path(dir) / "report.csv");
    if (!in) throw InvalidArgument("no report.csv in '" + dir + "'");
    const auto reports = read_report_csv(in);
    if (format == "csv") {
        std::cout << emit_table_csv(reports);
    } else if (reports.empty()) {
        std::cout << "no successful cells\n";
    } else {
        std::cout << emit_table_text(reports);
    }
    return 0;
}

int cmd_grid(const std::string& toy, const std::string& method_name, Index resolution, const std::string& out,
             std::uint64_t seed) {
    BenchConfig config = default_config();
    const ToyKind kind = parse_toy_kind(toy);
    const ToySpec spec = ToySpec::make_default(kind);
    MethodSpec method;
    bool found = false;
    for (const auto& m : config.methods) {
        if (m.label == method_name) {
            method = m;
            found = true;
        }
    }
    if (!found) {
        method.name = method_name;
        method.label = method_name;
    }
    method.validate();
    const auto data = generate_toy(spec, data_seed(seed, kind), {});
    const FittedMethod fitted = fit_method(method, spec, data, cell_seed(seed, method.label, kind));
    const GridField grid = emit_grid(fitted.confidence, spec, resolution, config.sweep,
                                     sweep_seed(seed, kind));
    std::ostringstream csv;
    write_grid_csv(csv, grid);
    write_file_atomic(out, csv.str());
    return 0;
}

int cmd_plot(const std::string& grid_path, const std::string& out, const std::string& cmap,
             const std::string& train_path, const std::string& synth_path) {
    std::ifstream in(grid_path);
    if (!in) throw InvalidArgument("cannot read '" + grid_path + "'");
    const GridField grid = read_grid_csv(in);
    std::optional<Matrix> train, synth;
    if (!train_path.empty()) {
        std::ifstream t(train_path);
        if (!t) throw InvalidArgument("cannot read '" + train_path + "'");
        train = read_points_csv(t);
    }
    if (!synth_path.empty()) {
        std::ifstream s(synth_path);
        if (!s) throw InvalidArgument("cannot read '" + synth_path + "'");
        synth = read_points_csv(s);
    }
    const auto png = render_png(grid, cmap, train ? &*train : nullptr, synth ? &*synth : nullptr);
    write_file_atomic(out, std::string(png.begin(), png.end()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy-problem benchmark for out-of-distribution detectors"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "Fit every method on every toy and write reports");
    run->add_option("--config", config_path, "JSON config (defaults to the built-in configuration)")
        ->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--jobs", jobs, "Parallel cells")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "Master seed override");

    std::string table_dir, format = "txt";
    auto* table = app.add_subcommand("table", "Print the report of a previous run");
    table->add_option("dir", table_dir, "Run output directory")->required();
    table->add_option("--format", format)->check(CLI::IsMember({"csv", "txt"}));

    std::string toy, method, grid_out;
    Index resolution = 101;
    std::uint64_t grid_seed = BenchConfig{}.master_seed;
    auto* grid = app.add_subcommand("grid", "Write the confidence grid of one method on one toy");
    grid->add_option("--toy", toy)->required()->check(CLI::IsMember({"line", "circle", "haystack"}));
    grid->add_option("--method", method, "Method name or default-config label")->required();
    grid->add_option("--resolution", resolution)->check(CLI::Range(Index{2}, Index{4096}));
    grid->add_option("--out", grid_out)->required();
    grid->add_option("--seed", grid_seed);

    std::string grid_in, png_out, cmap = "cet-l20", train_csv, synth_csv;
    auto* plot = app.add_subcommand("plot", "Render a grid CSV to PNG");
    plot->add_option("grid", grid_in)->required()->check(CLI::ExistingFile);
    plot->add_option("--out", png_out)->required();
    plot->add_option("--colormap", cmap)->check(CLI::IsMember({"cet-l20", "gray"}));
    plot->add_option("--train", train_csv, "CSV with x0,x1 columns drawn as black markers");
    plot->add_option("--synthetic", synth_csv, "CSV with x0,x1 columns drawn as white markers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir, jobs, seed);
        if (*table) return cmd_table(table_dir, format);
        if (*grid) return cmd_grid(toy, method, resolution, grid_out, grid_seed);
        if (*plot) return cmd_plot(grid_in, png_out, cmap, train_csv, synth_csv);
    } catch (const InvalidArgument& e) {
        std::cerr << "oodbench: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "oodbench: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
