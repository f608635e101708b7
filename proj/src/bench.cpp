#include "oodbench/bench.hpp"

#include "oodbench/detectors.hpp"
#include "oodbench/weighting.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace oodbench {

using json = nlohmann::json;

namespace {

const std::set<std::string> kDetectors{"reference", "md", "lof", "ocsvm", "gp", "ncgp", "pca", "aa", "mdaa", "aagp"};
const std::set<std::string> kSynthesisers{"uniform", "fgsm-const", "fgsm-uniform", "fgsm-tpoke"};

std::set<std::string> allowed_keys(const std::string& name) {
    std::set<std::string> keys;
    const std::set<std::string> gp{"subsample_fraction", "noise_variance", "lengthscale", "lengthscale_rule"};
    const std::set<std::string> mlp{"max_epochs", "learning_rate", "batch_size", "patience"};
    const std::set<std::string> synth{"n_ood",  "kde_bandwidth", "weighted", "weight_space",
                                      "weight_bandwidth", "max_epochs", "hidden"};
    if (name == "lof") keys = {"k"};
    if (name == "ocsvm") keys = {"nu", "gamma", "tolerance"};
    if (name == "gp") keys = gp;
    if (name == "ncgp") {
        keys = gp;
        keys.insert({"noise_scale", "pseudo_noise_variance"});
    }
    if (name == "pca") keys = {"variance_threshold"};
    if (name == "aa" || name == "mdaa") keys = mlp;
    if (name == "aagp") keys = {"subsample_fraction", "noise_variance", "lengthscale"};
    if (kSynthesisers.count(name) != 0) keys = synth;
    if (name == "fgsm-const") keys.insert("epsilon");
    if (name == "fgsm-uniform") keys.insert({"lo", "hi"});
    if (name == "fgsm-tpoke") {
        keys.insert({"t0", "backoff_factor", "poke_factor", "anneal_rate", "criterion_threshold", "max_cycles"});
    }
    return keys;
}

LengthscaleRule parse_rule(const std::string& s) {
    if (s == "ml" || s == "marginal_likelihood") return LengthscaleRule::MarginalLikelihood;
    if (s == "median") return LengthscaleRule::Median;
    throw InvalidArgument("unknown lengthscale_rule '" + s + "'");
}

PdfSpace parse_space(const std::string& s) {
    if (s == "error") return PdfSpace::ReferenceErrorSpace;
    if (s == "input") return PdfSpace::InputSpace;
    throw InvalidArgument("unknown weight_space '" + s + "'");
}

Index as_index(double v, const std::string& what) {
    require(v >= 0.0 && std::floor(v) == v, what + " must be a non-negative integer");
    return static_cast<Index>(v);
}

std::string file_stem(const std::string& method, ToyKind toy) {
    std::string s = method + "__" + std::string(to_string(toy));
    for (char& c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Method specs

double MethodSpec::get(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

std::string MethodSpec::get(const std::string& key, const std::string& fallback) const {
    const auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
}

bool MethodSpec::is_synthesiser() const { return kSynthesisers.count(name) != 0; }

void MethodSpec::validate() const {
    if (kDetectors.count(name) == 0 && kSynthesisers.count(name) == 0) {
        throw InvalidArgument("unknown method '" + name + "'");
    }
    const auto keys = allowed_keys(name);
    for (const auto& [k, v] : params) {
        if (keys.count(k) == 0) throw InvalidArgument("method '" + name + "': unknown key '" + k + "'");
        if (!std::isfinite(v)) throw InvalidArgument("method '" + name + "': '" + k + "' must be finite");
    }
    for (const auto& [k, v] : options) {
        if (keys.count(k) == 0) throw InvalidArgument("method '" + name + "': unknown key '" + k + "'");
    }
    if (options.count("lengthscale_rule")) parse_rule(options.at("lengthscale_rule"));
    if (options.count("weight_space")) parse_space(options.at("weight_space"));
}

std::vector<std::string> known_methods() {
    std::vector<std::string> out(kDetectors.begin(), kDetectors.end());
    out.insert(out.end(), kSynthesisers.begin(), kSynthesisers.end());
    return out;
}

// ---------------------------------------------------------------------------
// Config

void BenchConfig::validate() const {
    require(!toys.empty(), "config: at least one toy is required");
    require(!methods.empty(), "config: at least one method is required");
    require(resolution >= 2, "config: resolution must be at least 2");
    require(sweep.values >= 2 && sweep.samples >= 1, "config: sweep needs >= 2 values and >= 1 sample");
    require(profile_repeats >= 1, "config: profile_repeats must be positive");
    require(overlay_points >= 0, "config: overlay_points must be non-negative");
    oodbench::colormap(colormap);
    std::set<std::string> labels;
    for (const auto& m : methods) {
        m.validate();
        require(labels.insert(m.label).second, "config: duplicate method label '" + m.label + "'");
    }
    std::set<ToyKind> kinds;
    for (const auto& t : toys) {
        t.spec.validate();
        require(t.counts.train >= 1 && t.counts.valid >= 1 && t.counts.test >= 2, "config: invalid split counts");
        require(kinds.insert(t.spec.kind).second, "config: duplicate toy");
    }
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    require(obj.is_object(), where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
        if (allowed.count(k) == 0) {
            throw InvalidArgument(where + ": unknown key '" + k + "'");
        }
    }
}

template <typename T>
T read(const json& obj, const std::string& key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw InvalidArgument(where + ": bad value for '" + key + "'");
    }
}

MethodSpec parse_method(const json& j) {
    MethodSpec m;
    if (j.is_string()) {
        m.name = j.get<std::string>();
        m.label = m.name;
        m.validate();
        return m;
    }
    require(j.is_object() && j.contains("name") && j["name"].is_string(), "method entries need a 'name'");
    m.name = j["name"].get<std::string>();
    m.label = read<std::string>(j, "label", m.name, "method '" + m.name + "'");
    for (const auto& [k, v] : j.items()) {
        if (k == "name" || k == "label") continue;
        if (v.is_boolean()) {
            m.params[k] = v.get<bool>() ? 1.0 : 0.0;
        } else if (v.is_number()) {
            m.params[k] = v.get<double>();
        } else if (v.is_string()) {
            m.options[k] = v.get<std::string>();
        } else {
            throw InvalidArgument("method '" + m.name + "': bad value for '" + k + "'");
        }
    }
    m.validate();
    return m;
}

ToyConfig parse_toy(const json& j) {
    if (j.is_string()) {
        return {ToySpec::make_default(parse_toy_kind(j.get<std::string>())), {}};
    }
    check_keys(j, {"kind", "n_train", "n_valid", "n_test", "noise_sigma"}, "toy");
    require(j.contains("kind"), "toy entries need a 'kind'");
    ToyConfig t{ToySpec::make_default(parse_toy_kind(read<std::string>(j, "kind", "", "toy"))), {}};
    t.counts.train = read<Index>(j, "n_train", t.counts.train, "toy");
    t.counts.valid = read<Index>(j, "n_valid", t.counts.valid, "toy");
    t.counts.test = read<Index>(j, "n_test", t.counts.test, "toy");
    t.spec.noise_sigma = read<double>(j, "noise_sigma", t.spec.noise_sigma, "toy");
    return t;
}

}  // namespace

BenchConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    check_keys(j,
               {"master_seed", "toys", "methods", "resolution", "sweep", "colormap", "output_dir", "png", "profile",
                "profile_repeats", "overlay_points"},
               "config");
    BenchConfig c;
    c.master_seed = read<std::uint64_t>(j, "master_seed", c.master_seed, "config");
    c.resolution = read<Index>(j, "resolution", c.resolution, "config");
    c.colormap = read<std::string>(j, "colormap", c.colormap, "config");
    c.output_dir = read<std::string>(j, "output_dir", c.output_dir.string(), "config");
    c.png = read<bool>(j, "png", c.png, "config");
    c.profile = read<bool>(j, "profile", c.profile, "config");
    c.profile_repeats = read<int>(j, "profile_repeats", c.profile_repeats, "config");
    c.overlay_points = read<Index>(j, "overlay_points", c.overlay_points, "config");
    if (j.contains("sweep")) {
        const json& s = j["sweep"];
        check_keys(s, {"values", "samples"}, "sweep");
        c.sweep.values = read<Index>(s, "values", c.sweep.values, "sweep");
        c.sweep.samples = read<Index>(s, "samples", c.sweep.samples, "sweep");
    }
    require(j.contains("toys") && j["toys"].is_array(), "config: 'toys' must be an array");
    for (const auto& t : j["toys"]) c.toys.push_back(parse_toy(t));
    require(j.contains("methods") && j["methods"].is_array(), "config: 'methods' must be an array");
    for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m));
    c.validate();
    return c;
}

BenchConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgument("cannot read config '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

BenchConfig default_config() {
    BenchConfig c;
    for (auto kind : {ToyKind::Line, ToyKind::Circle, ToyKind::Haystack}) {
        c.toys.push_back({ToySpec::make_default(kind), {}});
    }
    auto add = [&](std::string name, std::string label, std::map<std::string, double> p = {}) {
        MethodSpec m;
        m.name = std::move(name);
        m.label = std::move(label);
        m.params = std::move(p);
        c.methods.push_back(std::move(m));
    };
    add("reference", "reference");
    add("ocsvm", "ocsvm");
    add("md", "md");
    add("lof", "lof");
    add("gp", "gp@10%", {{"subsample_fraction", 0.1}});
    add("ncgp", "ncgp@10%", {{"subsample_fraction", 0.1}});
    add("pca", "pca-trunc");
    add("aa", "aa");
    add("mdaa", "md(aa)");
    add("aagp", "aa-gp@1%", {{"subsample_fraction", 0.01}});
    add("uniform", "uniform");
    add("fgsm-const", "fgsm(1.0)", {{"epsilon", 1.0}});
    add("fgsm-uniform", "fgsm(u(0,1))");
    add("fgsm-tpoke", "fgsm(t-poke)");
    add("uniform", "w(uniform)", {{"weighted", 1.0}});
    add("fgsm-uniform", "w(fgsm(u(0,1)))", {{"weighted", 1.0}});
    return c;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

FittedMethod wrap_detector(std::shared_ptr<const Detector> det, const LabeledSplits& data) {
    auto cal = std::make_shared<const Calibrator>(det->score(data.valid.points));
    FittedMethod out;
    out.serialized_bytes = serialize(*det).size();
    out.confidence = [det, cal](const Matrix& x) { return cal->confidence(det->score(x)); };
    return out;
}

std::shared_ptr<const Detector> fit_detector(const MethodSpec& m, const ToySpec& spec, const LabeledSplits& data,
                                             std::uint64_t seed, std::vector<std::string>& notes) {
    const Matrix& x = data.train.points;
    if (m.name == "reference") return std::make_shared<ReferenceDetector>(spec);
    if (m.name == "md") return std::make_shared<MahalanobisModel>(fit_mahalanobis(x));
    if (m.name == "lof") return std::make_shared<LofModel>(fit_lof(x, as_index(m.get("k", 20.0), "k")));
    if (m.name == "ocsvm") {
        OcSvmOptions o;
        o.nu = m.get("nu", o.nu);
        o.gamma = m.get("gamma", o.gamma);
        o.tolerance = m.get("tolerance", o.tolerance);
        auto model = std::make_shared<OcSvmModel>(fit_ocsvm(x, o));
        if (!model->converged()) notes.push_back("ocsvm: solver stopped before reaching the KKT tolerance");
        return model;
    }
    if (m.name == "gp" || m.name == "aagp") {
        GpOptions o;
        o.subsample_fraction = m.get("subsample_fraction", m.name == "aagp" ? 0.01 : 0.1);
        o.noise_variance = m.get("noise_variance", o.noise_variance);
        o.lengthscale = m.get("lengthscale", 0.0);
        o.rule = parse_rule(m.get("lengthscale_rule", std::string("ml")));
        if (m.name == "aagp") return std::make_shared<AaGpModel>(fit_aa_gp(x, o, seed));
        return std::make_shared<GpModel>(fit_gp(data.train, o, seed));
    }
    if (m.name == "ncgp") {
        NcGpOptions o;
        o.subsample_fraction = m.get("subsample_fraction", o.subsample_fraction);
        o.noise_variance = m.get("noise_variance", o.noise_variance);
        o.lengthscale = m.get("lengthscale", 0.0);
        o.rule = parse_rule(m.get("lengthscale_rule", std::string("ml")));
        o.noise_scale = m.get("noise_scale", o.noise_scale);
        o.pseudo_noise_variance = m.get("pseudo_noise_variance", o.pseudo_noise_variance);
        return std::make_shared<GpModel>(fit_ncgp(data.train, o, seed));
    }
    if (m.name == "pca") return std::make_shared<PcaTruncModel>(fit_pca_trunc(x, m.get("variance_threshold", 0.95)));
    if (m.name == "aa" || m.name == "mdaa") {
        AutoAssocOptions o;
        o.train.max_epochs = as_index(m.get("max_epochs", static_cast<double>(o.train.max_epochs)), "max_epochs");
        o.train.learning_rate = m.get("learning_rate", o.train.learning_rate);
        o.train.batch_size = as_index(m.get("batch_size", static_cast<double>(o.train.batch_size)), "batch_size");
        o.train.patience = as_index(m.get("patience", static_cast<double>(o.train.patience)), "patience");
        auto aa = std::make_shared<const AutoAssocModel>(fit_autoassoc(x, o, seed));
        if (m.name == "aa") return aa;
        return std::make_shared<MdAaModel>(fit_md_aa(x, aa));
    }
    throw InvalidArgument("unknown detector '" + m.name + "'");
}

FittedMethod fit_synthesiser(const MethodSpec& m, const ToySpec& spec, const LabeledSplits& data,
                             std::uint64_t seed) {
    const Matrix& x = data.train.points;
    SupervisedOptions sup;
    sup.hidden = as_index(m.get("hidden", static_cast<double>(sup.hidden)), "hidden");
    sup.train.max_epochs = as_index(m.get("max_epochs", static_cast<double>(sup.train.max_epochs)), "max_epochs");

    FittedMethod out;
    SynthesisedSet set;
    SupervisedDetector det;
    const std::uint64_t classifier_seed = derive_seed(seed, {"classifier"});
    if (m.name == "fgsm-tpoke") {
        TPokeState st;
        st.t = m.get("t0", st.t);
        st.backoff_factor = m.get("backoff_factor", st.backoff_factor);
        st.poke_factor = m.get("poke_factor", st.poke_factor);
        st.anneal_rate = m.get("anneal_rate", st.anneal_rate);
        st.criterion_threshold = m.get("criterion_threshold", st.criterion_threshold);
        const Index cycles = as_index(m.get("max_cycles", 30.0), "max_cycles");
        TPokeOutcome res = tpoke(x, data.valid.points, spec, st, cycles, seed, sup);
        std::ostringstream note;
        note << "t-poke: cycles=" << res.search.history.size() << " t=" << res.t
             << " valid_confidence=" << res.mean_valid_confidence << " converged=" << (res.converged ? 1 : 0);
        out.notes.push_back(note.str());
        set = std::move(res.ood);
        det = std::move(res.detector);
        if (m.get("weighted", 0.0) != 0.0) {
            WeightingOptions w;
            w.space = parse_space(m.get("weight_space", std::string("error")));
            w.bandwidth = m.get("weight_bandwidth", 0.0);
            set = weight_synthesised_set(x, std::move(set), spec, w);
            det = train_supervised(x, set, classifier_seed, sup);
        }
    } else {
        SynthesisConfig cfg;
        cfg.seed = derive_seed(seed, {"synthesis"});
        cfg.n_ood = as_index(m.get("n_ood", 0.0), "n_ood");
        cfg.kde_bandwidth = m.get("kde_bandwidth", 0.0);
        if (m.name == "uniform") cfg.method = SynthesisMethod::UniformBox;
        if (m.name == "fgsm-const") {
            cfg.method = SynthesisMethod::FgsmConstant;
            cfg.epsilon = m.get("epsilon", 1.0);
        }
        if (m.name == "fgsm-uniform") {
            cfg.method = SynthesisMethod::FgsmUniform;
            cfg.lo = m.get("lo", 0.0);
            cfg.hi = m.get("hi", 1.0);
        }
        set = synthesise(x, spec, cfg);
        if (m.get("weighted", 0.0) != 0.0) {
            WeightingOptions w;
            w.space = parse_space(m.get("weight_space", std::string("error")));
            w.bandwidth = m.get("weight_bandwidth", 0.0);
            set = weight_synthesised_set(x, std::move(set), spec, w);
        }
        det = train_supervised(x, set, classifier_seed, sup);
    }
    ModelBlob blob;
    blob.kind = "supervised";
    det.save(blob);
    out.serialized_bytes = blob.encode().size();
    auto shared = std::make_shared<const SupervisedDetector>(std::move(det));
    out.confidence = [shared](const Matrix& p) { return shared->confidence(p); };
    out.synthetic = std::move(set);
    return out;
}

}  // namespace

std::uint64_t data_seed(std::uint64_t master_seed, ToyKind toy) {
    return derive_seed(master_seed, {"data", to_string(toy)});
}

std::uint64_t cell_seed(std::uint64_t master_seed, const std::string& label, ToyKind toy) {
    return derive_seed(master_seed, {"cell", label, to_string(toy)});
}

std::uint64_t sweep_seed(std::uint64_t master_seed, ToyKind toy) {
    return derive_seed(master_seed, {"sweep", to_string(toy)});
}

FittedMethod fit_method(const MethodSpec& method, const ToySpec& spec, const LabeledSplits& data,
                        std::uint64_t seed) {
    method.validate();
    if (method.is_synthesiser()) {
        return fit_synthesiser(method, spec, data, seed);
    }
    std::vector<std::string> notes;
    auto det = fit_detector(method, spec, data, seed, notes);
    FittedMethod out = wrap_detector(std::move(det), data);
    out.notes = std::move(notes);
    return out;
}

// ---------------------------------------------------------------------------
// Grids

double quantile(std::vector<double> values, double q) {
    require(!values.empty(), "quantile: empty input");
    require(q >= 0.0 && q <= 1.0, "quantile: q must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {
constexpr std::array<double, 5> kQuantiles{0.05, 0.25, 0.5, 0.75, 0.95};

double lerp_axis(double lo, double hi, Index k, Index n) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
}
}  // namespace

GridField lattice_grid(const ConfidenceFn& confidence, double x_lo, double x_hi, double y_lo, double y_hi,
                       Index resolution) {
    require(resolution >= 2, "grid: resolution must be at least 2");
    require(x_lo < x_hi && y_lo < y_hi, "grid: axis ranges must be increasing");
    Matrix lattice(resolution * resolution, 2);
    for (Index i = 0; i < resolution; ++i) {
        for (Index j = 0; j < resolution; ++j) {
            lattice(i * resolution + j, 0) = lerp_axis(x_lo, x_hi, j, resolution);
            lattice(i * resolution + j, 1) = lerp_axis(y_lo, y_hi, i, resolution);
        }
    }
    const Vector conf = confidence(lattice);
    require(conf.size() == lattice.rows(), "grid: confidence size mismatch");
    GridField g;
    g.resolution = resolution;
    g.x_lo = x_lo;
    g.x_hi = x_hi;
    g.y_lo = y_lo;
    g.y_hi = y_hi;
    g.confidence = Eigen::Map<const Matrix>(conf.data(), resolution, resolution);
    return g;
}

GridField sweep_grid(const ConfidenceFn& confidence, const ToySpec& spec, const SweepOptions& sweep,
                     std::uint64_t seed) {
    require(spec.kind == ToyKind::Haystack, "sweep: only the haystack toy has a constant feature");
    require(sweep.values >= 2 && sweep.samples >= 1, "sweep: bad sizes");
    const auto& h = spec.haystack;
    GridField g;
    g.kind = ToyKind::Haystack;
    g.constant_value = h.constant_value;
    g.sweep_values.resize(sweep.values);
    g.quantiles.resize(sweep.values, static_cast<Index>(kQuantiles.size()));
    for (Index k = 0; k < sweep.values; ++k) {
        const double v = lerp_axis(h.constant_value - h.sweep_half_width, h.constant_value + h.sweep_half_width, k,
                                   sweep.values);
        g.sweep_values[k] = v;
        Rng rng(derive_seed(seed, "sweep", static_cast<std::uint64_t>(k)));
        Matrix pts = sample_id(spec, rng, sweep.samples).points;
        pts.col(h.constant_index).setConstant(v);
        const Vector conf = confidence(pts);
        const std::vector<double> values(conf.data(), conf.data() + conf.size());
        for (std::size_t q = 0; q < kQuantiles.size(); ++q) {
            g.quantiles(k, static_cast<Index>(q)) = quantile(values, kQuantiles[q]);
        }
    }
    return g;
}

GridField emit_grid(const ConfidenceFn& confidence, const ToySpec& spec, Index resolution,
                    const SweepOptions& sweep, std::uint64_t seed) {
    switch (spec.kind) {
        case ToyKind::Line: {
            const auto& l = spec.line;
            GridField g = lattice_grid(confidence, l.anchor.x() - l.window, l.anchor.x() + l.window,
                                       l.anchor.y() - l.window, l.anchor.y() + l.window, resolution);
            g.kind = ToyKind::Line;
            return g;
        }
        case ToyKind::Circle: {
            const auto& c = spec.circle;
            GridField g = lattice_grid(confidence, c.center.x() - c.window, c.center.x() + c.window,
                                       c.center.y() - c.window, c.center.y() + c.window, resolution);
            g.kind = ToyKind::Circle;
            return g;
        }
        case ToyKind::Haystack: return sweep_grid(confidence, spec, sweep, seed);
    }
    throw InvalidArgument("grid: unknown toy");
}

void write_grid_csv(std::ostream& out, const GridField& g) {
    const auto old = out.precision(17);
    if (g.is_sweep()) {
        out << "constant_value,q05,q25,q50,q75,q95\n";
        for (Index k = 0; k < g.sweep_values.size(); ++k) {
            out << g.sweep_values[k];
            for (Index q = 0; q < g.quantiles.cols(); ++q) out << ',' << g.quantiles(k, q);
            out << '\n';
        }
    } else {
        out << "x,y,confidence\n";
        for (Index i = 0; i < g.resolution; ++i) {
            for (Index j = 0; j < g.resolution; ++j) {
                out << lerp_axis(g.x_lo, g.x_hi, j, g.resolution) << ',' << lerp_axis(g.y_lo, g.y_hi, i, g.resolution)
                    << ',' << g.confidence(i, j) << '\n';
            }
        }
    }
    out.precision(old);
}

namespace {

std::vector<double> parse_row(const std::string& line, std::size_t expected) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
        try {
            out.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw InvalidArgument("csv: bad number '" + field + "'");
        }
    }
    if (expected != 0 && out.size() != expected) {
        throw InvalidArgument("csv: expected " + std::to_string(expected) + " columns in '" + line + "'");
    }
    return out;
}

}  // namespace

GridField read_grid_csv(std::istream& in) {
    std::string header;
    require(static_cast<bool>(std::getline(in, header)), "grid csv: empty input");
    std::vector<std::vector<double>> rows;
    std::string line;
    const bool sweep = header == "constant_value,q05,q25,q50,q75,q95";
    require(sweep || header == "x,y,confidence", "grid csv: unrecognised header '" + header + "'");
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_row(line, sweep ? 6 : 3));
    }
    GridField g;
    if (sweep) {
        require(rows.size() >= 2, "grid csv: sweep needs at least two rows");
        g.kind = ToyKind::Haystack;
        g.sweep_values.resize(static_cast<Index>(rows.size()));
        g.quantiles.resize(static_cast<Index>(rows.size()), 5);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            g.sweep_values[static_cast<Index>(k)] = rows[k][0];
            for (Index q = 0; q < 5; ++q) g.quantiles(static_cast<Index>(k), q) = rows[k][static_cast<std::size_t>(q + 1)];
        }
        g.constant_value = 0.5 * (g.sweep_values[0] + g.sweep_values[g.sweep_values.size() - 1]);
        return g;
    }
    const auto r = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(rows.size()))));
    require(r >= 2 && r * r == static_cast<Index>(rows.size()), "grid csv: lattice must be square");
    g.kind = ToyKind::Line;
    g.resolution = r;
    g.x_lo = rows.front()[0];
    g.x_hi = rows[static_cast<std::size_t>(r - 1)][0];
    g.y_lo = rows.front()[1];
    g.y_hi = rows.back()[1];
    g.confidence.resize(r, r);
    for (Index i = 0; i < r; ++i) {
        for (Index j = 0; j < r; ++j) g.confidence(i, j) = rows[static_cast<std::size_t>(i * r + j)][2];
    }
    return g;
}

Matrix read_points_csv(std::istream& in) {
    std::string header;
    require(static_cast<bool>(std::getline(in, header)), "points csv: empty input");
    require(header.rfind("x0,x1", 0) == 0, "points csv: expected columns x0,x1,...");
    std::vector<std::array<double, 2>> pts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto row = parse_row(line, 0);
        require(row.size() >= 2, "points csv: short row");
        pts.push_back({row[0], row[1]});
    }
    Matrix out(static_cast<Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out(static_cast<Index>(i), 0) = pts[i][0];
        out(static_cast<Index>(i), 1) = pts[i][1];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tables

std::string emit_table_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    write_report_csv(out, reports);
    return out.str();
}

std::string emit_table_text(const std::vector<MetricsReport>& reports) {
    require(!reports.empty(), "table: no reports");
    std::vector<std::string> methods;
    std::vector<std::string> toys;
    for (const auto& r : reports) {
        if (std::find(methods.begin(), methods.end(), r.detector) == methods.end()) methods.push_back(r.detector);
        if (std::find(toys.begin(), toys.end(), r.toy) == toys.end()) toys.push_back(r.toy);
    }
    auto find = [&](const std::string& m, const std::string& t) -> const MetricsReport* {
        for (const auto& r : reports) {
            if (r.detector == m && r.toy == t) return &r;
        }
        return nullptr;
    };
    auto fmt = [](double v, bool fixed) {
        std::ostringstream s;
        if (fixed) {
            s << std::fixed << std::setprecision(3) << v;
        } else {
            s << std::setprecision(3) << v;
        }
        return s.str();
    };
    const std::vector<std::string> heads{"method", "precision", "f1", "roc_auc", "fit_time_s", "score_time_s",
                                         "memory_kib"};
    std::vector<std::vector<std::string>> rows;
    std::string toy_line;
    for (std::size_t t = 0; t < toys.size(); ++t) toy_line += (t ? " / " : "") + toys[t];
    for (const auto& m : methods) {
        std::vector<std::string> row{m};
        for (int col = 0; col < 6; ++col) {
            std::string cell;
            for (std::size_t t = 0; t < toys.size(); ++t) {
                const MetricsReport* r = find(m, toys[t]);
                std::string v = "-";
                if (r) {
                    const double vals[] = {r->precision, r->f1, r->roc_auc, r->fit_time_s, r->score_time_s,
                                           r->memory_kib};
                    v = fmt(vals[col], col < 3);
                }
                cell += (t ? " / " : "") + v;
            }
            row.push_back(cell);
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(heads.size());
    for (std::size_t c = 0; c < heads.size(); ++c) {
        width[c] = heads[c].size();
        for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream out;
    out << "toys: " << toy_line << '\n';
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << row[c];
        }
        out << '\n';
    };
    emit(heads);
    std::vector<std::string> rule;
    for (auto w : width) rule.emplace_back(w, '-');
    emit(rule);
    for (const auto& row : rows) emit(row);
    return out.str();
}

// ---------------------------------------------------------------------------
// Runner

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp + "'");
        out << contents;
        out.flush();
        if (!out) throw Error("failed writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error("cannot rename '" + tmp + "': " + ec.message());
    }
}

namespace {

struct CellJob {
    const MethodSpec* method;
    const ToyConfig* toy;
};

Matrix head_rows(const Matrix& m, Index n) { return m.topRows(std::min(n, m.rows())); }

CellOutcome run_cell(const BenchConfig& config, const CellJob& job, const LabeledSplits& data,
                     std::ostream* log, std::mutex& log_mutex) {
    const MethodSpec& method = *job.method;
    const ToySpec& spec = job.toy->spec;
    const std::string toy_name(to_string(spec.kind));
    CellOutcome cell;
    cell.method = method.label;
    cell.toy = toy_name;
    try {
        const std::uint64_t seed = cell_seed(config.master_seed, method.label, spec.kind);
        FittedMethod fitted = fit_method(method, spec, data, seed);
        const Vector conf = fitted.confidence(data.test.points);
        cell.report = evaluate_confidences(method.label, toy_name, conf, data.test_is_id);
        cell.report.memory_kib = static_cast<double>(fitted.serialized_bytes) / 1024.0;
        if (config.profile) {
            const ProfileResult p = profile([&] { fit_method(method, spec, data, seed); },
                                            [&] { fitted.confidence(data.test.points); },
                                            [&] { return fitted.serialized_bytes; }, config.profile_repeats);
            cell.report.fit_time_s = p.fit_time_s;
            cell.report.score_time_s = p.score_time_s;
        }

        const GridField grid = emit_grid(fitted.confidence, spec, config.resolution, config.sweep,
                                         sweep_seed(config.master_seed, spec.kind));
        const std::string stem = file_stem(method.label, spec.kind);
        std::ostringstream grid_csv;
        write_grid_csv(grid_csv, grid);
        write_file_atomic(config.output_dir / "grids" / (stem + ".csv"), grid_csv.str());
        if (fitted.synthetic) {
            std::ostringstream s;
            write_synthesised_csv(s, *fitted.synthetic);
            write_file_atomic(config.output_dir / "synthetic" / (stem + ".csv"), s.str());
        }
        if (config.png) {
            const Matrix train = head_rows(data.train.points, config.overlay_points);
            Matrix synth;
            if (fitted.synthetic) synth = head_rows(fitted.synthetic->points, config.overlay_points);
            const auto png = render_png(grid, config.colormap, spec.kind == ToyKind::Haystack ? nullptr : &train,
                                        fitted.synthetic && spec.kind != ToyKind::Haystack ? &synth : nullptr);
            write_file_atomic(config.output_dir / "png" / (stem + ".png"), std::string(png.begin(), png.end()));
        }
        cell.ok = true;
        if (log) {
            std::lock_guard lock(log_mutex);
            *log << "[ok] " << method.label << " / " << toy_name << "  roc_auc=" << cell.report.roc_auc;
            for (const auto& n : fitted.notes) *log << "  " << n;
            *log << '\n';
        }
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        if (log) {
            std::lock_guard lock(log_mutex);
            *log << "[failed] " << method.label << " / " << toy_name << ": " << e.what() << '\n';
        }
    }
    return cell;
}

}  // namespace

RunSummary run_benchmark(const BenchConfig& config, int jobs, std::ostream* log) {
    config.validate();
    require(jobs >= 1, "run: jobs must be positive");
    std::error_code ec;
    for (const char* sub : {"grids", "synthetic", "png"}) {
        std::filesystem::create_directories(config.output_dir / sub, ec);
        if (ec) throw Error("cannot create output directory '" + config.output_dir.string() + "': " + ec.message());
    }
    // Probe writability up front so a bad directory is a configuration error.
    write_file_atomic(config.output_dir / ".probe", "");
    std::filesystem::remove(config.output_dir / ".probe");

    std::vector<LabeledSplits> data;
    for (const auto& toy : config.toys) {
        data.push_back(generate_toy(toy.spec, data_seed(config.master_seed, toy.spec.kind), toy.counts));
    }
    std::vector<CellJob> cells;
    std::vector<std::size_t> toy_of;
    for (const auto& m : config.methods) {
        for (std::size_t t = 0; t < config.toys.size(); ++t) {
            cells.push_back({&m, &config.toys[t]});
            toy_of.push_back(t);
        }
    }

    RunSummary summary;
    summary.cells.resize(cells.size());
    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            summary.cells[i] = run_cell(config, cells[i], data[toy_of[i]], log, log_mutex);
        }
    };
    // Profiled runs stay on one thread so timings are not contended.
    const int threads = config.profile ? 1 : std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::vector<MetricsReport> reports;
    std::ostringstream failures;
    failures << "method,toy,error\n";
    for (const auto& c : summary.cells) {
        if (c.ok) {
            reports.push_back(c.report);
        } else {
            summary.exit_code = 2;
            failures << csv_quote(c.method) << ',' << c.toy << ',' << csv_quote(c.error) << '\n';
        }
    }
    write_file_atomic(config.output_dir / "report.csv", emit_table_csv(reports));
    write_file_atomic(config.output_dir / "report.txt", reports.empty() ? std::string("no successful cells\n")
                                                                        : emit_table_text(reports));
    write_file_atomic(config.output_dir / "failures.csv", failures.str());
    return summary;
}

}  // namespace oodbench
