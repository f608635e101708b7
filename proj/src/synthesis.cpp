#include "oodbench/synthesis.hpp"

#include "oodbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace oodbench {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Largest |log t| step still considered movement.
constexpr double kStopStep = 1e-3;

}  // namespace

void SynthesisConfig::validate() const {
    require(n_ood >= 0, "synthesis: n_ood must be non-negative");
    switch (method) {
        case SynthesisMethod::UniformBox: break;
        case SynthesisMethod::FgsmConstant: require(epsilon > 0.0, "synthesis: epsilon must be positive"); break;
        case SynthesisMethod::FgsmUniform: require(lo < hi && lo >= 0.0, "synthesis: need 0 <= lo < hi"); break;
        case SynthesisMethod::FgsmTPoke: require(t > 0.0, "synthesis: t must be positive"); break;
    }
}

double scott_bandwidth(const Matrix& samples) {
    require(samples.rows() >= 1 && samples.cols() >= 1, "bandwidth: empty sample");
    const double n = static_cast<double>(samples.rows());
    const double d = static_cast<double>(samples.cols());
    const Vector mean = samples.colwise().mean().transpose();
    const double sd = ((samples.rowwise() - mean.transpose()).array().square().colwise().mean().sqrt()).mean();
    const double h = std::pow(n, -1.0 / (d + 4.0)) * sd;
    return h > 0.0 ? h : 1e-6;
}

SynthesisedSet sample_uniform_ood(const Matrix& train, Index n, std::uint64_t seed) {
    require(n >= 1, "uniform synthesis: n must be positive");
    require(train.rows() >= 1, "uniform synthesis: empty training set");
    const Vector lo = train.colwise().minCoeff().transpose();
    const Vector hi = train.colwise().maxCoeff().transpose();
    Rng rng(seed);
    SynthesisedSet out;
    out.points.resize(n, train.cols());
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < train.cols(); ++j) {
            out.points(i, j) = std::clamp(rng.uniform(lo[j], hi[j]), lo[j], hi[j]);
        }
    }
    out.weights = Vector::Ones(n);
    return out;
}

Matrix sample_kde_id(const Matrix& train, double bandwidth, Index n, std::uint64_t seed) {
    require(bandwidth >= 0.0, "kde sampling: bandwidth must be non-negative");
    require(train.rows() >= 1 && n >= 0, "kde sampling: bad sizes");
    Rng rng(seed);
    Matrix out(n, train.cols());
    for (Index i = 0; i < n; ++i) {
        const auto src = static_cast<Index>(rng.below(static_cast<std::uint64_t>(train.rows())));
        for (Index j = 0; j < train.cols(); ++j) {
            out(i, j) = train(src, j) + bandwidth * rng.normal();
        }
    }
    return out;
}

Matrix fgsm_perturb(const Matrix& points, const Vector& steps, const Matrix& grads) {
    require(points.rows() == grads.rows() && points.cols() == grads.cols(), "fgsm: gradient shape mismatch");
    require(steps.size() == points.rows(), "fgsm: one step per point");
    require((steps.array() >= 0.0).all(), "fgsm: steps must be non-negative");
    Matrix out = points;
    for (Index i = 0; i < points.rows(); ++i) {
        for (Index j = 0; j < points.cols(); ++j) {
            out(i, j) += steps[i] * sign(grads(i, j));
        }
    }
    return out;
}

Matrix finite_difference_gradient(const std::function<Vector(const Matrix&)>& field, const Matrix& points,
                                  double h) {
    require(h > 0.0, "finite differences: step must be positive");
    Matrix grad(points.rows(), points.cols());
    for (Index j = 0; j < points.cols(); ++j) {
        Matrix up = points;
        Matrix down = points;
        up.col(j).array() += h;
        down.col(j).array() -= h;
        grad.col(j) = (field(up) - field(down)) / (2.0 * h);
    }
    return grad;
}

SynthesisedSet synthesise_fgsm(const Matrix& train, const ToySpec& spec, const SynthesisConfig& config) {
    config.validate();
    require(config.method != SynthesisMethod::UniformBox, "fgsm synthesis: method must be an FGSM variant");
    const Index n = config.n_ood > 0 ? config.n_ood : train.rows();
    const double bandwidth = config.kde_bandwidth > 0.0 ? config.kde_bandwidth : scott_bandwidth(train);
    const Matrix base = sample_kde_id(train, bandwidth, n, derive_seed(config.seed, {"fgsm", "kde"}));

    Vector steps(n);
    Rng rng(derive_seed(config.seed, {"fgsm", "steps"}));
    for (Index i = 0; i < n; ++i) {
        switch (config.method) {
            case SynthesisMethod::FgsmConstant: steps[i] = config.epsilon; break;
            case SynthesisMethod::FgsmUniform: steps[i] = rng.uniform(config.lo, config.hi); break;
            case SynthesisMethod::FgsmTPoke: steps[i] = config.t_uniform ? rng.uniform(0.0, config.t) : config.t; break;
            case SynthesisMethod::UniformBox: break;
        }
    }

    SynthesisedSet out;
    out.points = fgsm_perturb(base, steps, reference_error_gradient(spec, base));
    out.steps = std::move(steps);
    out.weights = Vector::Ones(n);
    return out;
}

SynthesisedSet synthesise(const Matrix& train, const ToySpec& spec, const SynthesisConfig& config) {
    config.validate();
    if (config.method == SynthesisMethod::UniformBox) {
        const Index n = config.n_ood > 0 ? config.n_ood : train.rows();
        return sample_uniform_ood(train, n, derive_seed(config.seed, {"uniform"}));
    }
    return synthesise_fgsm(train, spec, config);
}

// ---------------------------------------------------------------------------

Vector SupervisedDetector::logits(const Matrix& points) const {
    return net_.forward(standardizer_.apply(points)).col(0);
}

Vector SupervisedDetector::confidence(const Matrix& points) const {
    return logits(points).unaryExpr([](double z) { return sigmoid(z); });
}

Vector SupervisedDetector::ood_probability(const Matrix& points) const {
    return (1.0 - confidence(points).array()).matrix();
}

void SupervisedDetector::save(ModelBlob& blob) const {
    blob.put("mean", standardizer_.mean);
    blob.put("scale", standardizer_.scale);
    net_.save(blob, "net.");
}

SupervisedDetector SupervisedDetector::load(const ModelBlob& blob) {
    return SupervisedDetector({blob.vector("mean"), blob.vector("scale")}, Mlp::load(blob, "net."), {});
}

SupervisedDetector train_supervised(const Matrix& id_points, const SynthesisedSet& ood, std::uint64_t seed,
                                    const SupervisedOptions& options) {
    require(id_points.rows() >= 1 && ood.size() >= 1, "supervised: both classes must be non-empty");
    require(id_points.cols() == ood.points.cols(), "supervised: dimension mismatch");
    require(ood.weights.size() == ood.size(), "supervised: one weight per synthetic point");
    require((ood.weights.array() >= 0.0).all() && (ood.weights.array() <= 1.0).all(),
            "supervised: weights must lie in [0, 1]");
    const Index n_id = id_points.rows();
    const Index n_ood = ood.size();

    Standardizer standardizer = Standardizer::fit(id_points);
    Matrix x(n_id + n_ood, id_points.cols());
    x.topRows(n_id) = id_points;
    x.bottomRows(n_ood) = ood.points;
    x = standardizer.apply(x);
    Matrix y(n_id + n_ood, 1);
    y.topRows(n_id).setOnes();
    y.bottomRows(n_ood).setZero();
    Vector w(n_id + n_ood);
    w.head(n_id).setOnes();
    w.tail(n_ood) = ood.weights;

    Rng init(derive_seed(seed, {"supervised", "init"}));
    Mlp net({x.cols(), options.hidden, 1}, {Activation::Relu, Activation::Identity}, init);
    Rng shuffle(derive_seed(seed, {"supervised", "shuffle"}));
    const TrainReport report = train_mlp(net, x, y, w, Loss::BinaryCrossEntropy, options.train, shuffle);
    return SupervisedDetector(std::move(standardizer), std::move(net), report);
}

// ---------------------------------------------------------------------------

void TPokeState::validate() const {
    require(t > 0.0, "tpoke: t must be positive");
    require(backoff_factor > 1.0, "tpoke: backoff factor must exceed 1");
    require(poke_factor > 0.0 && poke_factor < 1.0, "tpoke: poke factor must lie in (0, 1)");
    require(anneal_rate > 0.0 && anneal_rate < 1.0, "tpoke: anneal rate must lie in (0, 1)");
}

TPokeSearch tpoke_search(TPokeState initial, Index max_cycles, const std::function<double(double)>& evaluate) {
    initial.validate();
    require(max_cycles >= 1, "tpoke: max_cycles must be positive");
    TPokeSearch search;
    search.state = initial;
    TPokeState& s = search.state;
    for (Index cycle = 0; cycle < max_cycles; ++cycle) {
        const double criterion = evaluate(s.t);
        const bool passed = criterion >= s.criterion_threshold;
        search.history.push_back({s.t, passed, criterion});
        if (passed) {
            search.accepted = search.history.size() - 1;
        }
        s.t *= passed ? s.poke_factor : s.backoff_factor;
        // Either factor bounds this step and, after annealing, every later one.
        const double largest_step = std::max(std::log(s.backoff_factor), -std::log(s.poke_factor));
        s.backoff_factor = std::pow(s.backoff_factor, s.anneal_rate);
        s.poke_factor = std::pow(s.poke_factor, s.anneal_rate);
        ++s.iteration;
        if (largest_step < kStopStep) {
            search.annealed = true;
            break;
        }
    }
    s.converged = search.annealed && search.accepted.has_value();
    return search;
}

TPokeOutcome tpoke(const Matrix& train, const Matrix& valid, const ToySpec& spec, TPokeState initial,
                   Index max_cycles, std::uint64_t seed, const SupervisedOptions& options) {
    require(valid.rows() >= 1, "tpoke: validation set must be non-empty");
    TPokeOutcome out;
    bool have_pass = false;
    std::uint64_t cycle = 0;
    auto evaluate = [&](double t) {
        SynthesisConfig config;
        config.method = SynthesisMethod::FgsmTPoke;
        config.t = t;
        config.seed = derive_seed(seed, "tpoke-cycle", cycle);
        SynthesisedSet ood = synthesise_fgsm(train, spec, config);
        SupervisedDetector det = train_supervised(train, ood, derive_seed(seed, {"tpoke", "classifier"}), options);
        const double mean_conf = det.confidence(valid).mean();
        ++cycle;
        const bool passed = mean_conf >= initial.criterion_threshold;
        if (passed || !have_pass) {
            out.detector = std::move(det);
            out.ood = std::move(ood);
            out.t = t;
            out.mean_valid_confidence = mean_conf;
            have_pass = have_pass || passed;
        }
        return mean_conf;
    };
    out.search = tpoke_search(initial, max_cycles, evaluate);
    out.converged = out.search.state.converged;
    return out;
}

void write_synthesised_csv(std::ostream& out, const SynthesisedSet& set) {
    const Index d = set.points.cols();
    for (Index j = 0; j < d; ++j) {
        out << 'x' << j << ',';
    }
    out << "step,weight\n";
    const auto old = out.precision(17);
    for (Index i = 0; i < set.size(); ++i) {
        for (Index j = 0; j < d; ++j) {
            out << set.points(i, j) << ',';
        }
        out << (set.steps.size() == set.size() ? set.steps[i] : 0.0) << ','
            << (set.weights.size() == set.size() ? set.weights[i] : 1.0) << '\n';
    }
    out.precision(old);
}

}  // namespace oodbench
