#pragma once

#include "oodbench/core.hpp"
#include "oodbench/mlp.hpp"
#include "oodbench/standardizer.hpp"
#include "oodbench/toyspace.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace oodbench {

enum class SynthesisMethod { UniformBox, FgsmConstant, FgsmUniform, FgsmTPoke };

struct SynthesisConfig {
    SynthesisMethod method = SynthesisMethod::FgsmUniform;
    double epsilon = 1.0;  ///< FgsmConstant step
    double lo = 0.0;       ///< FgsmUniform range
    double hi = 1.0;
    double t = 1.0;        ///< FgsmTPoke step parameter
    bool t_uniform = false;  ///< draw steps from U(0, t) instead of using t itself
    Index n_ood = 0;         ///< 0 selects n_train
    double kde_bandwidth = 0.0;  ///< <= 0 selects scott_bandwidth(train)
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthesisedSet {
    Matrix points;
    Vector steps;    ///< empty for non-FGSM methods
    Vector weights;  ///< in [0, 1]; all ones until reweighted

    Index size() const noexcept { return points.rows(); }
};

/// n^(-1/(D+4)) times the mean per-feature standard deviation. Falls back to
/// 1e-6 when every feature is constant.
double scott_bandwidth(const Matrix& samples);

SynthesisedSet sample_uniform_ood(const Matrix& train, Index n, std::uint64_t seed);

/// Each sample is a uniformly chosen training point plus N(0, bandwidth^2 I).
Matrix sample_kde_id(const Matrix& train, double bandwidth, Index n, std::uint64_t seed);

/// x + step * sign(grad), with sign(0) = 0.
Matrix fgsm_perturb(const Matrix& points, const Vector& steps, const Matrix& grads);

/// Central finite-difference gradient of an arbitrary scalar field, for
/// detectors without an analytic gradient.
Matrix finite_difference_gradient(const std::function<Vector(const Matrix&)>& field, const Matrix& points,
                                  double h = 1e-5);

/// KDE-samples ID points and pushes them up the reference error gradient.
SynthesisedSet synthesise_fgsm(const Matrix& train, const ToySpec& spec, const SynthesisConfig& config);

/// Dispatches on config.method.
SynthesisedSet synthesise(const Matrix& train, const ToySpec& spec, const SynthesisConfig& config);

struct SupervisedOptions {
    Index hidden = 100;
    TrainOptions train = default_train();

    static TrainOptions default_train() {
        TrainOptions t;
        t.learning_rate = 1e-3;
        t.batch_size = 200;
        t.max_epochs = 200;
        t.patience = 10;
        t.tolerance = 1e-4;
        t.l2 = 1e-4;
        return t;
    }
};

/// Binary MLP classifier; class 1 is ID.
class SupervisedDetector {
public:
    SupervisedDetector() = default;
    SupervisedDetector(Standardizer standardizer, Mlp net, TrainReport report)
        : standardizer_(std::move(standardizer)), net_(std::move(net)), report_(report) {}

    /// Probability of the ID class.
    Vector confidence(const Matrix& points) const;
    /// 1 - confidence.
    Vector ood_probability(const Matrix& points) const;
    Vector logits(const Matrix& points) const;

    const Mlp& network() const noexcept { return net_; }
    const Standardizer& standardizer() const noexcept { return standardizer_; }
    const TrainReport& report() const noexcept { return report_; }

    void save(ModelBlob& blob) const;
    static SupervisedDetector load(const ModelBlob& blob);

private:
    Standardizer standardizer_;
    Mlp net_;
    TrainReport report_;
};

SupervisedDetector train_supervised(const Matrix& id_points, const SynthesisedSet& ood, std::uint64_t seed,
                                    const SupervisedOptions& options = {});

struct TPokeState {
    double t = 1.0;
    double backoff_factor = 2.0;
    double poke_factor = 0.5;
    double anneal_rate = 0.75;
    double criterion_threshold = 0.95;
    Index iteration = 0;
    bool converged = false;

    void validate() const;
};

struct TPokeStep {
    double t = 0.0;
    bool passed = false;
    double criterion = 0.0;
};

struct TPokeSearch {
    TPokeState state;
    std::vector<TPokeStep> history;
    /// Step of the most recent passing cycle, if any.
    std::optional<std::size_t> accepted;
    /// Factors fell below the stopping threshold (state.converged additionally
    /// requires a passing cycle).
    bool annealed = false;
};

/// The search loop on its own. `evaluate(t)` runs one cycle and returns the
/// criterion value (mean validation confidence); a cycle passes when the
/// value reaches state.criterion_threshold. Both factors are raised to the
/// power anneal_rate after each cycle; the search stops once both factors
/// move log t by less than 1e-3, or after max_cycles.
TPokeSearch tpoke_search(TPokeState initial, Index max_cycles, const std::function<double(double)>& evaluate);

struct TPokeOutcome {
    TPokeSearch search;
    SupervisedDetector detector;  ///< from the last passing cycle (else the last cycle)
    SynthesisedSet ood;           ///< training set of that detector
    double t = 0.0;               ///< its step parameter
    double mean_valid_confidence = 0.0;
    /// Factors annealed below the stopping threshold and at least one cycle passed.
    bool converged = false;
};

TPokeOutcome tpoke(const Matrix& train, const Matrix& valid, const ToySpec& spec, TPokeState initial,
                   Index max_cycles, std::uint64_t seed, const SupervisedOptions& options = {});

/// Header x0,...,x{D-1},step,weight.
void write_synthesised_csv(std::ostream& out, const SynthesisedSet& set);

}  // namespace oodbench
