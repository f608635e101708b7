#pragma once

#include "oodbench/core.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/serialize.hpp"

#include <string>
#include <vector>

namespace oodbench {

enum class Activation { Identity, Tanh, Relu };

enum class Loss {
    /// sum_i w_i |y_hat_i - y_i|^2 / (D sum_i w_i)
    MeanSquared,
    /// sum_i w_i (softplus(z_i) - y_i z_i) / sum_i w_i on a single logit z
    BinaryCrossEntropy,
};

/// Fully connected network; layer l maps rows of width sizes[l] to sizes[l+1].
class Mlp {
public:
    struct Layer {
        Matrix weights;  // in x out
        Vector bias;
        Activation activation = Activation::Identity;
    };

    struct Gradients {
        std::vector<Matrix> weights;
        std::vector<Vector> bias;
    };

    Mlp() = default;

    /// Glorot-uniform initialisation (tanh gain for tanh layers).
    Mlp(const std::vector<Index>& sizes, const std::vector<Activation>& activations, Rng& rng);

    Matrix forward(const Matrix& input) const;

    /// Loss of the batch plus its gradients with respect to every parameter.
    /// `l2` adds 0.5 * l2 * |W|^2 / batch_size (biases excluded).
    double loss_and_gradients(const Matrix& input, const Matrix& target, const Vector& sample_weights,
                              Loss loss, double l2, Gradients& grads) const;

    double loss(const Matrix& input, const Matrix& target, const Vector& sample_weights, Loss loss,
                double l2) const;

    Index input_dims() const { return layers_.front().weights.rows(); }
    Index output_dims() const { return layers_.back().weights.cols(); }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }

    Index parameter_count() const;
    /// Flat parameter view (weights then bias, layer by layer) for checks.
    Vector parameters() const;
    void set_parameters(const Vector& flat);
    static Vector flatten(const Gradients& grads);

    void save(ModelBlob& blob, const std::string& prefix) const;
    static Mlp load(const ModelBlob& blob, const std::string& prefix);

private:
    std::vector<Layer> layers_;
};

struct TrainOptions {
    double learning_rate = 1e-3;
    Index batch_size = 32;
    Index max_epochs = 2000;
    /// Stop once the epoch loss has not improved by `tolerance` for this many epochs.
    Index patience = 50;
    double tolerance = 1e-6;
    double l2 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// A diverged run (non-finite loss) is restarted from the initial
    /// weights with a 10x smaller learning rate, at most this many times.
    int max_restarts = 2;
};

struct TrainReport {
    Index epochs = 0;
    double final_loss = 0.0;
    int restarts = 0;
    double learning_rate = 0.0;
};

/// Mini-batch Adam. Shuffling draws from `rng`, so a fixed seed gives a
/// bit-identical network.
TrainReport train_mlp(Mlp& net, const Matrix& input, const Matrix& target, const Vector& sample_weights,
                      Loss loss, const TrainOptions& options, Rng& rng);

}  // namespace oodbench
