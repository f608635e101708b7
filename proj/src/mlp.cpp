#include "oodbench/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oodbench {

namespace {

void activate(Matrix& z, Activation act) {
    switch (act) {
        case Activation::Identity: break;
        case Activation::Tanh: z = z.array().tanh(); break;
        case Activation::Relu: z = z.cwiseMax(0.0); break;
    }
}

// d(activation)/dz expressed through the activation output a.
Matrix activation_slope(const Matrix& a, Activation act) {
    switch (act) {
        case Activation::Identity: return Matrix::Ones(a.rows(), a.cols());
        case Activation::Tanh: return (1.0 - a.array().square()).matrix();
        case Activation::Relu: return (a.array() > 0.0).cast<double>().matrix();
    }
    return Matrix::Ones(a.rows(), a.cols());
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

int activation_code(Activation act) { return static_cast<int>(act); }

Matrix gather_rows(const Matrix& m, const std::vector<Index>& order, Index begin, Index end) {
    Matrix out(end - begin, m.cols());
    for (Index r = begin; r < end; ++r) {
        out.row(r - begin) = m.row(order[static_cast<std::size_t>(r)]);
    }
    return out;
}

Vector gather(const Vector& v, const std::vector<Index>& order, Index begin, Index end) {
    Vector out(end - begin);
    for (Index r = begin; r < end; ++r) {
        out[r - begin] = v[order[static_cast<std::size_t>(r)]];
    }
    return out;
}

}  // namespace

Mlp::Mlp(const std::vector<Index>& sizes, const std::vector<Activation>& activations, Rng& rng) {
    require(sizes.size() >= 2 && activations.size() == sizes.size() - 1, "mlp: layer description mismatch");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const Index in = sizes[l];
        const Index out = sizes[l + 1];
        require(in >= 1 && out >= 1, "mlp: layer sizes must be positive");
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        Layer layer;
        layer.activation = activations[l];
        layer.weights.resize(in, out);
        for (Index i = 0; i < in; ++i) {
            for (Index j = 0; j < out; ++j) {
                layer.weights(i, j) = rng.uniform(-bound, bound);
            }
        }
        layer.bias.resize(out);
        for (Index j = 0; j < out; ++j) {
            layer.bias[j] = rng.uniform(-bound, bound);
        }
        layers_.push_back(std::move(layer));
    }
}

Matrix Mlp::forward(const Matrix& input) const {
    require(!layers_.empty() && input.cols() == input_dims(), "mlp: input width mismatch");
    Matrix a = input;
    for (const auto& layer : layers_) {
        Matrix z = (a * layer.weights).rowwise() + layer.bias.transpose();
        activate(z, layer.activation);
        a = std::move(z);
    }
    return a;
}

double Mlp::loss_and_gradients(const Matrix& input, const Matrix& target, const Vector& sample_weights,
                               Loss loss, double l2, Gradients& grads) const {
    const Index batch = input.rows();
    require(target.rows() == batch && sample_weights.size() == batch, "mlp: batch shape mismatch");
    require(target.cols() == output_dims(), "mlp: target width mismatch");

    std::vector<Matrix> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(input);
    for (const auto& layer : layers_) {
        Matrix z = (acts.back() * layer.weights).rowwise() + layer.bias.transpose();
        activate(z, layer.activation);
        acts.push_back(std::move(z));
    }
    const Matrix& out = acts.back();

    const double weight_sum = sample_weights.sum();
    double value = 0.0;
    Matrix delta = Matrix::Zero(batch, out.cols());
    if (weight_sum > 0.0) {
        if (loss == Loss::MeanSquared) {
            const double norm = 1.0 / (weight_sum * static_cast<double>(out.cols()));
            const Matrix diff = out - target;
            value = (diff.array().square().rowwise().sum() * sample_weights.array()).sum() * norm;
            delta = (diff.array().colwise() * sample_weights.array()).matrix() * (2.0 * norm);
        } else {
            require(out.cols() == 1, "mlp: cross-entropy expects a single logit");
            for (Index i = 0; i < batch; ++i) {
                const double z = out(i, 0);
                const double y = target(i, 0);
                value += sample_weights[i] * (softplus(z) - y * z);
                delta(i, 0) = sample_weights[i] * (sigmoid(z) - y);
            }
            value /= weight_sum;
            delta /= weight_sum;
        }
    }

    grads.weights.resize(layers_.size());
    grads.bias.resize(layers_.size());
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        delta = delta.cwiseProduct(activation_slope(acts[l + 1], layer.activation));
        grads.weights[l] = acts[l].transpose() * delta;
        grads.bias[l] = delta.colwise().sum().transpose();
        if (l2 > 0.0) {
            grads.weights[l] += (l2 / static_cast<double>(batch)) * layer.weights;
            value += 0.5 * l2 / static_cast<double>(batch) * layer.weights.squaredNorm();
        }
        if (l > 0) {
            delta = delta * layer.weights.transpose();
        }
    }
    return value;
}

double Mlp::loss(const Matrix& input, const Matrix& target, const Vector& sample_weights, Loss loss,
                 double l2) const {
    Gradients scratch;
    return loss_and_gradients(input, target, sample_weights, loss, l2, scratch);
}

Index Mlp::parameter_count() const {
    Index count = 0;
    for (const auto& layer : layers_) {
        count += layer.weights.size() + layer.bias.size();
    }
    return count;
}

Vector Mlp::parameters() const {
    Vector flat(parameter_count());
    Index pos = 0;
    for (const auto& layer : layers_) {
        flat.segment(pos, layer.weights.size()) = Eigen::Map<const Vector>(layer.weights.data(), layer.weights.size());
        pos += layer.weights.size();
        flat.segment(pos, layer.bias.size()) = layer.bias;
        pos += layer.bias.size();
    }
    return flat;
}

void Mlp::set_parameters(const Vector& flat) {
    require(flat.size() == parameter_count(), "mlp: parameter count mismatch");
    Index pos = 0;
    for (auto& layer : layers_) {
        Eigen::Map<Vector>(layer.weights.data(), layer.weights.size()) = flat.segment(pos, layer.weights.size());
        pos += layer.weights.size();
        layer.bias = flat.segment(pos, layer.bias.size());
        pos += layer.bias.size();
    }
}

Vector Mlp::flatten(const Gradients& grads) {
    Index count = 0;
    for (std::size_t l = 0; l < grads.weights.size(); ++l) {
        count += grads.weights[l].size() + grads.bias[l].size();
    }
    Vector flat(count);
    Index pos = 0;
    for (std::size_t l = 0; l < grads.weights.size(); ++l) {
        const Matrix& w = grads.weights[l];
        flat.segment(pos, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
        pos += w.size();
        flat.segment(pos, grads.bias[l].size()) = grads.bias[l];
        pos += grads.bias[l].size();
    }
    return flat;
}

void Mlp::save(ModelBlob& blob, const std::string& prefix) const {
    blob.put_scalar(prefix + "layers", static_cast<double>(layers_.size()));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string key = prefix + std::to_string(l) + ".";
        blob.put(key + "weights", layers_[l].weights);
        blob.put(key + "bias", layers_[l].bias);
        blob.put_scalar(key + "activation", activation_code(layers_[l].activation));
    }
}

Mlp Mlp::load(const ModelBlob& blob, const std::string& prefix) {
    Mlp net;
    const auto count = static_cast<std::size_t>(blob.scalar(prefix + "layers"));
    for (std::size_t l = 0; l < count; ++l) {
        const std::string key = prefix + std::to_string(l) + ".";
        Layer layer;
        layer.weights = blob.matrix(key + "weights");
        layer.bias = blob.vector(key + "bias");
        layer.activation = static_cast<Activation>(static_cast<int>(blob.scalar(key + "activation")));
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

TrainReport train_mlp(Mlp& net, const Matrix& input, const Matrix& target, const Vector& sample_weights,
                      Loss loss, const TrainOptions& options, Rng& rng) {
    const Index n = input.rows();
    require(n >= 1 && target.rows() == n && sample_weights.size() == n, "train_mlp: data shape mismatch");
    require(options.batch_size >= 1 && options.max_epochs >= 1, "train_mlp: invalid options");

    const Mlp initial = net;
    TrainReport report;
    double learning_rate = options.learning_rate;

    for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
        net = initial;
        const Index params = net.parameter_count();
        Vector m = Vector::Zero(params);
        Vector v = Vector::Zero(params);
        Mlp::Gradients grads;
        double best = std::numeric_limits<double>::infinity();
        Index stale = 0;
        Index step = 0;
        bool diverged = false;
        Index epoch = 0;
        double epoch_loss = 0.0;

        for (epoch = 0; epoch < options.max_epochs; ++epoch) {
            const auto order = rng.permutation(n);
            epoch_loss = 0.0;
            for (Index begin = 0; begin < n; begin += options.batch_size) {
                const Index end = std::min(n, begin + options.batch_size);
                const Matrix xb = gather_rows(input, order, begin, end);
                const Matrix yb = gather_rows(target, order, begin, end);
                const Vector wb = gather(sample_weights, order, begin, end);
                const double batch_loss = net.loss_and_gradients(xb, yb, wb, loss, options.l2, grads);
                epoch_loss += batch_loss * static_cast<double>(end - begin);

                ++step;
                const Vector g = Mlp::flatten(grads);
                m = options.beta1 * m + (1.0 - options.beta1) * g;
                v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseAbs2();
                const double correction = std::sqrt(1.0 - std::pow(options.beta2, static_cast<double>(step))) /
                                          (1.0 - std::pow(options.beta1, static_cast<double>(step)));
                const Vector update =
                    (learning_rate * correction) * (m.array() / (v.array().sqrt() + options.epsilon)).matrix();
                net.set_parameters(net.parameters() - update);
            }
            epoch_loss /= static_cast<double>(n);
            if (!std::isfinite(epoch_loss)) {
                diverged = true;
                break;
            }
            if (epoch_loss > best - options.tolerance) {
                if (++stale >= options.patience) {
                    ++epoch;
                    break;
                }
            } else {
                stale = 0;
            }
            best = std::min(best, epoch_loss);
        }

        if (!diverged && net.parameters().allFinite()) {
            report.epochs = epoch;
            report.final_loss = epoch_loss;
            report.restarts = attempt;
            report.learning_rate = learning_rate;
            return report;
        }
        learning_rate *= 0.1;
    }
    throw NumericalError("train_mlp: training diverged after every learning-rate back-off");
}

}  // namespace oodbench
