#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "s2p/util.hpp"

namespace s2p {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using FeatureMatrix = Mat<double>;

/// Named parameter tensors. Biases are stored as k x 1 matrices so every block has
/// the same type; `decay[i]` marks blocks that receive weight decay.
template <typename Scalar>
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<Mat<Scalar>> tensors;
    std::vector<bool> decay;

    std::size_t size() const { return tensors.size(); }

    void add(std::string name, Mat<Scalar> value, bool decays) {
        names.push_back(std::move(name));
        tensors.push_back(std::move(value));
        decay.push_back(decays);
    }

    bool congruent(const std::vector<Mat<Scalar>>& other) const {
        if (other.size() != tensors.size()) return false;
        for (std::size_t i = 0; i < tensors.size(); ++i)
            if (other[i].rows() != tensors[i].rows() || other[i].cols() != tensors[i].cols()) return false;
        return true;
    }

    bool congruent(const ParameterSet& other) const { return congruent(other.tensors); }

    bool all_finite() const {
        for (const auto& t : tensors)
            if (!t.allFinite()) return false;
        return true;
    }

    Eigen::Index count() const {
        Eigen::Index n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    bool operator==(const ParameterSet& o) const {
        if (names != o.names || decay != o.decay || !congruent(o)) return false;
        for (std::size_t i = 0; i < tensors.size(); ++i)
            if (tensors[i] != o.tensors[i]) return false;
        return true;
    }
};

/// Per-block gradients, parallel to a ParameterSet.
template <typename Scalar>
struct GradientSet {
    std::vector<Mat<Scalar>> tensors;

    static GradientSet zeros_like(const ParameterSet<Scalar>& p) {
        GradientSet g;
        for (const auto& t : p.tensors) g.tensors.push_back(Mat<Scalar>::Zero(t.rows(), t.cols()));
        return g;
    }

    GradientSet& operator+=(const GradientSet& o) {
        if (o.tensors.size() != tensors.size()) throw std::invalid_argument("GradientSet: block count mismatch");
        for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += o.tensors[i];
        return *this;
    }

    GradientSet& operator*=(Scalar s) {
        for (auto& t : tensors) t *= s;
        return *this;
    }

    bool all_finite() const {
        for (const auto& t : tensors)
            if (!t.allFinite()) return false;
        return true;
    }
};

/// Multi-layer perceptron F(x) applied row-wise to a batch. Hidden layers use tanh;
/// the output layer is linear unless `output_activation` is set.
template <typename Scalar>
class Mlp {
public:
    /// Intermediates of one forward pass: activations[0] is the input batch and
    /// activations[l + 1] the output of layer l.
    struct Cache {
        std::vector<Mat<Scalar>> activations;
        const Mlp* owner = nullptr;
        std::uint64_t generation = 0;
    };

    Mlp() = default;

    /// Zero-initialized network with the given layer dimensions [D_in, h_1, ..., c].
    explicit Mlp(std::vector<int> dims, bool output_activation = false)
        : dims_(std::move(dims)), output_activation_(output_activation) {
        if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dimension");
        for (int d : dims_)
            if (d <= 0) throw std::invalid_argument("Mlp: layer dimensions must be positive");
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            params_.add("layer" + std::to_string(l) + ".weight", Mat<Scalar>::Zero(dims_[l + 1], dims_[l]), true);
            params_.add("layer" + std::to_string(l) + ".bias", Mat<Scalar>::Zero(dims_[l + 1], 1), false);
        }
    }

    /// Gaussian init with std sqrt(2 / (fan_in + fan_out)), zero biases.
    static Mlp random(std::vector<int> dims, std::uint64_t seed, bool output_activation = false) {
        Mlp m(std::move(dims), output_activation);
        Rng rng(seed);
        for (std::size_t l = 0; l < m.num_layers(); ++l) {
            auto& w = m.params_.tensors[2 * l];
            const double std = std::sqrt(2.0 / double(w.rows() + w.cols()));
            w = gaussian_matrix(w.rows(), w.cols(), std, rng).template cast<Scalar>();
        }
        return m;
    }

    std::size_t num_layers() const { return dims_.empty() ? 0 : dims_.size() - 1; }
    const std::vector<int>& dims() const { return dims_; }
    int input_dim() const { return dims_.front(); }
    int feature_dim() const { return dims_.back(); }
    bool output_activation() const { return output_activation_; }

    const Mat<Scalar>& weight(std::size_t l) const { return params_.tensors.at(2 * l); }
    const Mat<Scalar>& bias(std::size_t l) const { return params_.tensors.at(2 * l + 1); }

    const ParameterSet<Scalar>& params() const { return params_; }
    /// Mutable access invalidates outstanding caches.
    ParameterSet<Scalar>& mutable_params() {
        ++generation_;
        return params_;
    }

    Mat<Scalar> forward(const Eigen::Ref<const Mat<Scalar>>& x, Cache* cache = nullptr) const {
        if (x.cols() != input_dim())
            throw std::invalid_argument("Mlp::forward: batch width " + std::to_string(x.cols()) +
                                        " != input dimension " + std::to_string(input_dim()));
        Mat<Scalar> h = x;
        if (cache) {
            cache->activations.clear();
            cache->activations.push_back(h);
            cache->owner = this;
            cache->generation = generation_;
        }
        for (std::size_t l = 0; l < num_layers(); ++l) {
            Mat<Scalar> a = h * weight(l).transpose();
            a.rowwise() += bias(l).col(0).transpose();
            if (l + 1 < num_layers() || output_activation_) a = a.array().tanh().matrix();
            h = std::move(a);
            if (cache) cache->activations.push_back(h);
        }
        return h;
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to the
    /// forward output is `grad_output`.
    GradientSet<Scalar> backward(const Cache& cache, const Eigen::Ref<const Mat<Scalar>>& grad_output) const {
        if (cache.owner != this || cache.generation != generation_ ||
            cache.activations.size() != num_layers() + 1)
            throw std::logic_error("Mlp::backward: missing or stale forward cache");
        const auto& out = cache.activations.back();
        if (grad_output.rows() != out.rows() || grad_output.cols() != out.cols())
            throw std::invalid_argument("Mlp::backward: grad_output shape does not match forward output");

        GradientSet<Scalar> g;
        g.tensors.resize(params_.size());
        Mat<Scalar> delta = grad_output;
        for (std::size_t l = num_layers(); l-- > 0;) {
            const auto& h_out = cache.activations[l + 1];
            if (l + 1 < num_layers() || output_activation_)
                delta = (delta.array() * (Scalar(1) - h_out.array().square())).matrix();
            const auto& h_in = cache.activations[l];
            g.tensors[2 * l] = delta.transpose() * h_in;
            g.tensors[2 * l + 1] = delta.colwise().sum().transpose();
            if (l > 0) delta = delta * weight(l);
        }
        return g;
    }

private:
    std::vector<int> dims_;
    bool output_activation_ = false;
    ParameterSet<Scalar> params_;
    std::uint64_t generation_ = 0;
};

/// Linear classifier on features: logits = Z W^T + b with W of shape K x c.
template <typename Scalar>
struct ClassifierHead {
    ParameterSet<Scalar> params;

    ClassifierHead() = default;
    ClassifierHead(int feature_dim, int num_classes, std::uint64_t seed, double std = 0.01) {
        reset(feature_dim, num_classes, seed, std);
    }

    void reset(int feature_dim, int num_classes, std::uint64_t seed, double std = 0.01) {
        if (feature_dim <= 0 || num_classes <= 0) throw std::invalid_argument("ClassifierHead: empty shape");
        Rng rng(seed);
        params = {};
        params.add("head.weight", gaussian_matrix(num_classes, feature_dim, std, rng).template cast<Scalar>(), true);
        params.add("head.bias", Mat<Scalar>::Zero(num_classes, 1), false);
    }

    int num_classes() const { return params.tensors.empty() ? 0 : int(params.tensors[0].rows()); }
    const Mat<Scalar>& weight() const { return params.tensors.at(0); }
    const Mat<Scalar>& bias() const { return params.tensors.at(1); }

    Mat<Scalar> logits(const Eigen::Ref<const Mat<Scalar>>& features) const {
        Mat<Scalar> z = features * weight().transpose();
        z.rowwise() += bias().col(0).transpose();
        return z;
    }

    /// Returns head gradients; writes the gradient with respect to the features.
    GradientSet<Scalar> backward(const Eigen::Ref<const Mat<Scalar>>& features,
                                 const Eigen::Ref<const Mat<Scalar>>& grad_logits,
                                 Mat<Scalar>& grad_features) const {
        GradientSet<Scalar> g;
        g.tensors.push_back(grad_logits.transpose() * features);
        g.tensors.push_back(grad_logits.colwise().sum().transpose());
        grad_features = grad_logits * weight();
        return g;
    }
};

struct AdamConfig {
    double lr_initial = 3.5e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
    AdamConfig config;
    std::vector<Mat<Scalar>> m;
    std::vector<Mat<Scalar>> v;
    long step = 0;

    AdamState() = default;
    AdamState(const ParameterSet<Scalar>& p, AdamConfig cfg) : config(cfg) { reset(p); }

    void reset(const ParameterSet<Scalar>& p) {
        m.clear();
        v.clear();
        for (const auto& t : p.tensors) {
            m.push_back(Mat<Scalar>::Zero(t.rows(), t.cols()));
            v.push_back(Mat<Scalar>::Zero(t.rows(), t.cols()));
        }
        step = 0;
    }
};

/// Linearly decayed learning rate: lr_initial * (1 - position), position in [0, 1].
inline double scheduled_lr(double lr_initial, double position) { return lr_initial * (1.0 - position); }

/// Adam with bias correction at lr = lr_initial * (1 - schedule_position), plus decoupled
/// weight decay theta -= lr_initial * weight_decay * theta on blocks marked for decay. The
/// decay term is not scheduled, so at position 1 only weight decay moves the parameters.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const GradientSet<Scalar>& grads, AdamState<Scalar>& state,
               double schedule_position) {
    if (!params.congruent(grads.tensors)) throw std::invalid_argument("adam_step: gradient shapes not congruent");
    if (!params.congruent(state.m) || !params.congruent(state.v))
        throw std::invalid_argument("adam_step: optimizer state not congruent");
    if (schedule_position < 0.0 || schedule_position > 1.0)
        throw std::invalid_argument("adam_step: schedule position outside [0, 1]");
    for (std::size_t i = 0; i < grads.tensors.size(); ++i)
        if (!grads.tensors[i].allFinite())
            throw std::domain_error("adam_step: non-finite gradient in block '" + params.names[i] + "'");

    const auto& c = state.config;
    ++state.step;
    const double lr = scheduled_lr(c.lr_initial, schedule_position);
    const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& p = params.tensors[i];
        const auto& g = grads.tensors[i];
        state.m[i] = Scalar(c.beta1) * state.m[i] + Scalar(1.0 - c.beta1) * g;
        state.v[i] = Scalar(c.beta2) * state.v[i] + Scalar(1.0 - c.beta2) * g.cwiseAbs2();
        const auto m_hat = state.m[i].array() / Scalar(bc1);
        const auto v_hat = state.v[i].array() / Scalar(bc2);
        if (params.decay[i] && c.weight_decay != 0.0) p *= Scalar(1.0 - c.lr_initial * c.weight_decay);
        if (lr != 0.0) p.array() -= Scalar(lr) * m_hat / (v_hat.sqrt() + Scalar(c.epsilon));
    }
}

/// Checkpoint: text header listing named tensor shapes, then little-endian doubles
/// (column-major, tensors in header order).
void write_checkpoint(std::ostream& out, const std::vector<std::pair<std::string, const ParameterSet<double>*>>& sets);
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const ParameterSet<double>*>>& sets);
/// Reads tensors back into sets whose names and shapes must match the header.
void read_checkpoint(std::istream& in, const std::vector<std::pair<std::string, ParameterSet<double>*>>& sets);
void load_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, ParameterSet<double>*>>& sets);

/// Header-driven read that returns every tensor without a target layout.
struct CheckpointTensor {
    std::string name;
    Mat<double> value;
};
std::vector<CheckpointTensor> read_checkpoint_tensors(std::istream& in);

/// Rebuilds an Mlp from checkpoint tensors named `<prefix>.layerN.weight/bias`.
Mlp<double> mlp_from_checkpoint(const std::vector<CheckpointTensor>& tensors, const std::string& prefix);

}  // namespace s2p
