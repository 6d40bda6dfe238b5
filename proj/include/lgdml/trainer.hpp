#pragma once

#include "lgdml/config.hpp"
#include "lgdml/dataset.hpp"
#include "lgdml/matrix.hpp"
#include "lgdml/rng.hpp"
#include "lgdml/simcore.hpp"

#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace lgdml {

/// Projection from frozen features to the unit hypersphere: affine layers with a
/// tanh between them, followed by row normalisation.
template <class T>
class EmbedderHead {
public:
    struct Layer {
        Mat<T> weight;  // out x in
        Eigen::Matrix<T, 1, Eigen::Dynamic> bias;
    };

    struct Cache {
        std::vector<Mat<T>> inputs;  // input to each layer
        Mat<T> raw;                  // pre-normalisation output
        Mat<T> out;
    };

    EmbedderHead() = default;
    explicit EmbedderHead(std::vector<Layer> layers) : layers_(std::move(layers)) {}

    /// Uniform init with bound sqrt(6 / (fan_in + fan_out)); biases zero.
    static EmbedderHead init(int in_dim, int out_dim, int hidden_width, Rng& rng) {
        std::vector<Layer> layers;
        auto make = [&](int fan_in, int fan_out) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Layer l{Mat<T>(fan_out, fan_in), Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(fan_out)};
            for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
            layers.push_back(std::move(l));
        };
        if (hidden_width > 0) {
            make(in_dim, hidden_width);
            make(hidden_width, out_dim);
        } else {
            make(in_dim, out_dim);
        }
        return EmbedderHead(std::move(layers));
    }

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    int in_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
    int out_dim() const { return static_cast<int>(layers_.back().weight.rows()); }

    Mat<T> forward(const Mat<T>& x, Cache* cache = nullptr) const {
        Mat<T> h = x;
        if (cache) cache->inputs.clear();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (cache) cache->inputs.push_back(h);
            Mat<T> z = (h * layers_[l].weight.transpose()).rowwise() + layers_[l].bias;
            if (l + 1 < layers_.size()) z = z.array().tanh();
            h = std::move(z);
        }
        Mat<T> out = normalize_rows(h).values;
        if (cache) {
            cache->raw = h;
            cache->out = out;
        }
        return out;
    }

    /// Parameter gradients for dL/d(out), in the same layout as layers().
    std::vector<Layer> backward(const Cache& cache, const Mat<T>& grad_out) const {
        std::vector<Layer> grads(layers_.size());
        Mat<T> g = normalize_rows_backward(cache.raw, grad_out);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            if (l + 1 < layers_.size()) {
                // tanh' = 1 - tanh^2, where the activation is the next layer's input.
                const auto& act = cache.inputs[l + 1];
                g = g.cwiseProduct((Mat<T>::Ones(act.rows(), act.cols()) - act.cwiseProduct(act)));
            }
            grads[l].weight = g.transpose() * cache.inputs[l];
            grads[l].bias = g.colwise().sum();
            if (l > 0) g = g * layers_[l].weight;
        }
        return grads;
    }

    /// Gradient with respect to the head input; used when the head sits on top of
    /// another trainable map.
    Mat<T> input_gradient(const Cache& cache, const Mat<T>& grad_out) const {
        Mat<T> g = normalize_rows_backward(cache.raw, grad_out);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            if (l + 1 < layers_.size()) {
                const auto& act = cache.inputs[l + 1];
                g = g.cwiseProduct((Mat<T>::Ones(act.rows(), act.cols()) - act.cwiseProduct(act)));
            }
            g = g * layers_[l].weight;
        }
        return g;
    }

private:
    std::vector<Layer> layers_;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

struct AdamHyper {
    double lr = 1e-5;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Decoupled weight decay (p -= lr * wd * p) followed by a bias-corrected Adam update.
/// The state is sized on first use.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, const AdamHyper& h) {
    if (params.size() != grads.size()) fail(ErrorCode::ShapeMismatch, "adam_step: params and grads differ in size");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.step = 0;
    }
    if (state.m.size() != params.size()) fail(ErrorCode::ShapeMismatch, "adam_step: state size mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double p = static_cast<double>(params[i]);
        const double g = static_cast<double>(grads[i]);
        p -= h.lr * h.weight_decay * p;
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        p -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
        params[i] = static_cast<T>(p);
    }
}

/// Class-balanced batch: batch_size / samples_per_class distinct classes, each with
/// samples_per_class indices (drawn with replacement only when a class is too small).
std::vector<int> sample_batch(const Labels& labels, int batch_size, int samples_per_class, Rng& rng);

struct EpochRecord {
    int epoch = 0;
    double total_loss = 0.0;
    double dml_loss = 0.0;
    double match_loss = 0.0;
    double val_recall_at_1 = 0.0;  // NaN without a validation split
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

struct Checkpoint {
    TrainConfig config;
    EmbedderHead<float> head;
    double margin_beta = 0.0;
    int epoch = 0;  // epoch the snapshot was taken after; 0 = initialisation
};

struct TrainResult {
    Checkpoint best;
    Checkpoint initial;
    Checkpoint last;
    TrainHistory history;
};

/// Throws GuidanceInputMissing when the bundle lacks what the guidance mode needs.
void check_guidance_inputs(const TrainConfig& cfg, const DatasetBundle& data);

TrainResult train(const TrainConfig& cfg, const DatasetBundle& data);

/// Unit-norm embeddings of `features` under a head.
MatD embed(const EmbedderHead<float>& head, const MatD& features);

void write_history_csv(std::ostream& os, const TrainHistory& history);

// Checkpoint file: "LGCK", u16 version, u16 reserved, u64 metadata length, the
// metadata JSON (config echo and head shape), u32 matrix count, then every head
// weight and bias as an embedded LGDM f32 matrix.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lgdml
