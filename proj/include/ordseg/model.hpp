#pragma once

// Small convolutional encoder-decoder: two 3x3 convs at full resolution, then
// `depth` stages of 2x average pooling + 3x3 conv (channels doubling), nearest
// upsampling with skip concatenation on the way up, and a 1x1 projection to
// K logits. depth 0 is a purely local 5x5 receptive-field network.

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/synth.hpp"

namespace ordseg {

struct ModelConfig {
    int in_channels = 1;
    int k_classes = 4;
    int base_width = 6;  // channels at full resolution; doubled per stage
    int depth = 2;       // pooling stages

    void validate() const {
        if (in_channels < 1 || base_width < 1) throw ConfigError("model channel counts must be positive");
        if (depth < 0 || depth > 4) throw ConfigError("model depth must be in 0..4");
        ClassConfig{k_classes};
    }
};

class SegModel {
public:
    SegModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        auto width = [&](int stage) { return cfg.base_width << stage; };
        Rng rng(seed);
        enc1a_ = conv_layer("enc1a", 3, cfg.in_channels, width(0), rng);
        enc1b_ = conv_layer("enc1b", 3, width(0), width(0), rng);
        for (int s = 1; s <= cfg.depth; ++s) {
            down_.push_back(conv_layer("down" + std::to_string(s), 3, width(s - 1), width(s), rng));
        }
        for (int s = cfg.depth; s >= 1; --s) {
            up_.push_back(conv_layer("up" + std::to_string(s), 3, width(s) + width(s - 1), width(s - 1), rng));
        }
        head_ = conv_layer("head", 1, width(0), cfg.k_classes, rng);
    }

    SegModel(const SegModel&) = delete;
    SegModel& operator=(const SegModel&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    std::deque<ad::Parameter>& parameters() noexcept { return params_; }
    const std::deque<ad::Parameter>& parameters() const noexcept { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// Logits [H, W, K] for one image. With `trainable` the parameters are
    /// graph leaves that receive gradients; otherwise they are constants.
    ad::Var forward(ad::Graph& g, const Image& image, bool trainable) {
        const int multiple = 1 << cfg_.depth;
        if (image.height() % multiple != 0 || image.width() % multiple != 0) {
            throw ValidationError("model input height and width must be multiples of " + std::to_string(multiple));
        }
        if (image.channels() != cfg_.in_channels) throw ValidationError("model input has the wrong channel count");
        auto leaf = [&](std::size_t idx) { return trainable ? g.parameter(params_[idx]) : g.constant(params_[idx].value); };
        auto conv = [&](ad::Var x, const Layer& l) { return ad::conv2d(x, leaf(l.weight), leaf(l.bias)); };

        ad::Var x = g.constant(ad::Tensor::from_grid(image));
        std::vector<ad::Var> skips{ad::relu(conv(ad::relu(conv(x, enc1a_)), enc1b_))};
        for (const Layer& l : down_) skips.push_back(ad::relu(conv(ad::avg_pool2(skips.back()), l)));
        ad::Var y = skips.back();
        for (std::size_t u = 0; u < up_.size(); ++u) {
            y = ad::relu(conv(ad::concat_last(ad::upsample2(y), skips[skips.size() - 2 - u]), up_[u]));
        }
        return conv(y, head_);
    }

    std::vector<ad::Tensor> snapshot() const {
        std::vector<ad::Tensor> out;
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }
    void restore(const std::vector<ad::Tensor>& values) {
        for (std::size_t n = 0; n < params_.size(); ++n) params_[n].value = values.at(n);
    }

private:
    struct Layer {
        std::size_t weight;
        std::size_t bias;
    };

    // He-normal weights, zero biases.
    Layer conv_layer(const std::string& name, int kernel, int in, int out, Rng& rng) {
        const auto k = static_cast<std::size_t>(kernel);
        ad::Tensor w(ad::Shape{k, k, static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
        const double stddev = std::sqrt(2.0 / (kernel * kernel * in));
        for (double& v : w.data()) v = stddev * rng.normal();
        params_.emplace_back(name + ".weight", std::move(w));
        params_.emplace_back(name + ".bias", ad::Tensor(ad::Shape{static_cast<std::size_t>(out)}));
        return {params_.size() - 2, params_.size() - 1};
    }

    ModelConfig cfg_;
    std::deque<ad::Parameter> params_;
    Layer enc1a_{}, enc1b_{}, head_{};
    std::vector<Layer> down_, up_;
};

/// Adam with bias correction.
class Adam {
public:
    Adam(std::deque<ad::Parameter>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value.size(), 0.0);
            v_.emplace_back(p.value.size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t n = 0; n < params_.size(); ++n) {
            auto& value = params_[n].value.data();
            const auto& grad = params_[n].grad.data();
            auto& m = m_[n];
            auto& v = v_[n];
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
                value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

private:
    std::deque<ad::Parameter>& params_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace ordseg
