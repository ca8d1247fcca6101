#pragma once

// Dense-labeling data model: grids, probability/label maps, softmax head and
// the ordinal cost matrix. Class indices are 1-based in every public accessor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ordseg/error.hpp"

namespace ordseg {

/// Row-major H x W x C array. Channels vary fastest.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, int channels = 1, T fill = T{})
        : height_(height), width_(width), channels_(channels) {
        if (height <= 0 || width <= 0 || channels <= 0) {
            throw ValidationError("grid dimensions must be positive, got " + std::to_string(height) + "x" +
                                  std::to_string(width) + "x" + std::to_string(channels));
        }
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }
    Grid(int height, int width, int channels, std::vector<T> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
        if (height <= 0 || width <= 0 || channels <= 0) {
            throw ValidationError("grid dimensions must be positive");
        }
        if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
            throw ValidationError("grid data length " + std::to_string(data_.size()) + " does not match shape " +
                                  std::to_string(height) + "x" + std::to_string(width) + "x" +
                                  std::to_string(channels));
        }
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(int i, int j, int c = 0) const noexcept {
        return (static_cast<std::size_t>(i) * width_ + j) * channels_ + c;
    }
    T& operator()(int i, int j, int c = 0) noexcept { return data_[index(i, j, c)]; }
    const T& operator()(int i, int j, int c = 0) const noexcept { return data_[index(i, j, c)]; }

    std::span<T> pixel(int i, int j) noexcept { return {data_.data() + index(i, j), static_cast<std::size_t>(channels_)}; }
    std::span<const T> pixel(int i, int j) const noexcept {
        return {data_.data() + index(i, j), static_cast<std::size_t>(channels_)};
    }

    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool same_plane(int h, int w) const noexcept { return height_ == h && width_ == w; }
    template <typename U>
    bool same_plane(const Grid<U>& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ && a.data_ == b.data_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

/// Number of ordered classes K; indices run 1..K.
class ClassConfig {
public:
    explicit ClassConfig(int k_classes) : k_(k_classes) {
        if (k_classes < 2) {
            throw ConfigError("k_classes must be >= 2, got " + std::to_string(k_classes));
        }
    }
    int k() const noexcept { return k_; }
    bool contains(int label) const noexcept { return label >= 1 && label <= k_; }

private:
    int k_;
};

inline std::string pixel_name(int i, int j) { return "(" + std::to_string(i) + "," + std::to_string(j) + ")"; }

/// Unnormalized network scores, H x W x K. All values finite.
class LogitMap {
public:
    explicit LogitMap(Grid<double> values) : values_(std::move(values)) {
        for (int i = 0; i < values_.height(); ++i) {
            for (int j = 0; j < values_.width(); ++j) {
                for (double v : values_.pixel(i, j)) {
                    if (!std::isfinite(v)) throw ValidationError("non-finite logit at pixel " + pixel_name(i, j));
                }
            }
        }
    }
    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    int classes() const noexcept { return values_.channels(); }
    const Grid<double>& grid() const noexcept { return values_; }

private:
    Grid<double> values_;
};

/// Per-pixel class distributions, H x W x K; each pixel sums to 1.
class ProbMap {
public:
    static constexpr double kSumTolerance = 1e-6;

    explicit ProbMap(Grid<double> values) : values_(std::move(values)) {
        for (int i = 0; i < values_.height(); ++i) {
            for (int j = 0; j < values_.width(); ++j) {
                double sum = 0.0;
                for (double v : values_.pixel(i, j)) {
                    if (!(v >= 0.0 && v <= 1.0)) {
                        throw ValidationError("probability outside [0,1] at pixel " + pixel_name(i, j));
                    }
                    sum += v;
                }
                if (std::abs(sum - 1.0) > kSumTolerance) {
                    throw ValidationError("probabilities at pixel " + pixel_name(i, j) + " sum to " +
                                          std::to_string(sum));
                }
            }
        }
    }

    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    int classes() const noexcept { return values_.channels(); }
    std::size_t pixels() const noexcept { return values_.pixels(); }

    /// Probability of 1-based class k at (i, j).
    double prob(int i, int j, int k) const noexcept { return values_(i, j, k - 1); }
    std::span<const double> pixel(int i, int j) const noexcept { return values_.pixel(i, j); }
    const Grid<double>& grid() const noexcept { return values_; }

private:
    Grid<double> values_;
};

/// Integer class map, H x W, entries 1..K.
class LabelMap {
public:
    explicit LabelMap(Grid<int> values) : values_(std::move(values)) {
        if (values_.channels() != 1) throw ValidationError("label map must have a single channel");
        for (int i = 0; i < values_.height(); ++i) {
            for (int j = 0; j < values_.width(); ++j) {
                if (values_(i, j) < 1) {
                    throw ValidationError("label " + std::to_string(values_(i, j)) + " < 1 at pixel " +
                                          pixel_name(i, j));
                }
            }
        }
    }
    LabelMap(int height, int width, std::vector<int> labels) : LabelMap(Grid<int>(height, width, 1, std::move(labels))) {}

    int height() const noexcept { return values_.height(); }
    int width() const noexcept { return values_.width(); }
    std::size_t pixels() const noexcept { return values_.pixels(); }
    int operator()(int i, int j) const noexcept { return values_(i, j); }
    const Grid<int>& grid() const noexcept { return values_; }

    int max_label() const noexcept { return *std::max_element(values_.data().begin(), values_.data().end()); }

    void validate(const ClassConfig& config) const {
        for (int i = 0; i < height(); ++i) {
            for (int j = 0; j < width(); ++j) {
                if (!config.contains(values_(i, j))) {
                    throw ValidationError("label " + std::to_string(values_(i, j)) + " outside 1.." +
                                          std::to_string(config.k()) + " at pixel " + pixel_name(i, j));
                }
            }
        }
    }

    friend bool operator==(const LabelMap& a, const LabelMap& b) { return a.values_ == b.values_; }

private:
    Grid<int> values_;
};

/// C(r, s) = max(0, |r - s| - 1) for 1-based r, s.
class CostMatrix {
public:
    explicit CostMatrix(const ClassConfig& config) : k_(config.k()), entries_(static_cast<std::size_t>(k_) * k_) {
        for (int r = 1; r <= k_; ++r) {
            for (int s = 1; s <= k_; ++s) {
                entries_[static_cast<std::size_t>(r - 1) * k_ + (s - 1)] = std::max(0, std::abs(r - s) - 1);
            }
        }
    }
    int k() const noexcept { return k_; }
    double operator()(int r, int s) const noexcept { return entries_[static_cast<std::size_t>(r - 1) * k_ + (s - 1)]; }
    /// Row-major K x K entries, 0-based.
    std::span<const double> entries() const noexcept { return entries_; }

private:
    int k_;
    std::vector<double> entries_;
};

inline CostMatrix cost_matrix(const ClassConfig& config) { return CostMatrix(config); }

/// Unordered class pairs (k1 < k2) with k2 - k1 > 1.
inline std::vector<std::pair<int, int>> nonadjacent_pairs(const ClassConfig& config) {
    std::vector<std::pair<int, int>> pairs;
    for (int a = 1; a <= config.k(); ++a) {
        for (int b = a + 2; b <= config.k(); ++b) pairs.emplace_back(a, b);
    }
    return pairs;
}

/// Stable softmax of one pixel's scores into `out`.
inline void softmax_pixel(std::span<const double> logits, std::span<double> out) noexcept {
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - peak);
        sum += out[k];
    }
    for (double& v : out) v /= sum;
}

inline ProbMap softmax(const LogitMap& logits) {
    const Grid<double>& in = logits.grid();
    Grid<double> out(in.height(), in.width(), in.channels());
    for (int i = 0; i < in.height(); ++i) {
        for (int j = 0; j < in.width(); ++j) softmax_pixel(in.pixel(i, j), out.pixel(i, j));
    }
    return ProbMap(std::move(out));
}

inline ProbMap one_hot(const LabelMap& labels, const ClassConfig& config) {
    labels.validate(config);
    Grid<double> out(labels.height(), labels.width(), config.k(), 0.0);
    for (int i = 0; i < labels.height(); ++i) {
        for (int j = 0; j < labels.width(); ++j) out(i, j, labels(i, j) - 1) = 1.0;
    }
    return ProbMap(std::move(out));
}

/// Per-pixel argmax; ties go to the lowest class index.
inline LabelMap decode_argmax(const ProbMap& probs) {
    Grid<int> out(probs.height(), probs.width(), 1);
    for (int i = 0; i < probs.height(); ++i) {
        for (int j = 0; j < probs.width(); ++j) {
            auto p = probs.pixel(i, j);
            out(i, j) = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
        }
    }
    return LabelMap(std::move(out));
}

/// Input image, H x W x B.
using Image = Grid<double>;

/// Images with their ground truth; all members share H, W and K.
class Batch {
public:
    Batch(std::vector<Image> images, std::vector<LabelMap> labels, ClassConfig config)
        : images_(std::move(images)), labels_(std::move(labels)), config_(config) {
        if (images_.empty()) throw ValidationError("batch must contain at least one sample");
        if (images_.size() != labels_.size()) throw ValidationError("batch images and labels differ in count");
        const int h = images_.front().height();
        const int w = images_.front().width();
        const int b = images_.front().channels();
        for (std::size_t n = 0; n < images_.size(); ++n) {
            if (!images_[n].same_plane(h, w) || images_[n].channels() != b || !labels_[n].grid().same_plane(h, w)) {
                throw ValidationError("batch member " + std::to_string(n) + " has a different shape");
            }
            labels_[n].validate(config_);
        }
    }

    std::size_t count() const noexcept { return images_.size(); }
    const ClassConfig& config() const noexcept { return config_; }
    const Image& image(std::size_t n) const { return images_.at(n); }
    const LabelMap& labels(std::size_t n) const { return labels_.at(n); }
    const std::vector<Image>& images() const noexcept { return images_; }
    const std::vector<LabelMap>& label_maps() const noexcept { return labels_; }

    Batch subset(std::span<const std::size_t> indices) const {
        std::vector<Image> imgs;
        std::vector<LabelMap> labs;
        for (std::size_t idx : indices) {
            imgs.push_back(images_.at(idx));
            labs.push_back(labels_.at(idx));
        }
        return Batch(std::move(imgs), std::move(labs), config_);
    }

private:
    std::vector<Image> images_;
    std::vector<LabelMap> labels_;
    ClassConfig config_;
};

}  // namespace ordseg
