#pragma once

// Training protocol: CE + lambda * ordinal objective, Adam, early stopping on
// validation loss with best-parameter restore, a fixed 20% test split with
// k-fold rotation of the remainder, and grid runs aggregated into intervals.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/error.hpp"
#include "ordseg/losses_pointwise.hpp"
#include "ordseg/losses_spatial.hpp"
#include "ordseg/metrics.hpp"
#include "ordseg/model.hpp"
#include "ordseg/objective.hpp"
#include "ordseg/stats.hpp"
#include "ordseg/synth.hpp"

namespace ordseg {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 16;
    int max_epochs = 200;
    int patience = 15;
    std::vector<double> lambda_grid{0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0};
    LossSelection loss;
    int folds = 5;
    std::uint64_t seed = 0;
    double min_improvement = 1e-6;
    ModelConfig model;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size <= 0 || max_epochs <= 0 || patience <= 0 || folds <= 0) {
            throw ConfigError("batch_size, max_epochs, patience and folds must be positive");
        }
        if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
        loss.validate();
    }
};

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// A shuffled round(20%) test set shared by all folds; the rest is rotated
/// so fold f validates on round(rest / folds) consecutive shuffled items
/// starting at floor(f * rest / folds), wrapping around.
inline std::vector<FoldSplit> kfold_split(std::size_t count, int folds, std::uint64_t seed) {
    if (folds < 2) throw PartitionError("cross-validation needs at least 2 folds");
    if (count < static_cast<std::size_t>(2 * folds)) {
        throw PartitionError("need at least " + std::to_string(2 * folds) + " samples for " + std::to_string(folds) +
                             " folds, got " + std::to_string(count));
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t n = count - 1; n > 0; --n) std::swap(order[n], order[static_cast<std::size_t>(rng.below(n + 1))]);

    const auto test_size = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(count)));
    const std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<long>(test_size));
    const std::vector<std::size_t> rest(order.begin() + static_cast<long>(test_size), order.end());
    const std::size_t m = rest.size();
    const auto val_size = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(m) / folds)));

    std::vector<FoldSplit> splits;
    for (int f = 0; f < folds; ++f) {
        FoldSplit split;
        split.test = test;
        const std::size_t start = static_cast<std::size_t>(f) * m / static_cast<std::size_t>(folds);
        std::vector<bool> in_val(m, false);
        for (std::size_t j = 0; j < val_size; ++j) in_val[(start + j) % m] = true;
        for (std::size_t j = 0; j < m; ++j) (in_val[j] ? split.validation : split.train).push_back(rest[j]);
        splits.push_back(std::move(split));
    }
    return splits;
}

struct RunRecord {
    std::string key;
    int fold = 0;
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    int selected_epoch = 0;  // 1-based
    int epochs_run = 0;
    MetricReport test;
    double test_mean_variance = 0.0;  // mean per-pixel ordinal variance on the test set
    double wall_clock_seconds = 0.0;
};

/// Mean objective over a set, parameters held constant.
inline double evaluate_objective(SegModel& model, const Batch& data, const LossSelection& sel) {
    double total = 0.0;
    for (std::size_t n = 0; n < data.count(); ++n) {
        ad::Graph g;
        total += objective(model.forward(g, data.image(n), false), data.labels(n), sel).item();
    }
    return total / static_cast<double>(data.count());
}

inline ProbMap predict(SegModel& model, const Image& image) {
    ad::Graph g;
    return ProbMap(ad::softmax_last(model.forward(g, image, false)).value().to_grid());
}

/// Mean test metrics over images (percentages) and mean ordinal variance.
inline std::pair<MetricReport, double> evaluate_model(SegModel& model, const Batch& data) {
    MetricReport mean;
    mean.up_percent = 0.0;
    mean.per_class_dice.assign(static_cast<std::size_t>(data.config().k()), 0.0);
    double variance = 0.0;
    for (std::size_t n = 0; n < data.count(); ++n) {
        const ProbMap probs = predict(model, data.image(n));
        const MetricReport r = evaluate_probs(probs, data.labels(n));
        mean.dice_percent += r.dice_percent;
        mean.cs_percent += r.cs_percent;
        *mean.up_percent += *r.up_percent;
        for (std::size_t c = 0; c < r.per_class_dice.size(); ++c) mean.per_class_dice[c] += r.per_class_dice[c];
        double v = 0.0;
        for (int i = 0; i < probs.height(); ++i) {
            for (int j = 0; j < probs.width(); ++j) v += ordinal_variance(probs.pixel(i, j));
        }
        variance += v / static_cast<double>(probs.pixels());
    }
    const double n = static_cast<double>(data.count());
    mean.dice_percent /= n;
    mean.cs_percent /= n;
    *mean.up_percent /= n;
    for (double& d : mean.per_class_dice) d /= n;
    return {mean, variance / n};
}

/// One Adam step on the mean objective over `indices` of `data`.
inline double train_step(SegModel& model, Adam& opt, const Batch& data, std::span<const std::size_t> indices,
                         const LossSelection& sel) {
    opt.zero_grad();
    double total = 0.0;
    const double weight = 1.0 / static_cast<double>(indices.size());
    for (std::size_t idx : indices) {
        ad::Graph g;
        ad::Var loss = objective(model.forward(g, data.image(idx), true), data.labels(idx), sel);
        total += loss.item();
        g.backward(ad::scale(loss, weight));
    }
    opt.step();
    return total * weight;
}

/// Patience rule on validation loss. An epoch counts as an improvement only
/// when it beats the best so far by more than `min_improvement`.
class EarlyStopping {
public:
    EarlyStopping(int patience, double min_improvement) : patience_(patience), min_improvement_(min_improvement) {}

    /// Records epoch `epoch` (1-based); true when training should stop.
    bool observe(int epoch, double validation_loss) {
        if (validation_loss < best_ - min_improvement_) {
            best_ = validation_loss;
            best_epoch_ = epoch;
            improved_ = true;
            return false;
        }
        improved_ = false;
        return epoch - best_epoch_ >= patience_;
    }

    bool improved() const noexcept { return improved_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best() const noexcept { return best_; }

private:
    int patience_;
    double min_improvement_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    bool improved_ = false;
};

/// Trains in place; on return the model holds the best-validation parameters.
inline RunRecord train(SegModel& model, const Batch& train_set, const Batch& validation_set, const TrainConfig& cfg) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    RunRecord record;
    record.key = cfg.loss.key();
    Adam opt(model.parameters(), cfg.learning_rate);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.count());
    std::iota(order.begin(), order.end(), std::size_t{0});

    EarlyStopping stopper(cfg.patience, cfg.min_improvement);
    std::vector<ad::Tensor> best_params = model.snapshot();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t n = order.size() - 1; n > 0; --n) std::swap(order[n], order[static_cast<std::size_t>(rng.below(n + 1))]);
        double epoch_loss = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                const std::span<const std::size_t> chunk(order.data() + start, end - start);
                epoch_loss += train_step(model, opt, train_set, chunk, cfg.loss) * static_cast<double>(chunk.size());
            }
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        const double val = evaluate_objective(model, validation_set, cfg.loss);
        if (!std::isfinite(val)) throw TrainingError("validation loss is not finite at epoch " + std::to_string(epoch));
        record.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        record.validation_loss.push_back(val);
        record.epochs_run = epoch;
        const bool stop = stopper.observe(epoch, val);
        if (stopper.improved()) {
            record.selected_epoch = epoch;
            best_params = model.snapshot();
        }
        if (stop) break;
    }
    model.restore(best_params);
    record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return record;
}

/// Seed for model init and shuffling of fold f; shared across grid points.
inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    return seed * 1000003ULL + static_cast<std::uint64_t>(fold) * 7919ULL + 1ULL;
}

inline RunRecord run_fold(const Batch& data, const FoldSplit& split, int fold, const TrainConfig& cfg) {
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed(cfg.seed, fold);
    ModelConfig mc = cfg.model;
    mc.in_channels = data.image(0).channels();
    mc.k_classes = data.config().k();
    SegModel model(mc, fold_cfg.seed);
    RunRecord record = train(model, data.subset(split.train), data.subset(split.validation), fold_cfg);
    record.fold = fold;
    auto [report, variance] = evaluate_model(model, data.subset(split.test));
    record.test = report;
    record.test_mean_variance = variance;
    return record;
}

struct GridRow {
    LossSelection selection;
    std::vector<RunRecord> folds;
    Interval dice, cs, up;
    // Against the first row; CS is compared on negated values (lower is better).
    std::optional<ComparisonVerdict> dice_vs_baseline, cs_vs_baseline, up_vs_baseline;
};

/// Runs `jobs` tasks at a time; results land in index order.
inline void run_parallel(std::size_t tasks, int jobs, const std::function<void(std::size_t)>& body) {
    if (jobs <= 1 || tasks <= 1) {
        for (std::size_t t = 0; t < tasks; ++t) body(t);
        return;
    }
    std::vector<std::exception_ptr> errors(tasks);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t t = next++; t < tasks; t = next++) {
                try {
                    body(t);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline std::vector<GridRow> grid_run(const Batch& data, const std::vector<LossSelection>& grid, const TrainConfig& base,
                                     int jobs = 1, double rho_threshold = kDefaultRhoThreshold) {
    if (grid.empty()) throw UsageError("grid_run needs at least one grid point");
    base.validate();
    for (const auto& sel : grid) sel.validate();
    const auto splits = kfold_split(data.count(), base.folds, base.seed);
    const std::size_t nf = splits.size();

    std::vector<GridRow> rows(grid.size());
    for (std::size_t r = 0; r < grid.size(); ++r) {
        rows[r].selection = grid[r];
        rows[r].folds.resize(nf);
    }
    run_parallel(grid.size() * nf, jobs, [&](std::size_t task) {
        const std::size_t r = task / nf, f = task % nf;
        TrainConfig cfg = base;
        cfg.loss = grid[r];
        rows[r].folds[f] = run_fold(data, splits[f], static_cast<int>(f), cfg);
    });

    for (auto& row : rows) {
        std::vector<double> dice, cs, up;
        for (const auto& rec : row.folds) {
            dice.push_back(rec.test.dice_percent);
            cs.push_back(rec.test.cs_percent);
            up.push_back(*rec.test.up_percent);
        }
        row.dice = fold_interval(dice);
        row.cs = fold_interval(cs);
        row.up = fold_interval(up);
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const GridRow& b = rows.front();
        GridRow& row = rows[r];
        row.dice_vs_baseline = compare_intervals(row.dice, b.dice, rho_threshold);
        row.up_vs_baseline = compare_intervals(row.up, b.up, rho_threshold);
        row.cs_vs_baseline = compare_intervals({-row.cs.mu, row.cs.sigma, row.cs.n_folds},
                                               {-b.cs.mu, b.cs.sigma, b.cs.n_folds}, rho_threshold);
    }
    return rows;
}

}  // namespace ordseg
