#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ihd/autodiff.hpp"
#include "ihd/config.hpp"
#include "ihd/data.hpp"
#include "ihd/ensemble.hpp"
#include "ihd/model.hpp"
#include "ihd/rng.hpp"

namespace ihd {

enum class WeightMode { static_mode, dynamic_mode, both_mode };
enum class AugmentKind { none, weak, strong };

struct AugmentPolicy {
    AugmentKind kind = AugmentKind::weak;
    double crop_lo = 0.8, crop_hi = 1.2;  // area scale range of the shared crop
    bool hflip = true, vflip = true;
    double rotate_deg = 15.0;             // strong only, uniform +-range
    double blur_lo = 0.1, blur_hi = 1.5;  // strong only, gaussian sigma range
    double distort_mag = 0.03;            // strong only, fraction of the frame

    static AugmentPolicy none();
    static AugmentPolicy weak();
    static AugmentPolicy strong();
    void validate() const;
};

struct TrainConfig {
    std::size_t total = 2000;
    std::size_t warmup = 300;
    double peak_lr = 0.001;
    WeightMode weight_mode = WeightMode::static_mode;
    std::array<double, kNumClasses> static_weights = {1, 1, 1, 1, 1, 2};  // 2 on "any"
    double dyn_lo = 0.5, dyn_hi = 5.0;
    double dyn_exponent = 0.5;
    double lambda_u = 1.0;
    std::uint64_t seed = 0;
    std::size_t val_interval = 100;
    AugmentPolicy augment;                // supervised-step policy
    std::size_t unlabeled_ratio = 1;      // pseudo steps per labeled step

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& cfg);
    void to_config(KeyValueConfig& cfg) const;
};

// static -> the configured weights; dynamic -> clamp((mean(p)/p_c)^alpha)
// renormalized to mean 1, p_c smoothed as (pos_c + 1)/(n + 2); both -> product.
std::array<double, kNumClasses> class_weights(WeightMode mode,
                                              const std::array<double, kNumClasses>& static_weights,
                                              const std::array<std::size_t, kNumClasses>& positive_counts,
                                              std::size_t num_slices, double lo, double hi, double exponent);

struct LossBundle {
    double l1 = 0.0, l2 = 0.0, lu = 0.0, total = 0.0;
    NodePtr root;  // scalar graph node for the total
};

// L1 from the auxiliary head when present, L2 from the main head.
LossBundle supervised_loss(const NodePtr& aux_logits, const NodePtr& main_logits, const DenseArray& targets,
                           const std::vector<double>& weights);

double lr_at(std::size_t iteration, const TrainConfig& config);

SeriesBatch apply_augment(const SeriesBatch& batch, const AugmentPolicy& policy, Rng& rng);

// targets for the training heads: all six classes, or the five subtypes in
// logical_any mode
DenseArray label_targets(const std::vector<LabelVector>& labels, bool logical_any);

LossBundle train_step(Model& model, const SeriesBatch& batch, const std::vector<LabelVector>& labels,
                      const TrainConfig& config, std::size_t iteration, Rng& rng);

struct HistoryRow {
    std::size_t iteration = 0;
    double l1 = 0.0, l2 = 0.0, lu = 0.0, total = 0.0, lr = 0.0;
};

void save_history(const std::string& path, const std::vector<HistoryRow>& rows);

struct FitResult {
    std::vector<HistoryRow> history;
    double best_val_loss = -1.0;      // -1 when no validation series
    std::size_t best_iteration = 0;
    double final_val_loss = -1.0;
};

// One series per optimization step, shuffled epochs; pseudo-labeled series
// (when given) alternate with labeled ones and train on the strong policy.
FitResult fit(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& train_series,
              const std::vector<SeriesRecord>& val_series, const std::vector<SeriesRecord>& pseudo_series,
              const TrainConfig& config);

// Clean-forward predictions for a set of series.
PredictionTable predict_series(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& series);

// weighted_logloss of clean predictions against the series' labels
double evaluate_model(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& series);

}  // namespace ihd
