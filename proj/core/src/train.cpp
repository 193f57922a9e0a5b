#include "ihd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "ihd/errors.hpp"
#include "ihd/ssl.hpp"

namespace ihd {

// ---- policies & config ----

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.kind = AugmentKind::none;
    return p;
}

AugmentPolicy AugmentPolicy::weak() { return AugmentPolicy{}; }

AugmentPolicy AugmentPolicy::strong() {
    AugmentPolicy p;
    p.kind = AugmentKind::strong;
    return p;
}

void AugmentPolicy::validate() const {
    if (!(crop_lo > 0.0 && crop_lo <= crop_hi)) throw ValidationError("augment: bad crop scale range");
    if (rotate_deg < 0.0) throw ValidationError("augment: negative rotation range");
    if (!(blur_lo >= 0.0 && blur_lo <= blur_hi)) throw ValidationError("augment: bad blur sigma range");
    if (distort_mag < 0.0) throw ValidationError("augment: negative distortion magnitude");
}

void TrainConfig::validate() const {
    if (total > 0 && warmup >= total) throw ValidationError("train: warmup must be below total iterations");
    if (peak_lr < 0.0) throw ValidationError("train: negative peak lr");
    if (lambda_u < 0.0) throw ValidationError("train: lambda_u must be >= 0");
    for (double w : static_weights) {
        if (w <= 0.0) throw ValidationError("train: static weights must be positive");
    }
    if (!(dyn_lo > 0.0 && dyn_lo <= dyn_hi)) throw ValidationError("train: bad dynamic clamp range");
    if (dyn_exponent < 0.0) throw ValidationError("train: negative dynamic exponent");
    augment.validate();
}

namespace {

WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "static") return WeightMode::static_mode;
    if (s == "dynamic") return WeightMode::dynamic_mode;
    if (s == "both") return WeightMode::both_mode;
    throw ConfigError("train.weight_mode must be static, dynamic or both, got " + s);
}

const char* weight_mode_name(WeightMode m) {
    switch (m) {
        case WeightMode::static_mode: return "static";
        case WeightMode::dynamic_mode: return "dynamic";
        default: return "both";
    }
}

AugmentKind augment_kind_from_string(const std::string& s) {
    if (s == "none") return AugmentKind::none;
    if (s == "weak") return AugmentKind::weak;
    if (s == "strong") return AugmentKind::strong;
    throw ConfigError("train.augment must be none, weak or strong, got " + s);
}

const char* augment_kind_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::none: return "none";
        case AugmentKind::weak: return "weak";
        default: return "strong";
    }
}

}  // namespace

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
    TrainConfig t;
    t.total = cfg.get_size("train.total", t.total);
    t.warmup = cfg.get_size("train.warmup", t.warmup);
    t.peak_lr = cfg.get_double("train.peak_lr", t.peak_lr);
    t.weight_mode = weight_mode_from_string(cfg.get_string("train.weight_mode", "static"));
    const auto weights = cfg.get_double_list("train.static_weights",
                                             {t.static_weights.begin(), t.static_weights.end()});
    if (weights.size() != kNumClasses) throw ConfigError("train.static_weights needs 6 entries");
    std::copy(weights.begin(), weights.end(), t.static_weights.begin());
    t.dyn_lo = cfg.get_double("train.dyn_lo", t.dyn_lo);
    t.dyn_hi = cfg.get_double("train.dyn_hi", t.dyn_hi);
    t.dyn_exponent = cfg.get_double("train.dyn_exponent", t.dyn_exponent);
    t.lambda_u = cfg.get_double("train.lambda_u", t.lambda_u);
    t.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    t.val_interval = cfg.get_size("train.val_interval", t.val_interval);
    t.augment.kind = augment_kind_from_string(cfg.get_string("train.augment", "weak"));
    t.augment.crop_lo = cfg.get_double("train.aug_crop_lo", t.augment.crop_lo);
    t.augment.crop_hi = cfg.get_double("train.aug_crop_hi", t.augment.crop_hi);
    t.augment.hflip = cfg.get_bool("train.aug_hflip", t.augment.hflip);
    t.augment.vflip = cfg.get_bool("train.aug_vflip", t.augment.vflip);
    t.augment.rotate_deg = cfg.get_double("train.aug_rotate_deg", t.augment.rotate_deg);
    t.augment.blur_lo = cfg.get_double("train.aug_blur_lo", t.augment.blur_lo);
    t.augment.blur_hi = cfg.get_double("train.aug_blur_hi", t.augment.blur_hi);
    t.augment.distort_mag = cfg.get_double("train.aug_distort", t.augment.distort_mag);
    t.unlabeled_ratio = cfg.get_size("train.unlabeled_ratio", t.unlabeled_ratio);
    t.validate();
    return t;
}

void TrainConfig::to_config(KeyValueConfig& cfg) const {
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    cfg.set("train.total", std::to_string(total));
    cfg.set("train.warmup", std::to_string(warmup));
    cfg.set("train.peak_lr", fmt(peak_lr));
    cfg.set("train.weight_mode", weight_mode_name(weight_mode));
    std::string sw;
    for (std::size_t i = 0; i < kNumClasses; ++i) sw += (i ? "," : "") + fmt(static_weights[i]);
    cfg.set("train.static_weights", sw);
    cfg.set("train.dyn_lo", fmt(dyn_lo));
    cfg.set("train.dyn_hi", fmt(dyn_hi));
    cfg.set("train.dyn_exponent", fmt(dyn_exponent));
    cfg.set("train.lambda_u", fmt(lambda_u));
    cfg.set("seed", std::to_string(seed));
    cfg.set("train.val_interval", std::to_string(val_interval));
    cfg.set("train.augment", augment_kind_name(augment.kind));
    cfg.set("train.aug_crop_lo", fmt(augment.crop_lo));
    cfg.set("train.aug_crop_hi", fmt(augment.crop_hi));
    cfg.set("train.aug_hflip", augment.hflip ? "1" : "0");
    cfg.set("train.aug_vflip", augment.vflip ? "1" : "0");
    cfg.set("train.aug_rotate_deg", fmt(augment.rotate_deg));
    cfg.set("train.aug_blur_lo", fmt(augment.blur_lo));
    cfg.set("train.aug_blur_hi", fmt(augment.blur_hi));
    cfg.set("train.aug_distort", fmt(augment.distort_mag));
    cfg.set("train.unlabeled_ratio", std::to_string(unlabeled_ratio));
}

// ---- class weights ----

std::array<double, kNumClasses> class_weights(WeightMode mode,
                                              const std::array<double, kNumClasses>& static_weights,
                                              const std::array<std::size_t, kNumClasses>& positive_counts,
                                              std::size_t num_slices, double lo, double hi, double exponent) {
    for (double w : static_weights) {
        if (w <= 0.0) throw ValidationError("class_weights: static weights must be positive");
    }
    if (mode == WeightMode::static_mode) return static_weights;

    std::array<double, kNumClasses> p{};
    double mean_p = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        p[c] = (static_cast<double>(positive_counts[c]) + 1.0) / (static_cast<double>(num_slices) + 2.0);
        mean_p += p[c];
    }
    mean_p /= static_cast<double>(kNumClasses);

    std::array<double, kNumClasses> dyn{};
    double mean_w = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        dyn[c] = std::clamp(std::pow(mean_p / p[c], exponent), lo, hi);
        mean_w += dyn[c];
    }
    mean_w /= static_cast<double>(kNumClasses);
    for (double& w : dyn) w /= mean_w;

    if (mode == WeightMode::dynamic_mode) return dyn;
    std::array<double, kNumClasses> both{};
    for (std::size_t c = 0; c < kNumClasses; ++c) both[c] = static_weights[c] * dyn[c];
    return both;
}

// ---- losses ----

LossBundle supervised_loss(const NodePtr& aux_logits, const NodePtr& main_logits, const DenseArray& targets,
                           const std::vector<double>& weights) {
    if (!main_logits) throw ValidationError("supervised_loss: missing main logits");
    LossBundle bundle;
    const NodePtr l2 = bce_with_logits(main_logits, targets, weights);
    bundle.l2 = l2->value[0];
    if (aux_logits) {
        const NodePtr l1 = bce_with_logits(aux_logits, targets, weights);
        bundle.l1 = l1->value[0];
        bundle.root = add(l1, l2);
    } else {
        bundle.root = l2;
    }
    bundle.total = bundle.l1 + bundle.l2;
    return bundle;
}

double lr_at(std::size_t iteration, const TrainConfig& config) {
    if (iteration > config.total) {
        throw ValidationError("lr_at: iteration " + std::to_string(iteration) + " beyond total " +
                              std::to_string(config.total));
    }
    if (config.total == 0) return 0.0;
    if (iteration < config.warmup) {
        return config.peak_lr * static_cast<double>(iteration) / static_cast<double>(config.warmup);
    }
    const double progress = static_cast<double>(iteration - config.warmup) /
                            static_cast<double>(config.total - config.warmup);
    return config.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---- augmentation ----

namespace {

double sample_plane(const double* img, std::size_t h, std::size_t w, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const double ty = y - fy, tx = x - fx;
    const long y0 = std::clamp(static_cast<long>(fy), 0L, static_cast<long>(h) - 1);
    const long y1 = std::clamp(static_cast<long>(fy) + 1, 0L, static_cast<long>(h) - 1);
    const long x0 = std::clamp(static_cast<long>(fx), 0L, static_cast<long>(w) - 1);
    const long x1 = std::clamp(static_cast<long>(fx) + 1, 0L, static_cast<long>(w) - 1);
    const double a = img[y0 * w + x0] * (1.0 - tx) + img[y0 * w + x1] * tx;
    const double b = img[y1 * w + x0] * (1.0 - tx) + img[y1 * w + x1] * tx;
    return a * (1.0 - ty) + b * ty;
}

// 4x4 coarse field, bilinearly upsampled, cell centers at (i+0.5)/4
double coarse_field(const std::array<double, 16>& f, double y, double x, std::size_t h, std::size_t w) {
    const double cy = (y + 0.5) / static_cast<double>(h) * 4.0 - 0.5;
    const double cx = (x + 0.5) / static_cast<double>(w) * 4.0 - 0.5;
    return sample_plane(f.data(), 4, 4, cy, cx);
}

void gaussian_blur_plane(double* plane, std::size_t h, std::size_t w, double sigma) {
    if (sigma <= 0.0) return;
    const long r = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * r + 1);
    double sum = 0.0;
    for (long i = -r; i <= r; ++i) {
        kernel[i + r] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        sum += kernel[i + r];
    }
    for (double& k : kernel) k /= sum;
    std::vector<double> tmp(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = -r; i <= r; ++i) {
                const long xx = std::clamp(static_cast<long>(x) + i, 0L, static_cast<long>(w) - 1);
                acc += kernel[i + r] * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = -r; i <= r; ++i) {
                const long yy = std::clamp(static_cast<long>(y) + i, 0L, static_cast<long>(h) - 1);
                acc += kernel[i + r] * tmp[yy * w + x];
            }
            plane[y * w + x] = acc;
        }
    }
}

}  // namespace

SeriesBatch apply_augment(const SeriesBatch& batch, const AugmentPolicy& policy, Rng& rng) {
    policy.validate();
    if (policy.kind == AugmentKind::none) return batch;

    const std::size_t h = batch.height, w = batch.width;
    const bool strong = policy.kind == AugmentKind::strong;

    // one shared draw set for the whole series
    const double u = rng.uniform(policy.crop_lo, policy.crop_hi);
    const double side_h = static_cast<double>(h) * std::sqrt(u);
    const double side_w = static_cast<double>(w) * std::sqrt(u);
    const double ty = rng.uniform(std::min(0.0, h - side_h), std::max(0.0, h - side_h));
    const double tx = rng.uniform(std::min(0.0, w - side_w), std::max(0.0, w - side_w));
    const bool fh = policy.hflip && rng.bernoulli(0.5);
    const bool fv = policy.vflip && rng.bernoulli(0.5);
    double theta = 0.0, sigma = 0.0;
    std::array<double, 16> field_y{}, field_x{};
    bool distort = false;
    if (strong) {
        theta = rng.uniform(-policy.rotate_deg, policy.rotate_deg) * 3.14159265358979323846 / 180.0;
        sigma = rng.uniform(policy.blur_lo, policy.blur_hi);
        if (policy.distort_mag > 0.0) {
            distort = true;
            const double mag = policy.distort_mag * static_cast<double>(h);
            for (double& v : field_y) v = rng.uniform(-mag, mag);
            for (double& v : field_x) v = rng.uniform(-mag, mag);
        }
    }

    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cosT = std::cos(theta), sinT = std::sin(theta);
    const bool rotate = strong && theta != 0.0;

    SeriesBatch out = batch;
    for (std::size_t n = 0; n < batch.num_slices; ++n) {
        for (std::size_t c = 0; c < batch.channels; ++c) {
            const double* src = batch.image(n) + c * h * w;
            double* dst = out.image(n) + c * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double yd = static_cast<double>(y), xd = static_cast<double>(x);
                    if (distort) {
                        yd += coarse_field(field_y, yd, xd, h, w);
                        xd += coarse_field(field_x, yd, xd, h, w);
                    }
                    if (rotate) {
                        const double ry = yd - cy, rx = xd - cx;
                        yd = cy + ry * cosT - rx * sinT;
                        xd = cx + ry * sinT + rx * cosT;
                    }
                    if (fv) yd = static_cast<double>(h) - 1.0 - yd;
                    if (fh) xd = static_cast<double>(w) - 1.0 - xd;
                    const double ys = ty + (yd + 0.5) * side_h / static_cast<double>(h) - 0.5;
                    const double xs = tx + (xd + 0.5) * side_w / static_cast<double>(w) - 0.5;
                    dst[y * w + x] = sample_plane(src, h, w, ys, xs);
                }
            }
            if (strong) gaussian_blur_plane(dst, h, w, sigma);
        }
    }
    return out;
}

// ---- steps and the loop ----

DenseArray label_targets(const std::vector<LabelVector>& labels, bool logical_any) {
    const std::size_t cols = logical_any ? kNumClasses - 1 : kNumClasses;
    DenseArray targets({labels.size(), cols}, 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        for (std::size_t c = 0; c < cols; ++c) targets.at2(n, c) = labels[n][c];
    }
    return targets;
}

namespace {

std::vector<double> step_weights(const Model& model, const std::vector<LabelVector>& labels,
                                 const TrainConfig& config) {
    std::array<std::size_t, kNumClasses> pos{};
    for (const LabelVector& l : labels) {
        for (std::size_t c = 0; c < kNumClasses; ++c) pos[c] += static_cast<std::size_t>(l[c]);
    }
    const auto weights = class_weights(config.weight_mode, config.static_weights, pos, labels.size(),
                                       config.dyn_lo, config.dyn_hi, config.dyn_exponent);
    const std::size_t cols = model.config.head_outputs();
    return std::vector<double>(weights.begin(), weights.begin() + cols);
}

}  // namespace

LossBundle train_step(Model& model, const SeriesBatch& batch, const std::vector<LabelVector>& labels,
                      const TrainConfig& config, std::size_t iteration, Rng& rng) {
    if (labels.size() != batch.num_slices) {
        throw ShapeError("train_step: " + std::to_string(labels.size()) + " label rows for " +
                         std::to_string(batch.num_slices) + " slices");
    }
    const SeriesBatch augmented = apply_augment(batch, config.augment, rng);
    const DenseArray targets = label_targets(labels, model.config.logical_any);
    const std::vector<double> weights = step_weights(model, labels, config);

    const ForwardOutput fwd = model_forward(model, augmented);
    LossBundle bundle = supervised_loss(fwd.aux_logits, fwd.main_logits, targets, weights);
    if (!std::isfinite(bundle.total)) {
        throw TrainingError("iteration " + std::to_string(iteration) + ": non-finite loss");
    }
    backward(bundle.root);
    sgd_update(model.param_nodes(), lr_at(iteration, config));
    return bundle;
}

void save_history(const std::string& path, const std::vector<HistoryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "iteration,L1,L2,Lu,total,lr\n";
    char buf[160];
    for (const HistoryRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.l1, r.l2, r.lu,
                      r.total, r.lr);
        out << buf;
    }
    if (!out) throw IoError("short write to " + path);
}

PredictionTable predict_series(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& series) {
    PredictionTable table;
    for (const SeriesRecord& rec : series) {
        const auto probs = predict(model, store.batch(rec.series_id));
        for (std::size_t s = 0; s < probs.size(); ++s) table.set(rec.series_id, s, probs[s]);
    }
    return table;
}

double evaluate_model(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& series) {
    if (series.empty()) throw ValidationError("evaluate_model: no series");
    PredictionTable preds;
    TruthTable truth;
    for (const SeriesRecord& rec : series) {
        if (!rec.has_labels) throw DataError("evaluate_model: series " + rec.series_id + " has no labels");
        const auto probs = predict(model, store.batch(rec.series_id));
        if (probs.size() != rec.labels.size()) {
            throw DataError("evaluate_model: label/slice count mismatch for " + rec.series_id);
        }
        for (std::size_t s = 0; s < probs.size(); ++s) {
            preds.set(rec.series_id, s, probs[s]);
            truth[{rec.series_id, s}] = rec.labels[s];
        }
    }
    return weighted_logloss(preds, truth);
}

namespace {

// shuffled-epoch cursor over a series pool
class EpochCursor {
  public:
    EpochCursor(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(order_);
    }
    std::size_t next() {
        if (pos_ == order_.size()) {
            rng_.shuffle(order_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

  private:
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    Rng rng_;
};

}  // namespace

FitResult fit(Model& model, SeriesStore& store, const std::vector<SeriesRecord>& train_series,
              const std::vector<SeriesRecord>& val_series, const std::vector<SeriesRecord>& pseudo_series,
              const TrainConfig& config) {
    config.validate();
    if (train_series.empty()) throw ConfigError("fit: empty training manifest");
    for (const SeriesRecord& rec : train_series) {
        if (!rec.has_labels) throw DataError("fit: unlabeled series " + rec.series_id + " in the training set");
    }
    for (const SeriesRecord& rec : pseudo_series) {
        if (!rec.has_labels) throw DataError("fit: pseudo series " + rec.series_id + " carries no labels");
    }

    FitResult result;
    if (config.total == 0) {
        if (!val_series.empty()) result.final_val_loss = evaluate_model(model, store, val_series);
        return result;
    }

    const bool use_pseudo = !pseudo_series.empty() && config.lambda_u > 0.0 && config.unlabeled_ratio > 0;
    const std::size_t cycle = 1 + (use_pseudo ? config.unlabeled_ratio : 0);
    AugmentPolicy strong_policy = config.augment;
    if (strong_policy.kind != AugmentKind::none) strong_policy.kind = AugmentKind::strong;

    EpochCursor labeled_cursor(train_series.size(), derive_seed(config.seed, "labeled-epochs"));
    EpochCursor pseudo_cursor(std::max<std::size_t>(pseudo_series.size(), 1),
                              derive_seed(config.seed, "pseudo-epochs"));

    std::vector<DenseArray> best_params;
    const std::uint64_t step_root = derive_seed(config.seed, "step");
    result.history.reserve(config.total);
    for (std::size_t i = 0; i < config.total; ++i) {
        Rng step_rng(derive_seed(step_root, i));
        const double lr = lr_at(i, config);
        LossBundle bundle;
        if (!use_pseudo || i % cycle == 0) {
            const SeriesRecord& rec = train_series[labeled_cursor.next()];
            bundle = train_step(model, store.batch(rec.series_id), rec.labels, config, i, step_rng);
        } else {
            const SeriesRecord& rec = pseudo_series[pseudo_cursor.next()];
            const std::vector<double> weights = step_weights(model, rec.labels, config);
            bundle = unlabeled_loss(model, store.batch(rec.series_id), rec.labels, strong_policy, weights,
                                    step_rng);
            bundle.total = config.lambda_u * bundle.lu;
            if (!std::isfinite(bundle.total)) {
                throw TrainingError("iteration " + std::to_string(i) + ": non-finite unlabeled loss");
            }
            backward(config.lambda_u == 1.0 ? bundle.root : scale(bundle.root, config.lambda_u));
            sgd_update(model.param_nodes(), lr);
        }
        result.history.push_back({i, bundle.l1, bundle.l2, bundle.lu, bundle.total, lr});

        const bool at_end = i + 1 == config.total;
        if (!val_series.empty() && config.val_interval > 0 &&
            ((i + 1) % config.val_interval == 0 || at_end)) {
            const double v = evaluate_model(model, store, val_series);
            result.final_val_loss = v;
            if (result.best_val_loss < 0.0 || v < result.best_val_loss) {
                result.best_val_loss = v;
                result.best_iteration = i + 1;
                best_params = model.snapshot();
            }
        }
    }
    if (!best_params.empty()) model.restore(best_params);
    return result;
}

}  // namespace ihd
