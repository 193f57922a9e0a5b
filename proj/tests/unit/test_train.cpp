#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ihd/data.hpp"
#include "ihd/errors.hpp"
#include "ihd/model.hpp"
#include "ihd/synth.hpp"
#include "ihd/train.hpp"

using namespace ihd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.resolution = 32;
    c.patch = 4;
    c.embed_dim = 8;
    c.depths = {1, 1};
    c.heads = {2, 4};
    c.window = 4;
    c.seq_layers = 1;
    c.seq_heads = 2;
    c.max_slices = 12;
    return c;
}

SeriesBatch synth_batch(std::uint64_t seed, std::vector<LabelVector>* labels_out) {
    SynthSpec spec;
    spec.seed = seed;
    const GeneratedSeries g = generate_series(spec, 0);
    PrepParams params;
    params.resolution = 32;
    if (labels_out) *labels_out = g.labels;
    return preprocess_series(g.volume, params);
}

struct TempDataset {
    fs::path dir;
    DatasetPaths paths;
    explicit TempDataset(std::uint64_t seed, std::size_t n, std::array<double, 3> fr) {
        dir = fs::temp_directory_path() / ("ihd-train-" + std::to_string(seed));
        fs::remove_all(dir);
        SynthSpec spec;
        spec.seed = seed;
        spec.num_series = n;
        paths = generate_dataset(spec, fr, dir.string());
    }
    ~TempDataset() { fs::remove_all(dir); }
};

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("lr schedule: warmup ramp, cosine tail, boundary continuity") {
    TrainConfig c;
    c.total = 1000;
    c.warmup = 100;
    c.peak_lr = 0.4;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(50, c) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(lr_at(100, c) == doctest::Approx(0.4).epsilon(1e-15));  // cos(0) at the boundary
    CHECK(lr_at(99, c) == doctest::Approx(0.4 * 99.0 / 100.0).epsilon(1e-15));
    CHECK(lr_at(550, c) == doctest::Approx(0.2).epsilon(1e-12));  // cosine midpoint
    CHECK(lr_at(1000, c) == doctest::Approx(0.0).epsilon(1e-15));
    for (std::size_t i = c.warmup; i < c.total; ++i) CHECK(lr_at(i, c) >= lr_at(i + 1, c));
    CHECK_THROWS_AS(lr_at(1001, c), ValidationError);
}

TEST_CASE("class weights: static, dynamic, both") {
    const std::array<double, 6> stat = {1, 1, 1, 1, 1, 2};
    const std::array<std::size_t, 6> pos = {10, 300, 300, 300, 300, 500};
    const std::size_t n = 1000;

    CHECK(class_weights(WeightMode::static_mode, stat, pos, n, 0.5, 5.0, 0.5) == stat);

    const auto dyn = class_weights(WeightMode::dynamic_mode, stat, pos, n, 0.5, 5.0, 0.5);
    double mean = 0.0;
    for (double w : dyn) {
        CHECK(w > 0.0);
        mean += w;
    }
    CHECK(std::abs(mean / 6.0 - 1.0) < 1e-12);
    for (std::size_t c = 1; c < 6; ++c) CHECK(dyn[0] > dyn[c]);  // rarest class weighs most

    const auto both = class_weights(WeightMode::both_mode, stat, pos, n, 0.5, 5.0, 0.5);
    for (std::size_t c = 0; c < 6; ++c) CHECK(both[c] == doctest::Approx(stat[c] * dyn[c]).epsilon(1e-15));

    // clamp engages for extreme imbalance (pre-normalization)
    const std::array<std::size_t, 6> skew = {0, 800, 800, 800, 800, 800};
    const auto clamped = class_weights(WeightMode::dynamic_mode, stat, skew, 800, 0.5, 2.0, 1.0);
    const double ratio = clamped[0] / clamped[1];
    CHECK(ratio <= 2.0 / 0.5 + 1e-12);
}

TEST_CASE("label targets honor logical_any") {
    std::vector<LabelVector> labels(2);
    labels[0][1] = 1;
    labels[0].sync_any();
    const DenseArray full = label_targets(labels, false);
    REQUIRE(full.shape() == Shape{2, 6});
    CHECK(full.at2(0, 1) == 1.0);
    CHECK(full.at2(0, 5) == 1.0);
    const DenseArray five = label_targets(labels, true);
    REQUIRE(five.shape() == Shape{2, 5});
}

TEST_CASE("supervised loss composes the two heads") {
    const DenseArray targets({2, 6}, 0.0);
    const std::vector<double> w(6, 1.0);
    auto main = parameter(DenseArray({2, 6}, 0.0));
    const LossBundle only = supervised_loss(nullptr, main, targets, w);
    CHECK(only.l1 == 0.0);
    CHECK(std::abs(only.l2 - std::log(2.0)) < 1e-15);
    CHECK(only.total == only.l2);

    auto aux = parameter(DenseArray({2, 6}, 0.0));
    const LossBundle both = supervised_loss(aux, main, targets, w);
    CHECK(std::abs(both.l1 - std::log(2.0)) < 1e-15);
    CHECK(both.total == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(both.root->value[0] == doctest::Approx(both.total).epsilon(1e-15));
}

TEST_CASE("augmentation: none is identity, draws are deterministic, bounds hold") {
    const SeriesBatch batch = synth_batch(5, nullptr);

    Rng r1(9);
    const SeriesBatch none = apply_augment(batch, AugmentPolicy::none(), r1);
    CHECK(none.images == batch.images);

    AugmentPolicy fixed = AugmentPolicy::weak();
    fixed.crop_lo = fixed.crop_hi = 1.0;
    fixed.hflip = fixed.vflip = false;
    Rng r2(9);
    const SeriesBatch ident = apply_augment(batch, fixed, r2);
    CHECK(ident.images == batch.images);  // unit crop at the origin samples on centers

    Rng r3(123), r4(123), r5(124);
    const SeriesBatch a = apply_augment(batch, AugmentPolicy::strong(), r3);
    const SeriesBatch b = apply_augment(batch, AugmentPolicy::strong(), r4);
    const SeriesBatch c = apply_augment(batch, AugmentPolicy::strong(), r5);
    CHECK(a.images == b.images);
    CHECK(a.images != c.images);
    for (double p : a.images) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }

    AugmentPolicy bad = AugmentPolicy::weak();
    bad.crop_lo = 0.0;
    CHECK_THROWS_AS(apply_augment(batch, bad, r3), ValidationError);
}

TEST_CASE("train_step is reproducible and learns its batch") {
    std::vector<LabelVector> labels;
    const SeriesBatch batch = synth_batch(6, &labels);
    const ModelConfig mc = tiny_config();
    TrainConfig tc;
    tc.total = 40;
    tc.warmup = 4;
    tc.peak_lr = 0.05;
    tc.augment = AugmentPolicy::none();

    Model m1 = build_model(mc, 3);
    Model m2 = build_model(mc, 3);
    Rng s1(derive_seed(0, "step")), s2(derive_seed(0, "step"));
    const LossBundle b1 = train_step(m1, batch, labels, tc, 0, s1);
    const LossBundle b2 = train_step(m2, batch, labels, tc, 0, s2);
    CHECK(b1.total == b2.total);
    for (std::size_t i = 0; i < m1.params.size(); ++i) {
        CHECK(m1.params[i].second->value.values() == m2.params[i].second->value.values());
    }

    double first = b1.total, last = 0.0;
    for (std::size_t it = 1; it < tc.total; ++it) {
        Rng rng(derive_seed(7, it));
        last = train_step(m1, batch, labels, tc, it, rng).total;
    }
    CHECK(last < first * 0.8);

    CHECK_THROWS_AS(train_step(m1, batch, {}, tc, 0, s1), ShapeError);
}

TEST_CASE("a poisoned parameter raises a training error") {
    std::vector<LabelVector> labels;
    const SeriesBatch batch = synth_batch(6, &labels);
    Model m = build_model(tiny_config(), 3);
    m.param("head2.bias")->value[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.augment = AugmentPolicy::none();
    Rng rng(1);
    CHECK_THROWS_AS(train_step(m, batch, labels, tc, 0, rng), TrainingError);
}

TEST_CASE("fit: deep-supervision-off leaves L1 at zero; best checkpoint is restored") {
    TempDataset ds(88, 6, {0.67, 0.33, 0.0});
    const auto series = group_series(load_manifest(ds.paths.manifest));
    const auto train = filter_split(series, Split::train);
    const auto val = filter_split(series, Split::validation);
    SeriesStore store(ds.paths.volumes_dir, PrepParams{-500.0, 3, 32});

    ModelConfig mc = tiny_config();
    mc.ds = false;
    TrainConfig tc;
    tc.total = 24;
    tc.warmup = 4;
    tc.peak_lr = 0.03;
    tc.val_interval = 8;
    tc.seed = 5;
    tc.augment = AugmentPolicy::none();

    Model m = build_model(mc, tc.seed);
    const FitResult fr = fit(m, store, train, val, {}, tc);
    REQUIRE(fr.history.size() == tc.total);
    for (const HistoryRow& row : fr.history) {
        CHECK(row.l1 == 0.0);
        CHECK(row.total == row.l2);
        CHECK(row.lr == lr_at(row.iteration, tc));
    }
    CHECK(fr.best_val_loss >= 0.0);
    CHECK(fr.best_val_loss <= fr.final_val_loss + 1e-15);
    // the returned weights really are the best snapshot
    CHECK(evaluate_model(m, store, val) == doctest::Approx(fr.best_val_loss).epsilon(1e-12));

    CHECK_THROWS_AS(fit(m, store, {}, val, {}, tc), ConfigError);
}

TEST_CASE("fit is reproducible end to end") {
    TempDataset ds(91, 4, {1.0, 0.0, 0.0});
    const auto train = group_series(load_manifest(ds.paths.manifest));
    SeriesStore store(ds.paths.volumes_dir, PrepParams{-500.0, 3, 32});
    TrainConfig tc;
    tc.total = 10;
    tc.warmup = 2;
    tc.peak_lr = 0.02;
    tc.seed = 44;

    Model a = build_model(tiny_config(), tc.seed);
    Model b = build_model(tiny_config(), tc.seed);
    const FitResult fa = fit(a, store, train, {}, {}, tc);
    const FitResult fb = fit(b, store, train, {}, {}, tc);
    for (std::size_t i = 0; i < fa.history.size(); ++i) CHECK(fa.history[i].total == fb.history[i].total);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].second->value.values() == b.params[i].second->value.values());
    }
}

TEST_CASE("history file round-trips row counts and headers") {
    const auto dir = fs::temp_directory_path() / "ihd-history";
    fs::create_directories(dir);
    const std::string path = (dir / "h.csv").string();
    save_history(path, {{0, 0.5, 0.25, 0.0, 0.75, 0.001}, {1, 0.4, 0.2, 0.1, 0.7, 0.002}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "iteration,L1,L2,Lu,total,lr");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2);
    fs::remove_all(dir);
}

TEST_CASE("train config round-trip and validation") {
    TrainConfig tc;
    tc.total = 123;
    tc.warmup = 7;
    tc.weight_mode = WeightMode::both_mode;
    tc.augment.kind = AugmentKind::strong;
    tc.seed = 19;
    KeyValueConfig kv;
    tc.to_config(kv);
    const TrainConfig back = TrainConfig::from_config(kv);
    CHECK(back.total == 123);
    CHECK(back.warmup == 7);
    CHECK(back.weight_mode == WeightMode::both_mode);
    CHECK(back.augment.kind == AugmentKind::strong);
    CHECK(back.seed == 19);

    TrainConfig bad;
    bad.warmup = bad.total + 5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = TrainConfig{};
    bad.static_weights[2] = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_SUITE_END();
