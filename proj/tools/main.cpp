// ihd: one executable per pipeline stage, reproducible under a single seed.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ihd/checkpoint.hpp"
#include "ihd/config.hpp"
#include "ihd/data.hpp"
#include "ihd/ensemble.hpp"
#include "ihd/errors.hpp"
#include "ihd/model.hpp"
#include "ihd/preprocess.hpp"
#include "ihd/ssl.hpp"
#include "ihd/synth.hpp"
#include "ihd/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "ihd 0.1.0";

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string data;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_data) {
    cmd->add_option("--config", opts.config_path, "key: value configuration file");
    cmd->add_option("--seed", opts.seed, "run seed, overrides the config's seed key")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    cmd->add_option("--out", opts.out, "output directory");
    if (with_data) cmd->add_option("--data", opts.data, "dataset directory (manifest.csv + volumes/)");
}

ihd::KeyValueConfig load_config(const CommonOpts& opts) {
    ihd::KeyValueConfig cfg;
    if (!opts.config_path.empty()) cfg = ihd::KeyValueConfig::from_file(opts.config_path);
    if (opts.seed_set) cfg.set("seed", std::to_string(opts.seed));
    return cfg;
}

std::string require_out(const CommonOpts& opts) {
    if (opts.out.empty()) throw ihd::ConfigError("--out is required");
    fs::create_directories(opts.out);
    return opts.out;
}

std::string require_data(const CommonOpts& opts) {
    if (opts.data.empty()) throw ihd::ConfigError("--data is required");
    return opts.data;
}

// recorded next to every output; timestamp honors SOURCE_DATE_EPOCH so
// reruns stay byte-identical
void write_run_manifest(const std::string& out_dir, const std::string& command, const CommonOpts& opts,
                        const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
    std::ofstream f(out_dir + "/run_manifest.txt", std::ios::binary);
    if (!f) throw ihd::IoError("cannot write run manifest in " + out_dir);
    f << "command: " << command << "\n";
    f << "config: " << (opts.config_path.empty() ? "(none)" : opts.config_path) << "\n";
    f << "seed: " << (opts.seed_set ? std::to_string(opts.seed) : std::string("(config)")) << "\n";
    for (const std::string& p : inputs) f << "input: " << p << "\n";
    for (const std::string& p : outputs) f << "output: " << p << "\n";
    f << "timestamp: " << (epoch ? epoch : "0") << "\n";
    f << "version: " << kVersion << "\n";
}

ihd::PrepParams prep_from_config(const ihd::KeyValueConfig& cfg, std::size_t default_resolution) {
    ihd::PrepParams p;
    p.air_threshold = cfg.get_double("prep.air_threshold", p.air_threshold);
    p.opening_radius = cfg.get_size("prep.opening_radius", p.opening_radius);
    p.resolution = cfg.get_size("prep.resolution", default_resolution);
    return p;
}

ihd::SynthSpec synth_from_config(const ihd::KeyValueConfig& cfg) {
    ihd::SynthSpec s;
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    s.num_series = cfg.get_size("synth.num_series", s.num_series);
    s.min_slices = cfg.get_size("synth.min_slices", s.min_slices);
    s.max_slices = cfg.get_size("synth.max_slices", s.max_slices);
    s.frame = cfg.get_size("synth.frame", s.frame);
    s.signal_strength = cfg.get_double("synth.signal", s.signal_strength);
    s.label_noise = cfg.get_double("synth.label_noise", s.label_noise);
    const auto rates = cfg.get_double_list("synth.class_rates", {s.class_rates.begin(), s.class_rates.end()});
    if (rates.size() != 5) throw ihd::ConfigError("synth.class_rates needs 5 entries");
    std::copy(rates.begin(), rates.end(), s.class_rates.begin());
    s.validate();
    return s;
}

std::vector<ihd::SeriesRecord> load_series(const std::string& data_dir) {
    return ihd::group_series(ihd::load_manifest(data_dir + "/manifest.csv"));
}

std::vector<ihd::SeriesRecord> pick_split(const std::vector<ihd::SeriesRecord>& series,
                                          const std::string& name) {
    if (name == "all") return series;
    return ihd::filter_split(series, ihd::split_from_string(name));
}

struct ZooSpec {
    std::string path;
    std::size_t rank = 0;
};

// "--zoo path:rank"
ZooSpec parse_zoo_spec(const std::string& s) {
    const auto pos = s.rfind(':');
    if (pos == std::string::npos || pos + 1 == s.size()) {
        throw ihd::ConfigError("--zoo expects <checkpoint>:<rank>, got " + s);
    }
    ZooSpec spec;
    spec.path = s.substr(0, pos);
    try {
        spec.rank = std::stoul(s.substr(pos + 1));
    } catch (const std::exception&) {
        throw ihd::ConfigError("--zoo rank is not a number in " + s);
    }
    if (spec.rank == 0) throw ihd::ConfigError("--zoo ranks start at 1");
    return spec;
}

// ---- subcommands ----

int run_synth(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string out = require_out(opts);
    ihd::SynthSpec spec = synth_from_config(cfg);
    auto fractions_v = cfg.get_double_list("synth.fractions", {0.7, 0.15, 0.15});
    if (fractions_v.size() != 3) throw ihd::ConfigError("synth.fractions needs 3 entries");
    const std::array<double, 3> fractions = {fractions_v[0], fractions_v[1], fractions_v[2]};

    const ihd::DatasetPaths paths = ihd::generate_dataset(spec, fractions, out);
    write_run_manifest(out, "synth", opts, {}, {paths.manifest, paths.hidden_answers, paths.volumes_dir});
    std::printf("wrote %zu series (%zu train / %zu validation / %zu unlabeled) under %s\n", spec.num_series,
                paths.split_counts[0], paths.split_counts[1], paths.split_counts[2], out.c_str());
    return 0;
}

int run_preprocess(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string data = require_data(opts);
    const std::string out = require_out(opts);
    const ihd::PrepParams params = prep_from_config(cfg, ihd::PrepParams{}.resolution);

    const auto series = load_series(data);
    for (const ihd::SeriesRecord& rec : series) {
        const ihd::HUVolume volume = ihd::load_volume(data + "/volumes/" + rec.series_id + ".hdr");
        const ihd::SeriesBatch batch = ihd::preprocess_series(volume, params);
        ihd::save_batch(batch, out + "/" + rec.series_id + ".hdr", out + "/" + rec.series_id + ".raw");
    }
    write_run_manifest(out, "preprocess", opts, {data + "/manifest.csv"}, {out});
    std::printf("preprocessed %zu series at %zux%zu -> %s\n", series.size(), params.resolution,
                params.resolution, out.c_str());
    return 0;
}

int run_train(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const std::string data = require_data(opts);
    const std::string out = require_out(opts);

    const ihd::ModelConfig mc = ihd::ModelConfig::from_config(cfg);
    const ihd::TrainConfig tc = ihd::TrainConfig::from_config(cfg);
    const auto series = load_series(data);
    const auto train = ihd::filter_split(series, ihd::Split::train);
    const auto val = ihd::filter_split(series, ihd::Split::validation);

    ihd::SeriesStore store(data + "/volumes", prep_from_config(cfg, mc.resolution));
    ihd::Model model = ihd::build_model(mc, tc.seed);
    const ihd::FitResult fr = ihd::fit(model, store, train, val, {}, tc);

    const std::string ckpt = out + "/checkpoint.ihd";
    const std::string history = out + "/history.csv";
    ihd::save_checkpoint(model, ckpt);
    ihd::save_history(history, fr.history);
    write_run_manifest(out, "train", opts, {data + "/manifest.csv"}, {ckpt, history});
    if (fr.best_val_loss >= 0.0) {
        std::printf("best validation weighted log-loss %.6g at iteration %zu\n", fr.best_val_loss,
                    fr.best_iteration);
    }
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int run_predict(const CommonOpts& opts, const std::string& ckpt, const std::string& split) {
    const auto cfg = load_config(opts);
    const std::string data = require_data(opts);
    const std::string out = require_out(opts);
    if (ckpt.empty()) throw ihd::ConfigError("--ckpt is required");

    ihd::Model model = ihd::load_checkpoint(ckpt);
    const auto series = pick_split(load_series(data), split);
    ihd::SeriesStore store(data + "/volumes", prep_from_config(cfg, model.config.resolution));
    const ihd::PredictionTable table = ihd::predict_series(model, store, series);

    const std::string preds = out + "/predictions.csv";
    ihd::save_predictions(preds, table);
    write_run_manifest(out, "predict", opts, {ckpt, data + "/manifest.csv"}, {preds});
    std::printf("wrote %zu rows to %s\n", table.size(), preds.c_str());
    return 0;
}

int run_evaluate(const CommonOpts& opts, const std::string& preds_path, const std::string& truth_path) {
    if (preds_path.empty() || truth_path.empty()) {
        throw ihd::ConfigError("evaluate needs --preds and --truth");
    }
    const ihd::PredictionTable preds = ihd::load_predictions(preds_path);

    std::vector<ihd::SliceRecord> labeled;
    for (const ihd::SliceRecord& row : ihd::load_manifest(truth_path)) {
        if (row.has_labels) labeled.push_back(row);
    }
    ihd::TruthTable truth = ihd::truth_from_records(labeled);
    // the answer file may cover more than the prediction split
    for (auto it = truth.begin(); it != truth.end();) {
        if (!preds.has(it->first.first, it->first.second)) {
            it = truth.erase(it);
        } else {
            ++it;
        }
    }
    const double loss = ihd::weighted_logloss(preds, truth);
    std::printf("weighted log-loss: %.9g\n", loss);
    if (!opts.out.empty()) {
        const std::string out = require_out(opts);
        std::ofstream f(out + "/metrics.txt", std::ios::binary);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "weighted_logloss: %.17g\n", loss);
        f << buf;
        write_run_manifest(out, "evaluate", opts, {preds_path, truth_path}, {out + "/metrics.txt"});
    }
    return 0;
}

int run_ensemble(const CommonOpts& opts, const std::vector<std::string>& zoo_args, const std::string& split) {
    const auto cfg = load_config(opts);
    const std::string data = require_data(opts);
    const std::string out = require_out(opts);
    if (zoo_args.empty()) throw ihd::ConfigError("ensemble needs at least one --zoo <checkpoint>:<rank>");

    std::vector<std::size_t> ranks;
    std::vector<ihd::PredictionTable> tables;
    const auto series = pick_split(load_series(data), split);
    std::vector<std::string> inputs = {data + "/manifest.csv"};
    std::size_t resolution = 0;
    for (const std::string& arg : zoo_args) {
        const ZooSpec spec = parse_zoo_spec(arg);
        ihd::Model model = ihd::load_checkpoint(spec.path);
        if (resolution == 0) resolution = model.config.resolution;
        ihd::SeriesStore store(data + "/volumes", prep_from_config(cfg, model.config.resolution));
        tables.push_back(ihd::predict_series(model, store, series));
        ranks.push_back(spec.rank);
        inputs.push_back(spec.path);
    }
    const std::vector<double> weights = ihd::rank_weights(ihd::canonical_nesting(ranks), ranks.size());
    const ihd::PredictionTable avg = ihd::ensemble_average(tables, weights);

    const std::string preds = out + "/ensemble.csv";
    ihd::save_predictions(preds, avg);
    write_run_manifest(out, "ensemble", opts, inputs, {preds});
    for (std::size_t i = 0; i < weights.size(); ++i) {
        std::printf("member %zu (rank %zu): weight %.6g\n", i, ranks[i], weights[i]);
    }
    std::printf("wrote %zu rows to %s\n", avg.size(), preds.c_str());
    return 0;
}

int run_snap(const CommonOpts& opts, const std::string& preds_path, double tau_h, double tau_l) {
    const std::string out = require_out(opts);
    if (preds_path.empty()) throw ihd::ConfigError("snap needs --preds");
    const ihd::PredictionTable snapped =
        ihd::threshold_snap(ihd::load_predictions(preds_path), tau_h, tau_l);
    const std::string path = out + "/snapped.csv";
    ihd::save_predictions(path, snapped);
    write_run_manifest(out, "snap", opts, {preds_path}, {path});
    std::printf("wrote %zu rows to %s\n", snapped.size(), path.c_str());
    return 0;
}

int run_ssl_round(const CommonOpts& opts, const std::vector<std::string>& zoo_args, double tau_s,
                  double tau_p) {
    const auto cfg = load_config(opts);
    const std::string data = require_data(opts);
    const std::string out = require_out(opts);
    if (zoo_args.empty()) throw ihd::ConfigError("ssl-round needs at least one --zoo <checkpoint>:<rank>");

    ihd::SslConfig sc = ihd::SslConfig::from_config(cfg);
    if (tau_s > 0.0) sc.tau_s = tau_s;
    if (tau_p > 0.0) sc.tau_p = tau_p;
    sc.validate();
    const ihd::TrainConfig tc = ihd::TrainConfig::from_config(cfg);

    const auto series = load_series(data);
    const auto train = ihd::filter_split(series, ihd::Split::train);
    const auto val = ihd::filter_split(series, ihd::Split::validation);
    const auto unlabeled = ihd::filter_split(series, ihd::Split::unlabeled);

    std::vector<ihd::ZooMember> zoo;
    std::vector<std::string> inputs = {data + "/manifest.csv"};
    for (const std::string& arg : zoo_args) {
        const ZooSpec spec = parse_zoo_spec(arg);
        zoo.push_back({ihd::load_checkpoint(spec.path), spec.rank, spec.path, -1.0});
        inputs.push_back(spec.path);
    }
    ihd::SeriesStore store(data + "/volumes", prep_from_config(cfg, zoo.front().model.config.resolution));

    std::ofstream report_file(out + "/ssl_report.txt", std::ios::binary);
    std::vector<std::string> outputs;
    std::set<std::string> prev_selected;
    double prev_val = -1.0;
    for (std::size_t r = 0; r < sc.rounds; ++r) {
        ihd::SslRoundResult res = ihd::ssl_round(zoo, store, train, val, unlabeled, tc, sc, r);
        const std::string tag = "round" + std::to_string(r);
        ihd::save_selection_report(out + "/" + tag + "_selection.csv", r, res.report.rows);
        ihd::save_pseudo_manifest(out + "/" + tag + "_pseudo.csv", res.pseudo_series, tag);
        ihd::save_predictions(out + "/" + tag + "_ensemble.csv", res.ensemble);
        ihd::save_checkpoint(res.student, out + "/" + tag + "_student.ihd");
        for (const char* suffix : {"_selection.csv", "_pseudo.csv", "_ensemble.csv", "_student.ihd"}) {
            outputs.push_back(out + "/" + tag + suffix);
        }
        const std::string summary = res.report.summary();
        std::fputs(summary.c_str(), stdout);
        report_file << summary;

        ihd::save_checkpoint(res.student, out + "/checkpoint.ihd");
        std::set<std::string> selected;
        for (const auto& rec : res.pseudo_series) selected.insert(rec.series_id);
        const double v = res.report.student_val_loss;
        if (r > 0 && selected == prev_selected && prev_val >= 0.0 && std::abs(v - prev_val) < 1e-4) {
            std::printf("converged after round %zu\n", r);
            report_file << "converged after round " << r << "\n";
            break;
        }
        prev_selected = std::move(selected);
        prev_val = v;
    }
    outputs.push_back(out + "/checkpoint.ihd");
    write_run_manifest(out, "ssl-round", opts, inputs, outputs);
    return 0;
}

int run_gradcheck(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    if (opts.config_path.empty()) throw ihd::ConfigError("gradcheck needs --config with a small model");

    const ihd::ModelConfig mc = ihd::ModelConfig::from_config(cfg);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    ihd::Model model = ihd::build_model(mc, seed);

    ihd::SynthSpec spec = synth_from_config(cfg);
    spec.num_series = 1;
    const ihd::GeneratedSeries gen = ihd::generate_series(spec, 0);
    ihd::PrepParams prep = prep_from_config(cfg, mc.resolution);
    prep.resolution = mc.resolution;
    const ihd::SeriesBatch batch = ihd::preprocess_series(gen.volume, prep);
    const ihd::DenseArray targets = ihd::label_targets(gen.labels, mc.logical_any);
    const std::vector<double> weights(mc.head_outputs(), 1.0);

    auto build_loss = [&]() {
        const ihd::ForwardOutput fwd = ihd::model_forward(model, batch);
        return ihd::supervised_loss(fwd.aux_logits, fwd.main_logits, targets, weights).root;
    };
    const double h = cfg.get_double("gradcheck.h", 1e-5);
    const double tol = cfg.get_double("gradcheck.tol", 1e-4);
    const std::size_t coords = cfg.get_size("gradcheck.coords", 256);
    ihd::Rng rng(ihd::derive_seed(seed, "gradcheck"));
    const ihd::GradCheckReport report = ihd::grad_check(build_loss, model.params, h, tol, coords, rng);
    std::fputs(report.to_string().c_str(), stdout);
    return report.passed ? 0 : 1;
}

int run_inspect(const std::string& ckpt) {
    if (ckpt.empty()) throw ihd::ConfigError("inspect needs --ckpt");
    ihd::Model model = ihd::load_checkpoint(ckpt);
    ihd::KeyValueConfig cfg;
    model.config.to_config(cfg);
    std::fputs(cfg.to_string().c_str(), stdout);
    std::printf("parameters: %zu\n", model.param_count());
    std::printf("intra-extractor parameters: %zu\n", model.intra_param_count());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"intracranial-hemorrhage detection pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string ckpt, split = "all", preds_path, truth_path;
    std::vector<std::string> zoo_args;
    double tau_h = 0.97, tau_l = 0.03, tau_s = 0.0, tau_p = 0.0;

    add_common(app.add_subcommand("synth", "generate a synthetic CT dataset"), opts, false);
    add_common(app.add_subcommand("preprocess", "window, crop and resize every series"), opts, true);
    add_common(app.add_subcommand("train", "supervised training run"), opts, true);

    auto* predict = app.add_subcommand("predict", "clean-forward predictions for a split");
    add_common(predict, opts, true);
    predict->add_option("--ckpt", ckpt, "model checkpoint");
    predict->add_option("--split", split, "train|validation|unlabeled|all");

    auto* evaluate = app.add_subcommand("evaluate", "weighted log-loss of predictions against answers");
    add_common(evaluate, opts, false);
    evaluate->add_option("--preds", preds_path, "prediction CSV");
    evaluate->add_option("--truth", truth_path, "labeled manifest CSV");

    auto* ensemble = app.add_subcommand("ensemble", "rank-weighted average of checkpoint predictions");
    add_common(ensemble, opts, true);
    ensemble->add_option("--zoo", zoo_args, "checkpoint:rank, repeatable");
    ensemble->add_option("--split", split, "train|validation|unlabeled|all");

    auto* snap = app.add_subcommand("snap", "snap confident probabilities toward 0/1");
    add_common(snap, opts, false);
    snap->add_option("--preds", preds_path, "prediction CSV");
    snap->add_option("--tau-h", tau_h, "upper threshold");
    snap->add_option("--tau-l", tau_l, "lower threshold");

    auto* ssl = app.add_subcommand("ssl-round", "semi-supervised refinement cycles");
    add_common(ssl, opts, true);
    ssl->add_option("--zoo", zoo_args, "checkpoint:rank, repeatable");
    ssl->add_option("--tau-s", tau_s, "series confidence gate");
    ssl->add_option("--tau-p", tau_p, "binarization threshold");

    add_common(app.add_subcommand("gradcheck", "finite-difference gradient audit"), opts, false);

    auto* inspect = app.add_subcommand("inspect", "print checkpoint config and parameter count");
    inspect->add_option("--ckpt", ckpt, "model checkpoint");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("synth")) return run_synth(opts);
        if (app.got_subcommand("preprocess")) return run_preprocess(opts);
        if (app.got_subcommand("train")) return run_train(opts);
        if (app.got_subcommand("predict")) return run_predict(opts, ckpt, split);
        if (app.got_subcommand("evaluate")) return run_evaluate(opts, preds_path, truth_path);
        if (app.got_subcommand("ensemble")) return run_ensemble(opts, zoo_args, split);
        if (app.got_subcommand("snap")) return run_snap(opts, preds_path, tau_h, tau_l);
        if (app.got_subcommand("ssl-round")) return run_ssl_round(opts, zoo_args, tau_s, tau_p);
        if (app.got_subcommand("gradcheck")) return run_gradcheck(opts);
        if (app.got_subcommand("inspect")) return run_inspect(ckpt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
