#include "ihd/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "ihd/checkpoint.hpp"
#include "ihd/errors.hpp"

namespace ihd {

void SslConfig::validate() const {
    if (!(tau_s > 0.5 && tau_s < 1.0)) throw ValidationError("ssl: tau_s must lie in (0.5, 1)");
    if (!(tau_p > 0.0 && tau_p < 1.0)) throw ValidationError("ssl: tau_p must lie in (0, 1)");
    if (rounds == 0) throw ValidationError("ssl: rounds must be >= 1");
    if (lambda_u < 0.0) throw ValidationError("ssl: lambda_u must be >= 0");
}

SslConfig SslConfig::from_config(const KeyValueConfig& cfg) {
    SslConfig s;
    s.tau_s = cfg.get_double("ssl.tau_s", s.tau_s);
    s.tau_p = cfg.get_double("ssl.tau_p", s.tau_p);
    s.rounds = cfg.get_size("ssl.rounds", s.rounds);
    s.lambda_u = cfg.get_double("ssl.lambda_u", s.lambda_u);
    s.validate();
    return s;
}

void SslConfig::to_config(KeyValueConfig& cfg) const {
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    cfg.set("ssl.tau_s", fmt(tau_s));
    cfg.set("ssl.tau_p", fmt(tau_p));
    cfg.set("ssl.rounds", std::to_string(rounds));
    cfg.set("ssl.lambda_u", fmt(lambda_u));
}

double confidence(double probability) {
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw ValidationError("confidence: probability outside [0,1]");
    }
    return std::max(1.0 - probability, probability);
}

std::vector<SelectionRow> score_series(const PredictionTable& table, double tau_s) {
    table.validate();
    std::map<std::string, double> min_conf;  // keyed by series, sorted output
    for (const auto& [key, probs] : table.rows()) {
        double m = 1.0;
        for (double p : probs) m = std::min(m, confidence(p));
        auto [it, fresh] = min_conf.emplace(key.first, m);
        if (!fresh) it->second = std::min(it->second, m);
    }
    std::vector<SelectionRow> rows;
    rows.reserve(min_conf.size());
    for (const auto& [series, m] : min_conf) rows.push_back({series, m, m > tau_s});
    return rows;
}

std::vector<std::string> select_series(const PredictionTable& table, double tau_s) {
    std::vector<std::string> out;
    for (const SelectionRow& row : score_series(table, tau_s)) {
        if (row.selected) out.push_back(row.series_id);
    }
    return out;
}

LabelVector binarize(const std::array<double, kNumClasses>& probabilities, double tau_p) {
    LabelVector y;
    for (std::size_t c = 0; c < kNumClasses; ++c) y[c] = probabilities[c] > tau_p ? 1 : 0;
    return y;
}

LossBundle unlabeled_loss(Model& model, const SeriesBatch& batch, const std::vector<LabelVector>& pseudo,
                          const AugmentPolicy& strong_policy, const std::vector<double>& weights, Rng& rng) {
    if (pseudo.size() != batch.num_slices) {
        throw ShapeError("unlabeled_loss: " + std::to_string(pseudo.size()) + " pseudo rows for " +
                         std::to_string(batch.num_slices) + " slices");
    }
    for (const LabelVector& y : pseudo) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (y[c] != 0 && y[c] != 1) throw ValidationError("unlabeled_loss: pseudo labels must be binary");
        }
    }
    const SeriesBatch augmented = apply_augment(batch, strong_policy, rng);
    const DenseArray targets = label_targets(pseudo, model.config.logical_any);
    const ForwardOutput fwd = model_forward(model, augmented);
    LossBundle bundle;
    bundle.root = bce_with_logits(fwd.main_logits, targets, weights);
    bundle.lu = bundle.root->value[0];
    bundle.total = bundle.lu;
    return bundle;
}

namespace {

Model clone_model(const Model& m) {
    Model copy = build_model(m.config, 0);
    copy.restore(m.snapshot());
    return copy;
}

void rank_by_val_loss(std::vector<ZooMember>& zoo) {
    std::vector<std::size_t> order(zoo.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&zoo](std::size_t a, std::size_t b) { return zoo[a].val_loss < zoo[b].val_loss; });
    for (std::size_t pos = 0; pos < order.size(); ++pos) zoo[order[pos]].rank = pos + 1;
}

}  // namespace

PredictionTable zoo_predict(std::vector<ZooMember>& zoo, SeriesStore& store,
                            const std::vector<SeriesRecord>& series) {
    if (zoo.empty()) throw ValidationError("zoo_predict: empty zoo");
    std::vector<std::size_t> ranks;
    std::vector<PredictionTable> tables;
    ranks.reserve(zoo.size());
    tables.reserve(zoo.size());
    for (ZooMember& member : zoo) {
        ranks.push_back(member.rank);
        tables.push_back(predict_series(member.model, store, series));
    }
    const std::vector<double> weights = rank_weights(canonical_nesting(ranks), zoo.size());
    return ensemble_average(tables, weights);
}

std::string SslRoundReport::summary() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "round %zu: selected %zu/%zu unlabeled series (%zu pseudo slices)\n",
                  round, selected, unlabeled_total, pseudo_slices);
    out += buf;
    if (supervised_only) out += "warning: empty selection, round ran purely supervised\n";
    out += "pseudo prevalence:";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::snprintf(buf, sizeof(buf), " %s=%.4f", kClassShortNames[c], prevalence[c]);
        out += buf;
    }
    out += "\n";
    std::snprintf(buf, sizeof(buf), "student validation loss %.6g vs worst zoo member %.6g -> %s\n",
                  student_val_loss, worst_zoo_val_loss,
                  replaced ? ("replaced " + replaced_source).c_str() : "zoo unchanged");
    out += buf;
    return out;
}

SslRoundResult ssl_round(std::vector<ZooMember>& zoo, SeriesStore& store,
                         const std::vector<SeriesRecord>& labeled_train,
                         const std::vector<SeriesRecord>& val_series,
                         const std::vector<SeriesRecord>& unlabeled, const TrainConfig& train_config,
                         const SslConfig& ssl_config, std::size_t round_index) {
    ssl_config.validate();
    train_config.validate();
    if (zoo.empty()) throw ValidationError("ssl_round: empty zoo");
    if (val_series.empty()) throw ValidationError("ssl_round: needs a validation split");

    // refresh member scores; ranks follow validation loss, best first
    for (ZooMember& member : zoo) {
        if (member.val_loss < 0.0) member.val_loss = evaluate_model(member.model, store, val_series);
    }
    rank_by_val_loss(zoo);

    SslRoundResult result;
    SslRoundReport& report = result.report;
    report.round = round_index;
    report.unlabeled_total = unlabeled.size();

    // 1) pseudo-label the unlabeled split from the zoo ensemble. The records'
    //    own label fields are never consulted here.
    result.ensemble = zoo_predict(zoo, store, unlabeled);
    report.rows = score_series(result.ensemble, ssl_config.tau_s);

    for (const SelectionRow& row : report.rows) {
        if (!row.selected) continue;
        const auto rec_it = std::find_if(unlabeled.begin(), unlabeled.end(), [&row](const SeriesRecord& r) {
            return r.series_id == row.series_id;
        });
        if (rec_it == unlabeled.end()) throw DataError("ssl_round: unknown series " + row.series_id);
        SeriesRecord pseudo = *rec_it;
        pseudo.has_labels = true;
        pseudo.labels.clear();
        pseudo.labels.reserve(pseudo.num_slices);
        for (std::size_t s = 0; s < pseudo.num_slices; ++s) {
            const LabelVector y = binarize(result.ensemble.row(row.series_id, s), ssl_config.tau_p);
            pseudo.labels.push_back(y);
            for (std::size_t c = 0; c < kNumClasses; ++c) report.prevalence[c] += y[c];
            ++report.pseudo_slices;
        }
        result.pseudo_series.push_back(std::move(pseudo));
        ++report.selected;
    }
    if (report.pseudo_slices > 0) {
        for (double& p : report.prevalence) p /= static_cast<double>(report.pseudo_slices);
    }
    report.supervised_only = result.pseudo_series.empty();

    // 2) fresh student on labeled + pseudo
    TrainConfig tc = train_config;
    tc.lambda_u = ssl_config.lambda_u;
    tc.seed = derive_seed(derive_seed(train_config.seed, "ssl-fit"), round_index);
    result.student = build_model(zoo.front().model.config,
                                 derive_seed(derive_seed(train_config.seed, "ssl-round"), round_index));
    const FitResult fr = fit(result.student, store, labeled_train, val_series, result.pseudo_series, tc);
    report.student_val_loss = fr.best_val_loss;

    // 3) replace the zoo's worst member when the student beats it
    std::size_t worst = 0;
    for (std::size_t i = 1; i < zoo.size(); ++i) {
        if (zoo[i].val_loss > zoo[worst].val_loss) worst = i;
    }
    report.worst_zoo_val_loss = zoo[worst].val_loss;
    if (report.student_val_loss >= 0.0 && report.student_val_loss < report.worst_zoo_val_loss) {
        report.replaced = true;
        report.replaced_source = zoo[worst].source;
        zoo[worst] = ZooMember{clone_model(result.student), 0, "round-" + std::to_string(round_index),
                               report.student_val_loss};
        rank_by_val_loss(zoo);
    }
    return result;
}

void save_selection_report(const std::string& path, std::size_t round,
                           const std::vector<SelectionRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "round,series_id,min_confidence,selected\n";
    char buf[160];
    for (const SelectionRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.6g,%d\n", round, row.series_id.c_str(),
                      row.min_confidence, row.selected ? 1 : 0);
        out << buf;
    }
    if (!out) throw IoError("short write to " + path);
}

void save_pseudo_manifest(const std::string& path, const std::vector<SeriesRecord>& pseudo,
                          const std::string& provenance) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "series_id,slice_index,split,edh,iph,ivh,sah,sdh,any,provenance\n";
    for (const SeriesRecord& rec : pseudo) {
        for (std::size_t s = 0; s < rec.num_slices; ++s) {
            out << rec.series_id << ',' << s << ',' << split_name(rec.split);
            for (std::size_t c = 0; c < kNumClasses; ++c) out << ',' << rec.labels[s][c];
            out << ',' << provenance << '\n';
        }
    }
    if (!out) throw IoError("short write to " + path);
}

}  // namespace ihd
