#pragma once

#include <array>
#include <string>
#include <vector>

#include "ihd/data.hpp"
#include "ihd/ensemble.hpp"
#include "ihd/labels.hpp"
#include "ihd/model.hpp"
#include "ihd/train.hpp"

namespace ihd {

struct SslConfig {
    double tau_s = 0.9;      // series confidence gate, strict
    double tau_p = 0.5;      // binarization threshold, strict
    std::size_t rounds = 1;  // cycle count
    double lambda_u = 1.0;

    void validate() const;
    static SslConfig from_config(const KeyValueConfig& cfg);
    void to_config(KeyValueConfig& cfg) const;
};

// s = max(1-p, p)
double confidence(double probability);

struct SelectionRow {
    std::string series_id;
    double min_confidence = 0.0;
    bool selected = false;
};

// per series: min over its slices and all six classes of confidence(p)
std::vector<SelectionRow> score_series(const PredictionTable& table, double tau_s);
std::vector<std::string> select_series(const PredictionTable& table, double tau_s);

// y = 1 iff p > tau_p, each class independently
LabelVector binarize(const std::array<double, kNumClasses>& probabilities, double tau_p);

// Lu: weighted BCE of the main head on the strongly augmented batch against
// the pseudo labels. No parameter update; the caller owns backward/sgd.
LossBundle unlabeled_loss(Model& model, const SeriesBatch& batch, const std::vector<LabelVector>& pseudo,
                          const AugmentPolicy& strong_policy, const std::vector<double>& weights, Rng& rng);

struct ZooMember {
    Model model;
    std::size_t rank = 1;    // 1 = best; unique across the zoo
    std::string source;      // checkpoint path or "round-<k>"
    double val_loss = -1.0;  // refreshed by ssl_round
};

struct SslRoundReport {
    std::size_t round = 0;
    std::size_t unlabeled_total = 0;
    std::size_t selected = 0;
    std::size_t pseudo_slices = 0;
    std::array<double, kNumClasses> prevalence{};  // positive rate over pseudo slices
    double student_val_loss = -1.0;
    double worst_zoo_val_loss = -1.0;
    bool replaced = false;
    std::string replaced_source;
    bool supervised_only = false;  // warning: the gate selected nothing
    std::vector<SelectionRow> rows;

    std::string summary() const;
};

struct SslRoundResult {
    Model student;
    PredictionTable ensemble;  // zoo prediction over the unlabeled set
    std::vector<SeriesRecord> pseudo_series;
    SslRoundReport report;
};

// rank-weighted zoo prediction (weights from the canonical nesting of ranks)
PredictionTable zoo_predict(std::vector<ZooMember>& zoo, SeriesStore& store,
                            const std::vector<SeriesRecord>& series);

// One self-training cycle: ensemble-predict the unlabeled set, gate + binarize,
// retrain a fresh student on labeled + pseudo, replace the zoo's worst member
// if the student beats it, re-rank the zoo by validation loss.
SslRoundResult ssl_round(std::vector<ZooMember>& zoo, SeriesStore& store,
                         const std::vector<SeriesRecord>& labeled_train,
                         const std::vector<SeriesRecord>& val_series,
                         const std::vector<SeriesRecord>& unlabeled, const TrainConfig& train_config,
                         const SslConfig& ssl_config, std::size_t round_index);

// "round,series_id,min_confidence,selected"
void save_selection_report(const std::string& path, std::size_t round,
                           const std::vector<SelectionRow>& rows);

// labeled-manifest columns plus a provenance column
void save_pseudo_manifest(const std::string& path, const std::vector<SeriesRecord>& pseudo,
                          const std::string& provenance);

}  // namespace ihd
