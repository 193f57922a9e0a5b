#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ihd/data.hpp"
#include "ihd/labels.hpp"

namespace ihd {

// (series, slice) -> per-class probabilities.
class PredictionTable {
  public:
    using Key = std::pair<std::string, std::size_t>;
    using Row = std::array<double, kNumClasses>;

    void set(const std::string& series, std::size_t slice, const Row& probs);
    void set_one(const std::string& series, std::size_t slice, std::size_t cls, double p);
    bool has(const std::string& series, std::size_t slice) const;
    const Row& row(const std::string& series, std::size_t slice) const;

    const std::map<Key, Row>& rows() const { return rows_; }
    std::map<Key, Row>& rows() { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    // every class present and inside [0,1]
    void validate() const;

  private:
    std::map<Key, Row> rows_;
};

using TruthTable = std::map<PredictionTable::Key, LabelVector>;

TruthTable truth_from_records(const std::vector<SliceRecord>& rows);

struct MetricConfig {
    std::array<double, kNumClasses> weights = kMetricWeights;  // 2 on "any"
    double clip = 1e-7;
    void validate() const;
};

// Per slice: sum_c w_c * BCE(clip(p), y) / sum_c w_c; mean over slices.
double weighted_logloss(const PredictionTable& preds, const TruthTable& truth,
                        const MetricConfig& config = MetricConfig{});

// Pairwise rank weighting: a node is a member (leaf) or a group of exactly
// two nodes; a group's rank is the sum of the ranks beneath it.
struct RankNode {
    bool leaf = true;
    std::size_t member = 0;  // leaf: index into the member list
    std::size_t rank = 0;    // leaf: positive leaderboard rank
    std::vector<RankNode> children;

    static RankNode member_node(std::size_t member, std::size_t rank);
    static RankNode group(RankNode a, RankNode b);
};

// weights indexed by member id; positive, sum to 1
std::vector<double> rank_weights(const RankNode& tree, std::size_t num_members);

// Left-nested tree over members sorted by ascending rank: {{{m0,m1},m2},...}.
RankNode canonical_nesting(const std::vector<std::size_t>& ranks);

PredictionTable ensemble_average(const std::vector<PredictionTable>& members,
                                 const std::vector<double>& weights);

// p > tau_h -> 1-eps, p < tau_l -> eps, else unchanged.
PredictionTable threshold_snap(const PredictionTable& table, double tau_h, double tau_l, double eps = 1e-7);

// "ID,Label" CSV: ID_<series>_<slice>_<class>, probability at 6 significant digits.
void save_predictions(const std::string& path, const PredictionTable& table);
PredictionTable load_predictions(const std::string& path);

}  // namespace ihd
