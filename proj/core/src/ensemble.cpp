#include "ihd/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "ihd/errors.hpp"

namespace ihd {

namespace {

std::string key_label(const PredictionTable::Key& key, std::size_t cls) {
    return "ID_" + key.first + "_" + std::to_string(key.second) + "_" + kClassNames[cls];
}

std::string key_label(const PredictionTable::Key& key) {
    return "ID_" + key.first + "_" + std::to_string(key.second);
}

constexpr double kUnset = -1.0;

}  // namespace

void PredictionTable::set(const std::string& series, std::size_t slice, const Row& probs) {
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("prediction outside [0,1] for " + key_label({series, slice}));
        }
    }
    rows_[{series, slice}] = probs;
}

void PredictionTable::set_one(const std::string& series, std::size_t slice, std::size_t cls, double p) {
    if (cls >= kNumClasses) throw ValidationError("class index out of range");
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("prediction outside [0,1] for " + key_label({series, slice}, cls));
    }
    auto it = rows_.find({series, slice});
    if (it == rows_.end()) {
        Row fresh;
        fresh.fill(kUnset);
        it = rows_.emplace(Key{series, slice}, fresh).first;
    }
    it->second[cls] = p;
}

bool PredictionTable::has(const std::string& series, std::size_t slice) const {
    return rows_.count({series, slice}) > 0;
}

const PredictionTable::Row& PredictionTable::row(const std::string& series, std::size_t slice) const {
    auto it = rows_.find({series, slice});
    if (it == rows_.end()) throw DataError("missing prediction row " + key_label({series, slice}));
    return it->second;
}

void PredictionTable::validate() const {
    for (const auto& [key, row] : rows_) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (!(row[c] >= 0.0 && row[c] <= 1.0)) {
                throw DataError("incomplete or invalid prediction " + key_label(key, c));
            }
        }
    }
}

TruthTable truth_from_records(const std::vector<SliceRecord>& rows) {
    TruthTable truth;
    for (const SliceRecord& r : rows) {
        if (!r.has_labels) continue;
        truth[{r.series_id, r.slice_index}] = r.labels;
    }
    return truth;
}

void MetricConfig::validate() const {
    for (double w : weights) {
        if (w <= 0.0) throw ValidationError("metric weights must be positive");
    }
    if (!(clip > 0.0 && clip < 0.5)) throw ValidationError("metric clip must be in (0, 0.5)");
}

double weighted_logloss(const PredictionTable& preds, const TruthTable& truth, const MetricConfig& config) {
    config.validate();
    preds.validate();
    if (preds.empty()) throw DataError("weighted_logloss: empty prediction table");
    for (const auto& [key, labels] : truth) {
        if (!preds.rows().count(key)) {
            throw DataError("weighted_logloss: predictions missing key " + key_label(key));
        }
    }
    double weight_sum = 0.0;
    for (double w : config.weights) weight_sum += w;

    double total = 0.0;
    for (const auto& [key, row] : preds.rows()) {
        auto it = truth.find(key);
        if (it == truth.end()) throw DataError("weighted_logloss: truth missing key " + key_label(key));
        const LabelVector& y = it->second;
        double slice_loss = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double p = std::clamp(row[c], config.clip, 1.0 - config.clip);
            const double term = y[c] ? -std::log(p) : -std::log1p(-p);
            slice_loss += config.weights[c] * term;
        }
        total += slice_loss / weight_sum;
    }
    return total / static_cast<double>(preds.size());
}

// ---- rank weighting ----

RankNode RankNode::member_node(std::size_t member, std::size_t rank) {
    RankNode n;
    n.leaf = true;
    n.member = member;
    n.rank = rank;
    return n;
}

RankNode RankNode::group(RankNode a, RankNode b) {
    RankNode n;
    n.leaf = false;
    n.children.push_back(std::move(a));
    n.children.push_back(std::move(b));
    return n;
}

namespace {

std::size_t tree_rank(const RankNode& node) {
    if (node.leaf) {
        if (node.rank < 1) throw ValidationError("member rank must be a positive integer");
        return node.rank;
    }
    if (node.children.size() != 2) {
        throw StructureError("rank group must contain exactly 2 elements, got " +
                             std::to_string(node.children.size()));
    }
    return tree_rank(node.children[0]) + tree_rank(node.children[1]);
}

void collect(const RankNode& node, double factor, std::vector<double>& out,
             std::vector<std::size_t>& leaf_ranks) {
    if (node.leaf) {
        if (node.member >= out.size()) throw StructureError("rank tree references unknown member");
        if (out[node.member] != 0.0) throw StructureError("rank tree repeats a member");
        out[node.member] = factor;
        leaf_ranks.push_back(node.rank);
        return;
    }
    const double ra = static_cast<double>(tree_rank(node.children[0]));
    const double rb = static_cast<double>(tree_rank(node.children[1]));
    collect(node.children[0], factor * (rb / (ra + rb)), out, leaf_ranks);
    collect(node.children[1], factor * (ra / (ra + rb)), out, leaf_ranks);
}

}  // namespace

std::vector<double> rank_weights(const RankNode& tree, std::size_t num_members) {
    if (num_members == 0) throw StructureError("rank_weights: no members");
    tree_rank(tree);  // validates group arity and positive ranks
    std::vector<double> out(num_members, 0.0);
    std::vector<std::size_t> leaf_ranks;
    collect(tree, 1.0, out, leaf_ranks);
    std::size_t leaves = leaf_ranks.size();
    if (leaves != num_members) throw StructureError("rank tree does not cover every member exactly once");
    std::sort(leaf_ranks.begin(), leaf_ranks.end());
    if (std::adjacent_find(leaf_ranks.begin(), leaf_ranks.end()) != leaf_ranks.end()) {
        throw ValidationError("member ranks must be unique");
    }
    return out;
}

RankNode canonical_nesting(const std::vector<std::size_t>& ranks) {
    if (ranks.empty()) throw StructureError("canonical_nesting: no members");
    std::vector<std::size_t> order(ranks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ranks[a] < ranks[b]; });
    RankNode tree = RankNode::member_node(order[0], ranks[order[0]]);
    for (std::size_t i = 1; i < order.size(); ++i) {
        tree = RankNode::group(std::move(tree), RankNode::member_node(order[i], ranks[order[i]]));
    }
    return tree;
}

PredictionTable ensemble_average(const std::vector<PredictionTable>& members,
                                 const std::vector<double>& weights) {
    if (members.empty()) throw StructureError("ensemble_average: no members");
    if (members.size() != weights.size()) throw StructureError("ensemble_average: weight count mismatch");
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("ensemble weights must sum to 1");

    for (const PredictionTable& t : members) {
        t.validate();
        if (t.size() != members[0].size()) {
            throw DataError("ensemble_average: member tables have different key sets");
        }
        for (const auto& [key, row] : t.rows()) {
            if (!members[0].rows().count(key)) {
                throw DataError("ensemble_average: member missing key " + key_label(key));
            }
        }
    }
    PredictionTable out;
    for (const auto& [key, base_row] : members[0].rows()) {
        PredictionTable::Row mixed{};
        for (std::size_t i = 0; i < members.size(); ++i) {
            const auto& row = members[i].rows().at(key);
            for (std::size_t c = 0; c < kNumClasses; ++c) mixed[c] += weights[i] * row[c];
        }
        for (double& p : mixed) p = std::clamp(p, 0.0, 1.0);
        out.set(key.first, key.second, mixed);
    }
    return out;
}

PredictionTable threshold_snap(const PredictionTable& table, double tau_h, double tau_l, double eps) {
    if (!(tau_l > 0.0 && tau_l < tau_h && tau_h < 1.0)) {
        throw ValidationError("threshold_snap: need 0 < tau_l < tau_h < 1");
    }
    if (!(eps > 0.0 && eps < 0.5)) throw ValidationError("threshold_snap: eps must be in (0, 0.5)");
    table.validate();
    PredictionTable out = table;
    for (auto& [key, row] : out.rows()) {
        for (double& p : row) {
            if (p > tau_h) p = 1.0 - eps;
            else if (p < tau_l) p = eps;
        }
    }
    return out;
}

// ---- prediction file IO ----

void save_predictions(const std::string& path, const PredictionTable& table) {
    table.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "ID,Label\n";
    char buf[64];
    for (const auto& [key, row] : table.rows()) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            std::snprintf(buf, sizeof(buf), "%.6g", row[c]);
            out << key_label(key, c) << "," << buf << "\n";
        }
    }
    if (!out) throw IoError("short write to " + path);
}

PredictionTable load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    PredictionTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line == "ID,Label") continue;
        const std::size_t comma = line.find_last_of(',');
        if (comma == std::string::npos || line.rfind("ID_", 0) != 0) {
            throw DataError(path + " line " + std::to_string(lineno) + ": malformed row");
        }
        const std::string id = line.substr(3, comma - 3);
        const std::string value = line.substr(comma + 1);
        const std::size_t u2 = id.find_last_of('_');
        if (u2 == std::string::npos) throw DataError(path + " line " + std::to_string(lineno) + ": malformed ID");
        const std::size_t u1 = id.find_last_of('_', u2 - 1);
        if (u1 == std::string::npos) throw DataError(path + " line " + std::to_string(lineno) + ": malformed ID");
        const std::string series = id.substr(0, u1);
        const std::string slice_text = id.substr(u1 + 1, u2 - u1 - 1);
        const std::string cls_name = id.substr(u2 + 1);
        std::size_t cls = kNumClasses;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (cls_name == kClassNames[c]) {
                cls = c;
                break;
            }
        }
        if (cls == kNumClasses) {
            throw DataError(path + " line " + std::to_string(lineno) + ": unknown class " + cls_name);
        }
        std::size_t slice = 0;
        double p = 0.0;
        try {
            slice = static_cast<std::size_t>(std::stoull(slice_text));
            p = std::stod(value);
        } catch (const std::exception&) {
            throw DataError(path + " line " + std::to_string(lineno) + ": malformed row");
        }
        table.set_one(series, slice, cls, p);
    }
    table.validate();  // rejects slices with missing classes
    return table;
}

}  // namespace ihd
