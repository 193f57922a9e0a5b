#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ihd/autodiff.hpp"
#include "ihd/config.hpp"
#include "ihd/labels.hpp"
#include "ihd/preprocess.hpp"

namespace ihd {

enum class NormPlacement { pre, post };

inline constexpr std::size_t kAutoShift = static_cast<std::size_t>(-1);

struct ModelConfig {
    std::size_t resolution = 224;
    std::size_t patch = 4;
    std::size_t embed_dim = 128;              // C
    std::vector<std::size_t> depths = {2, 2, 18, 2};
    std::vector<std::size_t> heads = {4, 8, 16, 32};
    std::size_t window = 7;
    std::size_t shift = kAutoShift;           // kAutoShift -> window/2
    std::size_t mlp_ratio = 4;
    NormPlacement norm = NormPlacement::post;
    std::size_t seq_layers = 2;
    std::size_t seq_heads = 2;
    std::size_t num_classes = kNumClasses;
    bool logical_any = false;
    std::size_t max_slices = 60;
    bool inter_ext = true;                    // sequence transformer on/off
    bool ds = true;                           // auxiliary head on/off

    void validate() const;
    std::size_t stages() const { return depths.size(); }
    std::size_t effective_shift() const { return shift == kAutoShift ? window / 2 : shift; }
    std::size_t grid_at(std::size_t stage) const { return (resolution / patch) >> stage; }
    std::size_t dim_at(std::size_t stage) const { return embed_dim << stage; }
    std::size_t feature_dim() const { return dim_at(stages() - 1); }
    // heads emit 5 logits in logical_any mode (the "any" column is derived)
    std::size_t head_outputs() const { return logical_any ? num_classes - 1 : num_classes; }

    static ModelConfig from_config(const KeyValueConfig& cfg);
    void to_config(KeyValueConfig& cfg) const;
};

struct Model {
    ModelConfig config;
    std::vector<std::pair<std::string, NodePtr>> params;  // creation == checkpoint order
    std::map<std::string, std::size_t> index;
    std::size_t intra_param_end = 0;  // params before this index form the intra-slice extractor

    const NodePtr& param(const std::string& name) const;
    std::vector<NodePtr> param_nodes() const;
    std::size_t param_count() const;
    std::size_t intra_param_count() const;
    std::vector<DenseArray> snapshot() const;
    void restore(const std::vector<DenseArray>& values);
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

// ---- window machinery (shared with tests) ----

// Permutation taking window-grouped positions to flat token indices: after the
// cyclic shift by -shift, groups are window x window tiles in row-major order.
std::vector<std::size_t> window_permutation(std::size_t grid, std::size_t window, std::size_t shift);
// tokens: [G*G, C] or [G, G, C]; forward groups, inverse reassembles.
DenseArray window_partition(const DenseArray& tokens, std::size_t window, std::size_t shift, bool inverse);
// Additive mask [nw, 1, S, S]: 0 where a pair shares both wrap fragments,
// -1e30 across the shift boundary. All-zero when shift == 0.
DenseArray window_attention_mask(std::size_t grid, std::size_t window, std::size_t shift);
// Row of the relative position bias table for every in-window token pair.
std::vector<std::size_t> relative_bias_index(std::size_t window);

// ---- forward passes ----

struct IntraOutput {
    NodePtr features;    // [N, D]
    NodePtr aux_logits;  // [N, head_outputs]; null when ds is off
};
IntraOutput intra_forward(const Model& model, const SeriesBatch& batch);

struct SequenceOutput {
    NodePtr features;     // [N, D]
    NodePtr main_logits;  // [N, head_outputs]
};
SequenceOutput sequence_forward(const Model& model, const NodePtr& features);

struct ForwardOutput {
    NodePtr intra_features;
    NodePtr seq_features;
    NodePtr aux_logits;   // null when ds off
    NodePtr main_logits;
};
ForwardOutput model_forward(const Model& model, const SeriesBatch& batch);

double logical_any_prob(const std::array<double, 5>& subtype_probs);

// Sigmoid of the main-head logits; in logical_any mode the "any" column is the
// max of the five subtype probabilities.
std::vector<std::array<double, kNumClasses>> predict(const Model& model, const SeriesBatch& batch);

}  // namespace ihd
