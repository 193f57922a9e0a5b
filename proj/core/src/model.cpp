#include "ihd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ihd/errors.hpp"
#include "ihd/rng.hpp"

namespace ihd {

// ---- configuration ----

void ModelConfig::validate() const {
    if (patch < 1 || resolution < patch || resolution % patch != 0) {
        throw ConfigError("model: resolution must be a positive multiple of patch size");
    }
    if (depths.empty()) throw ConfigError("model: at least one stage required");
    if (heads.size() != depths.size()) throw ConfigError("model: heads list must match depths list");
    if (window < 1) throw ConfigError("model: window must be >= 1");
    if (effective_shift() >= window) throw ConfigError("model: shift must be smaller than window");
    if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
    if (num_classes != kNumClasses) {
        throw ConfigError("model: num_classes must be " + std::to_string(kNumClasses));
    }
    if (seq_layers < 1) throw ConfigError("model: sequence layers must be >= 1");
    if (seq_heads < 1 || feature_dim() % seq_heads != 0) {
        throw ConfigError("model: sequence heads must divide the feature dim");
    }
    if (max_slices < 1) throw ConfigError("model: max_slices must be >= 1");
    for (std::size_t s = 0; s < depths.size(); ++s) {
        if (depths[s] < 1) throw ConfigError("model: stage depth must be >= 1");
        const std::size_t grid = grid_at(s);
        if (grid < 1 || grid % window != 0) {
            throw ConfigError("model: token grid at stage " + std::to_string(s) + " (" + std::to_string(grid) +
                              ") is not divisible by window " + std::to_string(window));
        }
        if (s + 1 < depths.size() && grid % 2 != 0) {
            throw ConfigError("model: token grid at stage " + std::to_string(s) + " must be even for merging");
        }
        if (dim_at(s) % heads[s] != 0) {
            throw ConfigError("model: heads at stage " + std::to_string(s) + " must divide the stage dim");
        }
    }
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg) {
    ModelConfig m;
    m.resolution = cfg.get_size("model.resolution", m.resolution);
    m.patch = cfg.get_size("model.patch", m.patch);
    m.embed_dim = cfg.get_size("model.embed_dim", m.embed_dim);
    m.depths = cfg.get_size_list("model.depths", m.depths);
    m.heads = cfg.get_size_list("model.heads", m.heads);
    m.window = cfg.get_size("model.window", m.window);
    const std::string shift = cfg.get_string("model.shift", "auto");
    m.shift = shift == "auto" ? kAutoShift : static_cast<std::size_t>(std::stoull(shift));
    m.mlp_ratio = cfg.get_size("model.mlp_ratio", m.mlp_ratio);
    const std::string norm = cfg.get_string("model.norm", "post");
    if (norm == "pre") m.norm = NormPlacement::pre;
    else if (norm == "post") m.norm = NormPlacement::post;
    else throw ConfigError("model.norm must be 'pre' or 'post', got " + norm);
    m.seq_layers = cfg.get_size("model.seq_layers", m.seq_layers);
    m.seq_heads = cfg.get_size("model.seq_heads", m.seq_heads);
    m.num_classes = cfg.get_size("model.num_classes", m.num_classes);
    m.logical_any = cfg.get_bool("model.logical_any", m.logical_any);
    m.max_slices = cfg.get_size("model.max_slices", m.max_slices);
    m.inter_ext = cfg.get_bool("model.inter_ext", m.inter_ext);
    m.ds = cfg.get_bool("model.ds", m.ds);
    m.validate();
    return m;
}

void ModelConfig::to_config(KeyValueConfig& cfg) const {
    auto join = [](const std::vector<std::size_t>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(v[i]);
        }
        return out;
    };
    cfg.set("model.resolution", std::to_string(resolution));
    cfg.set("model.patch", std::to_string(patch));
    cfg.set("model.embed_dim", std::to_string(embed_dim));
    cfg.set("model.depths", join(depths));
    cfg.set("model.heads", join(heads));
    cfg.set("model.window", std::to_string(window));
    cfg.set("model.shift", std::to_string(effective_shift()));
    cfg.set("model.mlp_ratio", std::to_string(mlp_ratio));
    cfg.set("model.norm", norm == NormPlacement::pre ? "pre" : "post");
    cfg.set("model.seq_layers", std::to_string(seq_layers));
    cfg.set("model.seq_heads", std::to_string(seq_heads));
    cfg.set("model.num_classes", std::to_string(num_classes));
    cfg.set("model.logical_any", logical_any ? "1" : "0");
    cfg.set("model.max_slices", std::to_string(max_slices));
    cfg.set("model.inter_ext", inter_ext ? "1" : "0");
    cfg.set("model.ds", ds ? "1" : "0");
}

// ---- model construction ----

const NodePtr& Model::param(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("unknown model parameter: " + name);
    return params[it->second].second;
}

std::vector<NodePtr> Model::param_nodes() const {
    std::vector<NodePtr> out;
    out.reserve(params.size());
    for (const auto& [name, node] : params) out.push_back(node);
    return out;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, node] : params) n += node->value.size();
    return n;
}

std::size_t Model::intra_param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < intra_param_end; ++i) n += params[i].second->value.size();
    return n;
}

std::vector<DenseArray> Model::snapshot() const {
    std::vector<DenseArray> out;
    out.reserve(params.size());
    for (const auto& [name, node] : params) out.push_back(node->value);
    return out;
}

void Model::restore(const std::vector<DenseArray>& values) {
    if (values.size() != params.size()) throw ValidationError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].shape() != params[i].second->value.shape()) {
            throw ValidationError("restore: shape mismatch at " + params[i].first);
        }
        params[i].second->value = values[i];
    }
}

namespace {

enum class Init { trunc, zero, one };

struct Builder {
    Model& model;
    Rng& rng;

    void add(const std::string& name, Shape shape, Init init) {
        DenseArray value(std::move(shape), 0.0);
        if (init == Init::trunc) {
            for (std::size_t i = 0; i < value.size(); ++i) value[i] = rng.truncated_normal(0.02);
        } else if (init == Init::one) {
            value.fill(1.0);
        }
        model.index[name] = model.params.size();
        model.params.emplace_back(name, parameter(std::move(value)));
    }

    void add_norm(const std::string& base, std::size_t dim) {
        add(base + ".gain", {dim}, Init::one);
        add(base + ".bias", {dim}, Init::zero);
    }

    void add_attention(const std::string& base, std::size_t dim) {
        add(base + ".wq", {dim, dim}, Init::trunc);
        add(base + ".bq", {dim}, Init::zero);
        add(base + ".wk", {dim, dim}, Init::trunc);
        add(base + ".bk", {dim}, Init::zero);
        add(base + ".wv", {dim, dim}, Init::trunc);
        add(base + ".bv", {dim}, Init::zero);
        add(base + ".proj.weight", {dim, dim}, Init::trunc);
        add(base + ".proj.bias", {dim}, Init::zero);
    }

    void add_mlp(const std::string& base, std::size_t dim, std::size_t ratio) {
        add(base + ".fc1.weight", {dim, ratio * dim}, Init::trunc);
        add(base + ".fc1.bias", {ratio * dim}, Init::zero);
        add(base + ".fc2.weight", {ratio * dim, dim}, Init::trunc);
        add(base + ".fc2.bias", {dim}, Init::zero);
    }
};

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model model;
    model.config = config;
    Rng rng(derive_seed(seed, "model-init"));
    Builder b{model, rng};

    const std::size_t p = config.patch;
    b.add("patch_embed.weight", {3 * p * p, config.embed_dim}, Init::trunc);
    b.add("patch_embed.bias", {config.embed_dim}, Init::zero);

    const std::size_t bias_rows = (2 * config.window - 1) * (2 * config.window - 1);
    for (std::size_t s = 0; s < config.stages(); ++s) {
        const std::size_t dim = config.dim_at(s);
        for (std::size_t blk = 0; blk < config.depths[s]; ++blk) {
            const std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(blk);
            b.add_norm(base + ".norm1", dim);
            b.add_attention(base + ".attn", dim);
            b.add(base + ".attn.rel_bias", {bias_rows, config.heads[s]}, Init::zero);
            b.add_norm(base + ".norm2", dim);
            b.add_mlp(base + ".mlp", dim, config.mlp_ratio);
        }
        if (s + 1 < config.stages()) {
            const std::string base = "stage" + std::to_string(s) + ".merge";
            b.add_norm(base + ".norm", 4 * dim);
            b.add(base + ".reduction.weight", {4 * dim, 2 * dim}, Init::trunc);
        }
    }
    model.intra_param_end = model.params.size();

    const std::size_t D = config.feature_dim();
    const std::size_t out = config.head_outputs();
    if (config.inter_ext) {
        b.add("pos_embed", {config.max_slices, D}, Init::trunc);
        for (std::size_t l = 0; l < config.seq_layers; ++l) {
            const std::string base = "seq.layer" + std::to_string(l);
            b.add_norm(base + ".norm1", D);
            b.add_attention(base + ".attn", D);
            b.add_norm(base + ".norm2", D);
            b.add_mlp(base + ".mlp", D, config.mlp_ratio);
        }
    }
    if (config.ds) {
        b.add("head1.weight", {D, out}, Init::trunc);
        b.add("head1.bias", {out}, Init::zero);
    }
    b.add("head2.weight", {D, out}, Init::trunc);
    b.add("head2.bias", {out}, Init::zero);
    return model;
}

// ---- window machinery ----

std::vector<std::size_t> window_permutation(std::size_t grid, std::size_t window, std::size_t shift) {
    if (window < 1 || grid % window != 0) {
        throw ConfigError("window_permutation: grid " + std::to_string(grid) + " not divisible by window " +
                          std::to_string(window));
    }
    if (shift >= window) throw ConfigError("window_permutation: shift must be smaller than window");
    const std::size_t nw = grid / window;
    std::vector<std::size_t> perm(grid * grid);
    std::size_t o = 0;
    for (std::size_t wr = 0; wr < nw; ++wr) {
        for (std::size_t wc = 0; wc < nw; ++wc) {
            for (std::size_t ir = 0; ir < window; ++ir) {
                for (std::size_t ic = 0; ic < window; ++ic) {
                    const std::size_t r = (wr * window + ir + shift) % grid;
                    const std::size_t c = (wc * window + ic + shift) % grid;
                    perm[o++] = r * grid + c;
                }
            }
        }
    }
    return perm;
}

DenseArray window_partition(const DenseArray& tokens, std::size_t window, std::size_t shift, bool inverse) {
    std::size_t grid = 0, channels = 0;
    if (tokens.rank() == 3 && tokens.extent(0) == tokens.extent(1)) {
        grid = tokens.extent(0);
        channels = tokens.extent(2);
    } else if (tokens.rank() == 2) {
        grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens.extent(0)))));
        if (grid * grid != tokens.extent(0)) {
            throw ShapeError("window_partition: token count is not a square grid");
        }
        channels = tokens.extent(1);
    } else {
        throw ShapeError("window_partition: expected [G*G, C] or [G, G, C], got " +
                         shape_to_string(tokens.shape()));
    }
    const auto perm = window_permutation(grid, window, shift);
    DenseArray out(tokens.shape(), 0.0);
    const double* src = tokens.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const std::size_t from = inverse ? i : perm[i];
        const std::size_t to = inverse ? perm[i] : i;
        std::copy(src + from * channels, src + (from + 1) * channels, dst + to * channels);
    }
    return out;
}

DenseArray window_attention_mask(std::size_t grid, std::size_t window, std::size_t shift) {
    const std::size_t nw_side = grid / window;
    const std::size_t nw = nw_side * nw_side;
    const std::size_t S = window * window;
    DenseArray mask({nw, 1, S, S}, 0.0);
    if (shift == 0) return mask;
    // fragment flips where the cyclic shift wrapped: rolled coordinate x holds
    // original coordinate (x + shift) mod grid
    auto frag = [&](std::size_t x) { return x >= grid - shift ? 1 : 0; };
    for (std::size_t wr = 0; wr < nw_side; ++wr) {
        for (std::size_t wc = 0; wc < nw_side; ++wc) {
            const std::size_t win = wr * nw_side + wc;
            for (std::size_t i = 0; i < S; ++i) {
                const std::size_t ri = wr * window + i / window;
                const std::size_t ci = wc * window + i % window;
                for (std::size_t j = 0; j < S; ++j) {
                    const std::size_t rj = wr * window + j / window;
                    const std::size_t cj = wc * window + j % window;
                    const bool same = frag(ri) == frag(rj) && frag(ci) == frag(cj);
                    if (!same) mask[((win * S) + i) * S + j] = -1e30;
                }
            }
        }
    }
    return mask;
}

std::vector<std::size_t> relative_bias_index(std::size_t window) {
    const std::size_t S = window * window;
    const std::size_t span = 2 * window - 1;
    std::vector<std::size_t> idx(S * S);
    for (std::size_t i = 0; i < S; ++i) {
        const long ri = static_cast<long>(i / window), ci = static_cast<long>(i % window);
        for (std::size_t j = 0; j < S; ++j) {
            const long rj = static_cast<long>(j / window), cj = static_cast<long>(j % window);
            const std::size_t dr = static_cast<std::size_t>(ri - rj + static_cast<long>(window) - 1);
            const std::size_t dc = static_cast<std::size_t>(ci - cj + static_cast<long>(window) - 1);
            idx[i * S + j] = dr * span + dc;
        }
    }
    return idx;
}

// ---- forward ----

namespace {

NodePtr linear(const Model& m, const NodePtr& x, const std::string& weight, const std::string& bias) {
    return add(matmul(x, m.param(weight)), m.param(bias));
}

// Multi-head attention over B = groups*windows sequences of length S packed
// as [B*S, C]. bias broadcasts per head, mask per window.
NodePtr multi_head_attention(const Model& m, const std::string& base, const NodePtr& x, std::size_t groups,
                             std::size_t windows, std::size_t S, std::size_t heads, const NodePtr& bias,
                             const NodePtr& mask) {
    const std::size_t C = x->value.extent(1);
    const std::size_t dh = C / heads;
    const std::size_t B = groups * windows;

    auto split_heads = [&](const NodePtr& t) {
        return reshape(permute(reshape(t, {B, S, heads, dh}), {0, 2, 1, 3}), {B * heads, S, dh});
    };
    const NodePtr q = split_heads(linear(m, x, base + ".wq", base + ".bq"));
    const NodePtr v = split_heads(linear(m, x, base + ".wv", base + ".bv"));
    const NodePtr k = linear(m, x, base + ".wk", base + ".bk");
    const NodePtr kt = reshape(permute(reshape(k, {B, S, heads, dh}), {0, 2, 3, 1}), {B * heads, dh, S});

    NodePtr scores = scale(bmm(q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = reshape(scores, {groups, windows, heads, S, S});
    if (bias) scores = add(scores, bias);
    if (mask) scores = add(scores, mask);
    const NodePtr att = reshape(softmax(scores, 4), {B * heads, S, S});
    const NodePtr mixed = bmm(att, v);
    const NodePtr merged = reshape(permute(reshape(mixed, {B, heads, S, dh}), {0, 2, 1, 3}), {B * S, C});
    return linear(m, merged, base + ".proj.weight", base + ".proj.bias");
}

NodePtr rel_bias_node(const Model& m, const std::string& base, std::size_t window, std::size_t heads) {
    const std::size_t S = window * window;
    const NodePtr rows = gather_rows(m.param(base + ".rel_bias"), relative_bias_index(window));
    return permute(reshape(rows, {S, S, heads}), {2, 0, 1});
}

NodePtr layer_norm_named(const Model& m, const NodePtr& x, const std::string& base) {
    return layer_norm(x, m.param(base + ".gain"), m.param(base + ".bias"));
}

NodePtr mlp_named(const Model& m, const NodePtr& x, const std::string& base) {
    return linear(m, gelu(linear(m, x, base + ".fc1.weight", base + ".fc1.bias")), base + ".fc2.weight",
                  base + ".fc2.bias");
}

// One Swin block over N slices of a G x G token grid packed as [N*G*G, C].
NodePtr swin_block(const Model& m, NodePtr x, std::size_t stage, std::size_t block, std::size_t N,
                   std::size_t G) {
    const ModelConfig& cfg = m.config;
    const bool pre = cfg.norm == NormPlacement::pre;
    const std::size_t w = cfg.window;
    const std::size_t S = w * w;
    const std::size_t nw = (G / w) * (G / w);
    // alternate 0 / window/2; shifting a single-window map is a no-op
    const std::size_t shift = (block % 2 == 1 && G > w) ? cfg.effective_shift() : 0;
    const std::string base = "stage" + std::to_string(stage) + ".block" + std::to_string(block);

    const auto perm = window_permutation(G, w, shift);
    const std::size_t T = G * G;
    std::vector<std::size_t> full_perm(N * T), inv_perm(N * T);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T; ++t) {
            full_perm[n * T + t] = n * T + perm[t];
            inv_perm[n * T + perm[t]] = n * T + t;
        }
    }

    NodePtr attn_in = pre ? layer_norm_named(m, x, base + ".norm1") : x;
    attn_in = gather_rows(attn_in, full_perm);
    const NodePtr bias = rel_bias_node(m, base + ".attn", w, cfg.heads[stage]);
    NodePtr mask;
    if (shift > 0) mask = constant(window_attention_mask(G, w, shift));
    NodePtr att = multi_head_attention(m, base + ".attn", attn_in, N, nw, S, cfg.heads[stage], bias, mask);
    att = gather_rows(att, inv_perm);

    x = add(x, att);
    if (!pre) x = layer_norm_named(m, x, base + ".norm1");
    const NodePtr mlp_in = pre ? layer_norm_named(m, x, base + ".norm2") : x;
    x = add(x, mlp_named(m, mlp_in, base + ".mlp"));
    if (!pre) x = layer_norm_named(m, x, base + ".norm2");
    return x;
}

// [N*G*G, C] -> [N*(G/2)*(G/2), 2C]: 2x2 row-major concat, norm, project.
NodePtr patch_merge(const Model& m, const NodePtr& x, std::size_t stage, std::size_t N, std::size_t G) {
    const std::size_t C = x->value.extent(1);
    if (G % 2 != 0) throw ConfigError("patch_merge: odd token grid " + std::to_string(G));
    const std::size_t g = G / 2;
    std::vector<std::size_t> idx;
    idx.reserve(N * g * g * 4 * C);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t r = 0; r < g; ++r) {
            for (std::size_t c = 0; c < g; ++c) {
                for (std::size_t k = 0; k < 4; ++k) {
                    const std::size_t token = n * G * G + (2 * r + k / 2) * G + (2 * c + k % 2);
                    for (std::size_t ch = 0; ch < C; ++ch) idx.push_back(token * C + ch);
                }
            }
        }
    }
    const std::string base = "stage" + std::to_string(stage) + ".merge";
    NodePtr merged = gather(x, std::move(idx), {N * g * g, 4 * C});
    merged = layer_norm_named(m, merged, base + ".norm");
    return matmul(merged, m.param(base + ".reduction.weight"));
}

DenseArray patch_tokens(const SeriesBatch& batch, std::size_t patch) {
    const std::size_t N = batch.num_slices, h = batch.height, w = batch.width;
    const std::size_t G = h / patch, T = G * G;
    DenseArray X({N * T, 3 * patch * patch}, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const double* img = batch.image(n);
        for (std::size_t pr = 0; pr < G; ++pr) {
            for (std::size_t pc = 0; pc < G; ++pc) {
                double* row = X.data() + (n * T + pr * G + pc) * 3 * patch * patch;
                for (std::size_t c = 0; c < 3; ++c) {
                    for (std::size_t dr = 0; dr < patch; ++dr) {
                        for (std::size_t dc = 0; dc < patch; ++dc) {
                            row[(c * patch + dr) * patch + dc] =
                                img[c * h * w + (pr * patch + dr) * w + (pc * patch + dc)];
                        }
                    }
                }
            }
        }
    }
    return X;
}

}  // namespace

IntraOutput intra_forward(const Model& model, const SeriesBatch& batch) {
    const ModelConfig& cfg = model.config;
    if (batch.height != cfg.resolution || batch.width != cfg.resolution || batch.channels != 3) {
        throw ShapeError("intra_forward: batch " + std::to_string(batch.height) + "x" +
                         std::to_string(batch.width) + " does not match model resolution " +
                         std::to_string(cfg.resolution));
    }
    if (batch.num_slices < 1) throw ValidationError("intra_forward: empty batch");
    const std::size_t N = batch.num_slices;

    NodePtr x = constant(patch_tokens(batch, cfg.patch));
    x = linear(model, x, "patch_embed.weight", "patch_embed.bias");

    std::size_t G = cfg.resolution / cfg.patch;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        for (std::size_t blk = 0; blk < cfg.depths[s]; ++blk) {
            x = swin_block(model, x, s, blk, N, G);
        }
        if (s + 1 < cfg.stages()) {
            x = patch_merge(model, x, s, N, G);
            G /= 2;
        }
    }

    const std::size_t D = cfg.feature_dim();
    IntraOutput out;
    out.features = mean_axis(reshape(x, {N, G * G, D}), 1);
    if (cfg.ds) out.aux_logits = linear(model, out.features, "head1.weight", "head1.bias");
    return out;
}

SequenceOutput sequence_forward(const Model& model, const NodePtr& features) {
    const ModelConfig& cfg = model.config;
    if (features->value.rank() != 2 || features->value.extent(1) != cfg.feature_dim()) {
        throw ShapeError("sequence_forward: expected [N, " + std::to_string(cfg.feature_dim()) + "] features");
    }
    const std::size_t N = features->value.extent(0);
    if (N < 1) throw ValidationError("sequence_forward: empty feature stack");

    SequenceOutput out;
    if (!cfg.inter_ext) {
        out.features = features;
        out.main_logits = linear(model, features, "head2.weight", "head2.bias");
        return out;
    }
    if (N > cfg.max_slices) {
        throw ConfigError("sequence_forward: " + std::to_string(N) + " slices exceed the positional table (" +
                          std::to_string(cfg.max_slices) + ")");
    }

    std::vector<std::size_t> rows(N);
    std::iota(rows.begin(), rows.end(), 0);
    NodePtr x = add(features, gather_rows(model.param("pos_embed"), rows));

    const bool pre = cfg.norm == NormPlacement::pre;
    for (std::size_t l = 0; l < cfg.seq_layers; ++l) {
        const std::string base = "seq.layer" + std::to_string(l);
        const NodePtr attn_in = pre ? layer_norm_named(model, x, base + ".norm1") : x;
        const NodePtr att =
            multi_head_attention(model, base + ".attn", attn_in, 1, 1, N, cfg.seq_heads, nullptr, nullptr);
        x = add(x, att);
        if (!pre) x = layer_norm_named(model, x, base + ".norm1");
        const NodePtr mlp_in = pre ? layer_norm_named(model, x, base + ".norm2") : x;
        x = add(x, mlp_named(model, mlp_in, base + ".mlp"));
        if (!pre) x = layer_norm_named(model, x, base + ".norm2");
    }
    out.features = x;
    out.main_logits = linear(model, x, "head2.weight", "head2.bias");
    return out;
}

ForwardOutput model_forward(const Model& model, const SeriesBatch& batch) {
    const IntraOutput intra = intra_forward(model, batch);
    const SequenceOutput seq = sequence_forward(model, intra.features);
    return ForwardOutput{intra.features, seq.features, intra.aux_logits, seq.main_logits};
}

double logical_any_prob(const std::array<double, 5>& subtype_probs) {
    return *std::max_element(subtype_probs.begin(), subtype_probs.end());
}

std::vector<std::array<double, kNumClasses>> predict(const Model& model, const SeriesBatch& batch) {
    const ForwardOutput out = model_forward(model, batch);
    const DenseArray& logits = out.main_logits->value;
    const std::size_t N = logits.extent(0);
    const std::size_t cols = logits.extent(1);
    std::vector<std::array<double, kNumClasses>> probs(N);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < cols; ++c) {
            probs[n][c] = 1.0 / (1.0 + std::exp(-logits.at2(n, c)));
        }
        if (model.config.logical_any) {
            std::array<double, 5> sub;
            for (std::size_t c = 0; c < 5; ++c) sub[c] = probs[n][c];
            probs[n][kAnyIndex] = logical_any_prob(sub);
        }
    }
    return probs;
}

}  // namespace ihd
