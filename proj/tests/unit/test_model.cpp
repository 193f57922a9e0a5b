#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "ihd/checkpoint.hpp"
#include "ihd/errors.hpp"
#include "ihd/model.hpp"
#include "ihd/rng.hpp"

using namespace ihd;

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
    c.norm = NormPlacement::pre;
    return c;
}

SeriesBatch random_batch(std::size_t slices, std::size_t resolution, std::uint64_t seed) {
    Rng rng(seed);
    SeriesBatch b;
    b.series_id = "t";
    b.num_slices = slices;
    b.height = b.width = resolution;
    b.images.resize(slices * 3 * resolution * resolution);
    for (double& p : b.images) p = rng.uniform();
    return b;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("window permutation is a permutation; partition round-trips exactly") {
    for (std::size_t grid : {4u, 6u, 8u}) {
        for (std::size_t window : {1u, 2u}) {
            if (grid % window != 0) continue;
            for (std::size_t shift = 0; shift < window; ++shift) {
                const auto perm = window_permutation(grid, window, shift);
                auto sorted = perm;
                std::sort(sorted.begin(), sorted.end());
                std::vector<std::size_t> iota_v(grid * grid);
                std::iota(iota_v.begin(), iota_v.end(), 0);
                REQUIRE(sorted == iota_v);

                Rng rng(grid * 100 + window * 10 + shift);
                DenseArray tokens({grid * grid, 3}, 0.0);
                for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.uniform();
                const DenseArray grouped = window_partition(tokens, window, shift, false);
                const DenseArray back = window_partition(grouped, window, shift, true);
                CHECK(back.values() == tokens.values());
            }
        }
    }
    // window == grid with a large shift still round-trips
    DenseArray t({64, 2}, 0.5);
    const DenseArray g = window_partition(t, 8, 3, false);
    CHECK(window_partition(g, 8, 3, true).values() == t.values());
}

TEST_CASE("relative bias index hits the table center on the diagonal") {
    for (std::size_t w : {2u, 4u}) {
        const auto idx = relative_bias_index(w);
        const std::size_t s = w * w, span = 2 * w - 1;
        REQUIRE(idx.size() == s * s);
        const std::size_t center = (w - 1) * span + (w - 1);
        for (std::size_t i = 0; i < s; ++i) {
            CHECK(idx[i * s + i] == center);
            for (std::size_t j = 0; j < s; ++j) CHECK(idx[i * s + j] < span * span);
        }
        // pair symmetry: index(i,j) and index(j,i) mirror through the center
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
                const std::size_t a = idx[i * s + j], b = idx[j * s + i];
                CHECK(a / span + b / span == 2 * (w - 1));
                CHECK(a % span + b % span == 2 * (w - 1));
            }
        }
    }
}

TEST_CASE("shifted-window mask blocks exactly the wrapped fragments") {
    const DenseArray none = window_attention_mask(8, 4, 0);
    for (std::size_t i = 0; i < none.size(); ++i) CHECK(none[i] == 0.0);

    const std::size_t grid = 8, window = 4, shift = 2;
    const DenseArray mask = window_attention_mask(grid, window, shift);
    const std::size_t nw = (grid / window) * (grid / window), s = window * window;
    REQUIRE(mask.shape() == Shape{nw, 1, s, s});
    const auto perm = window_permutation(grid, window, shift);
    std::size_t blocked = 0;
    for (std::size_t w = 0; w < nw; ++w) {
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
                const double m = mask[(w * s + i) * s + j];
                CHECK((m == 0.0 || m == -1e30));
                CHECK(m == mask[(w * s + j) * s + i]);  // symmetric
                // fragment ids from the original (unrolled) coordinates
                const std::size_t ti = perm[w * s + i], tj = perm[w * s + j];
                const bool fi_r = (ti / grid) >= grid - shift, fj_r = (tj / grid) >= grid - shift;
                const bool fi_c = (ti % grid) >= grid - shift, fj_c = (tj % grid) >= grid - shift;
                const bool same = fi_r == fj_r && fi_c == fj_c;
                CHECK(m == (same ? 0.0 : -1e30));
                blocked += m != 0.0;
            }
        }
    }
    CHECK(blocked > 0);
}

TEST_CASE("config validation rejects inconsistent geometry") {
    ModelConfig c = tiny_config();
    c.validate();
    c.resolution = 30;  // not a multiple of patch
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.heads = {2};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.window = 3;  // does not divide the stage-0 grid
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.shift = 4;  // must stay below window
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.seq_heads = 5;  // must divide the feature dim
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.heads = {3, 4};  // must divide the stage dim
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config round-trips through key-value form") {
    ModelConfig c = tiny_config();
    c.logical_any = true;
    c.ds = false;
    KeyValueConfig kv;
    c.to_config(kv);
    const ModelConfig d = ModelConfig::from_config(kv);
    CHECK(d.resolution == c.resolution);
    CHECK(d.depths == c.depths);
    CHECK(d.heads == c.heads);
    CHECK(d.norm == c.norm);
    CHECK(d.logical_any == c.logical_any);
    CHECK(d.ds == c.ds);
    CHECK(d.effective_shift() == c.effective_shift());
}

TEST_CASE("build_model is seed-deterministic and zero-inits the right params") {
    const ModelConfig c = tiny_config();
    const Model a = build_model(c, 5);
    const Model b = build_model(c, 5);
    const Model other = build_model(c, 6);
    REQUIRE(a.params.size() == b.params.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].first == b.params[i].first);
        CHECK(a.params[i].second->value.values() == b.params[i].second->value.values());
        if (a.params[i].second->value.values() != other.params[i].second->value.values()) any_diff = true;
    }
    CHECK(any_diff);

    for (const char* name : {"patch_embed.bias", "stage0.block0.attn.rel_bias", "head2.bias"}) {
        const auto& v = a.param(name)->value;
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);
    }
    for (const char* name : {"stage0.block0.norm1.gain", "stage0.merge.norm.gain"}) {
        const auto& v = a.param(name)->value;
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 1.0);
    }
    CHECK(a.intra_param_count() < a.param_count());
    CHECK_THROWS_AS(a.param("no.such.param"), ValidationError);
}

TEST_CASE("intra features are equivariant to slice order; the sequence head is not") {
    ModelConfig c = tiny_config();
    c.inter_ext = false;
    c.ds = false;
    const Model intra_only = build_model(c, 8);
    const SeriesBatch batch = random_batch(3, c.resolution, 99);
    SeriesBatch swapped = batch;
    const std::size_t plane = 3 * c.resolution * c.resolution;
    for (std::size_t i = 0; i < plane; ++i) {
        std::swap(swapped.images[0 * plane + i], swapped.images[2 * plane + i]);
    }

    const auto base = predict(intra_only, batch);
    const auto perm = predict(intra_only, swapped);
    REQUIRE(base.size() == 3);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(base[0][k] == perm[2][k]);
        CHECK(base[2][k] == perm[0][k]);
        CHECK(base[1][k] == perm[1][k]);
    }

    ModelConfig c2 = tiny_config();
    const Model full = build_model(c2, 8);
    const auto fb = predict(full, batch);
    const auto fp = predict(full, swapped);
    double diff = 0.0;
    for (std::size_t k = 0; k < 6; ++k) diff += std::abs(fb[1][k] - fp[1][k]);
    CHECK(diff > 1e-9);  // position embeddings break the symmetry
}

TEST_CASE("logical_any derives the sixth probability as the max subtype") {
    ModelConfig c = tiny_config();
    c.logical_any = true;
    const Model m = build_model(c, 4);
    CHECK(m.config.head_outputs() == 5);
    const auto rows = predict(m, random_batch(2, c.resolution, 7));
    for (const auto& r : rows) {
        const double want = std::max({r[0], r[1], r[2], r[3], r[4]});
        CHECK(r[5] == want);
    }
    CHECK(logical_any_prob({0.1, 0.9, 0.2, 0.3, 0.4}) == 0.9);
}

TEST_CASE("pre-norm residual blocks collapse to identity when zeroed") {
    ModelConfig c = tiny_config();
    c.ds = false;
    Model m = build_model(c, 21);
    for (const char* name : {"seq.layer0.attn.proj.weight", "seq.layer0.attn.proj.bias",
                             "seq.layer0.mlp.fc2.weight", "seq.layer0.mlp.fc2.bias"}) {
        m.param(name)->value.fill(0.0);
    }
    const SeriesBatch batch = random_batch(4, c.resolution, 3);
    const IntraOutput intra = intra_forward(m, batch);
    const ForwardOutput fwd = model_forward(m, batch);

    // expected: head2 @ (features + positional rows)
    const std::size_t N = 4, D = c.feature_dim(), out = 6;
    const auto& F = intra.features->value;
    const auto& P = m.param("pos_embed")->value;
    const auto& W = m.param("head2.weight")->value;
    const auto& B = m.param("head2.bias")->value;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = B[o];
            for (std::size_t d = 0; d < D; ++d) acc += (F[n * D + d] + P[n * D + d]) * W[d * out + o];
            CHECK(fwd.main_logits->value[n * out + o] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("deep supervision head appears only when enabled") {
    ModelConfig c = tiny_config();
    const Model with = build_model(c, 2);
    CHECK(model_forward(with, random_batch(1, c.resolution, 1)).aux_logits != nullptr);
    c.ds = false;
    const Model without = build_model(c, 2);
    CHECK(model_forward(without, random_batch(1, c.resolution, 1)).aux_logits == nullptr);
    CHECK(with.param_count() == without.param_count() + (c.feature_dim() + 1) * 6);
}

TEST_CASE("too many slices for the positional table is a config error") {
    ModelConfig c = tiny_config();
    c.max_slices = 2;
    const Model m = build_model(c, 2);
    CHECK_THROWS_AS(model_forward(m, random_batch(3, c.resolution, 1)), ConfigError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "ihd-ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "m.ihd").string();

    ModelConfig c = tiny_config();
    c.norm = NormPlacement::post;
    const Model m = build_model(c, 77);
    save_checkpoint(m, path);
    const Model n = load_checkpoint(path);
    REQUIRE(n.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CHECK(n.params[i].first == m.params[i].first);
        CHECK(n.params[i].second->value.values() == m.params[i].second->value.values());
    }
    CHECK(n.config.norm == NormPlacement::post);

    const SeriesBatch batch = random_batch(2, c.resolution, 5);
    const auto pa = predict(m, batch), pb = predict(n, batch);
    for (std::size_t s = 0; s < pa.size(); ++s) {
        for (std::size_t k = 0; k < 6; ++k) CHECK(pa[s][k] == pb[s][k]);
    }

    // truncated payload is rejected
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream outf(path, std::ios::binary);
    outf.write(bytes.data(), long(bytes.size()) - 64);
    outf.close();
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    fs::remove_all(dir);
}

TEST_SUITE_END();
