#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "ihd/data.hpp"
#include "ihd/errors.hpp"
#include "ihd/synth.hpp"

using namespace ihd;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("synth-data");

TEST_CASE("generated labels keep any == OR of subtypes") {
    SynthSpec spec;
    spec.seed = 400;
    spec.num_series = 12;
    for (std::size_t i = 0; i < spec.num_series; ++i) {
        const GeneratedSeries g = generate_series(spec, i);
        REQUIRE(g.labels.size() == g.volume.num_slices);
        for (const LabelVector& y : g.labels) CHECK(y.consistent());
    }
}

TEST_CASE("generation is deterministic per (seed, index)") {
    SynthSpec spec;
    spec.seed = 77;
    const GeneratedSeries a = generate_series(spec, 3);
    const GeneratedSeries b = generate_series(spec, 3);
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.labels.size() == b.labels.size());
    for (std::size_t i = 0; i < a.labels.size(); ++i) CHECK(a.labels[i] == b.labels[i]);

    const GeneratedSeries c = generate_series(spec, 4);
    CHECK(a.volume.data != c.volume.data);
}

TEST_CASE("volumes look like heads: air, skull, brain") {
    SynthSpec spec;
    spec.seed = 12;
    const GeneratedSeries g = generate_series(spec, 0);
    const auto& v = g.volume;
    int air = 0, bone = 0, brain = 0;
    for (std::int16_t hu : v.data) {
        air += hu <= -900;
        bone += hu >= 900;
        brain += hu > -100 && hu < 200;
    }
    const int total = int(v.data.size());
    CHECK(air > total / 6);    // corners are air
    CHECK(bone > 0);           // skull ring
    CHECK(brain > total / 6);  // interior
}

TEST_CASE("class prevalence responds to the configured rates") {
    SynthSpec spec;
    spec.seed = 500;
    spec.num_series = 40;
    spec.class_rates = {0.0, 1.0, 0.5, 0.5, 0.5};
    int iph_series = 0, edh_series = 0;
    for (std::size_t i = 0; i < spec.num_series; ++i) {
        const GeneratedSeries g = generate_series(spec, i);
        bool iph = false, edh = false;
        for (const LabelVector& y : g.labels) {
            iph |= y[1] != 0;
            edh |= y[0] != 0;
        }
        iph_series += iph;
        edh_series += edh;
    }
    CHECK(edh_series == 0);
    CHECK(iph_series == 40);
}

TEST_CASE("split_counts uses the largest-remainder rule") {
    CHECK(split_counts(8, {0.75, 0.25, 0.0}) == std::array<std::size_t, 3>{6, 2, 0});
    CHECK(split_counts(10, {0.2, 0.04, 0.76}) == std::array<std::size_t, 3>{2, 0, 8});
    const auto c = split_counts(7, {0.5, 0.25, 0.25});
    CHECK(c[0] + c[1] + c[2] == 7);
    CHECK_THROWS_AS(split_counts(5, {0.5, 0.2, 0.2}), ValidationError);
}

TEST_CASE("generate_dataset writes a loadable, consistent corpus") {
    const auto dir = fs::temp_directory_path() / "ihd-synth-ds";
    fs::remove_all(dir);
    SynthSpec spec;
    spec.seed = 9;
    spec.num_series = 10;
    const DatasetPaths paths = generate_dataset(spec, {0.5, 0.2, 0.3}, dir.string());
    CHECK(paths.split_counts == std::array<std::size_t, 3>{5, 2, 3});

    const auto rows = load_manifest(paths.manifest);
    const auto series = group_series(rows);
    CHECK(series.size() == 10);
    std::size_t unlabeled = 0;
    for (const SeriesRecord& rec : series) {
        if (rec.split == Split::unlabeled) {
            CHECK_FALSE(rec.has_labels);  // public manifest hides their labels
            ++unlabeled;
        } else {
            CHECK(rec.has_labels);
        }
        const HUVolume v = load_volume(dir.string() + "/volumes/" + rec.series_id + ".hdr");
        v.validate();
        CHECK(v.num_slices == rec.num_slices);
    }
    CHECK(unlabeled == 3);

    // the hidden answers cover every slice with labels
    const auto hidden = group_series(load_manifest(paths.hidden_answers));
    CHECK(hidden.size() == 10);
    for (const SeriesRecord& rec : hidden) CHECK(rec.has_labels);

    // regeneration reproduces the manifest byte for byte
    const auto dir2 = fs::temp_directory_path() / "ihd-synth-ds2";
    fs::remove_all(dir2);
    const DatasetPaths paths2 = generate_dataset(spec, {0.5, 0.2, 0.3}, dir2.string());
    std::ifstream m1(paths.manifest), m2(paths2.manifest);
    const std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("manifest IO validates its rows") {
    const auto dir = fs::temp_directory_path() / "ihd-manifest";
    fs::create_directories(dir);
    const std::string path = (dir / "m.csv").string();

    std::vector<SliceRecord> rows;
    for (std::size_t s = 0; s < 3; ++s) {
        SliceRecord r;
        r.series_id = "sA";
        r.slice_index = s;
        r.split = Split::train;
        r.has_labels = true;
        r.labels[1] = 1;
        r.labels.sync_any();
        rows.push_back(r);
    }
    save_manifest(path, rows);
    const auto loaded = load_manifest(path);
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[2].labels[1] == 1);
    CHECK(loaded[2].labels[5] == 1);

    std::ofstream bad(path);
    bad << "series_id,slice_index,split,edh,iph,ivh,sah,sdh,any\n";
    bad << "sA,0,train,1,0,0,0,0,1\n";
    bad << "sA,1,train,1,,0,0,0,1\n";  // partially blank labels
    bad.close();
    CHECK_THROWS_AS(load_manifest(path), DataError);

    std::ofstream bad2(path);
    bad2 << "series_id,slice_index,split,edh,iph,ivh,sah,sdh,any\n";
    bad2 << "sA,0,train,2,0,0,0,0,1\n";  // non-binary flag
    bad2.close();
    CHECK_THROWS_AS(load_manifest(path), DataError);
    fs::remove_all(dir);
}

TEST_CASE("group_series rejects broken groupings") {
    auto mk = [](const char* id, std::size_t idx, Split sp) {
        SliceRecord r;
        r.series_id = id;
        r.slice_index = idx;
        r.split = sp;
        r.has_labels = true;
        return r;
    };
    // interleaved rows are fine as long as every series ends up complete
    const auto interleaved =
        group_series({mk("a", 0, Split::train), mk("b", 0, Split::train), mk("a", 1, Split::train)});
    REQUIRE(interleaved.size() == 2);
    CHECK(interleaved[0].num_slices == 2);
    // non-contiguous slice indices
    CHECK_THROWS_AS(group_series({mk("a", 0, Split::train), mk("a", 2, Split::train)}), DataError);
    // split flips inside a series
    CHECK_THROWS_AS(group_series({mk("a", 0, Split::train), mk("a", 1, Split::validation)}), DataError);

    const auto ok = group_series({mk("a", 0, Split::train), mk("a", 1, Split::train), mk("b", 0, Split::validation)});
    REQUIRE(ok.size() == 2);
    CHECK(ok[0].series_id == "a");
    CHECK(ok[0].num_slices == 2);
    const auto val = filter_split(ok, Split::validation);
    REQUIRE(val.size() == 1);
    CHECK(val[0].series_id == "b");
}

TEST_CASE("label noise flips subtypes but keeps any consistent") {
    SynthSpec spec;
    spec.seed = 60;
    spec.num_series = 6;
    spec.label_noise = 0.5;
    bool changed = false;
    for (std::size_t i = 0; i < spec.num_series; ++i) {
        SynthSpec clean = spec;
        clean.label_noise = 0.0;
        const auto noisy = generate_series(spec, i);
        const auto base = generate_series(clean, i);
        CHECK(noisy.volume.data == base.volume.data);  // noise touches labels only
        for (std::size_t s = 0; s < noisy.labels.size(); ++s) {
            CHECK(noisy.labels[s].consistent());
            if (!(noisy.labels[s] == base.labels[s])) changed = true;
        }
    }
    CHECK(changed);
}

TEST_SUITE_END();
