#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "ihd/config.hpp"
#include "ihd/errors.hpp"
#include "ihd/rng.hpp"

using namespace ihd;

TEST_SUITE_BEGIN("rng-config");

TEST_CASE("same seed, same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("derived streams differ") {
    CHECK(derive_seed(7, 0) != derive_seed(7, 1));
    CHECK(derive_seed(7, "model-init") != derive_seed(7, "step"));
    CHECK(derive_seed(7, "x") != derive_seed(8, "x"));
    Rng a(derive_seed(5, 0)), b(derive_seed(5, 1));
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.uniform() == b.uniform();
    CHECK(same < 4);
}

TEST_CASE("uniform bounds and moments") {
    Rng rng(3);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.02);  // ~10 sigma
    const double v = rng.uniform(-3.0, 5.0);
    CHECK(v >= -3.0);
    CHECK(v < 5.0);
}

TEST_CASE("bernoulli frequency") {
    Rng rng(11);
    int hits = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3);
    CHECK(std::abs(hits / double(n) - 0.3) < 0.02);
}

TEST_CASE("normal moments, truncation bound") {
    Rng rng(5);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.1);
    for (int i = 0; i < 2000; ++i) CHECK(std::abs(rng.truncated_normal(0.02)) <= 0.04 + 1e-15);
}

TEST_CASE("uniform_index range and coverage") {
    Rng rng(9);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t k = rng.uniform_index(7);
        REQUIRE(k < 7);
        ++seen[k];
    }
    for (int c : seen) CHECK(c > 0);
}

TEST_CASE("shuffle is a permutation") {
    Rng rng(2);
    std::vector<int> v(40);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    rng.shuffle(w);
    CHECK(w != v);  // 1/40! odds of flaking
    std::sort(w.begin(), w.end());
    CHECK(w == v);
}

TEST_CASE("config parse, typed getters, defaults") {
    const auto cfg = KeyValueConfig::from_string(
        "# comment\n"
        "model.window: 7\n"
        "train.peak_lr: 1e-3\n"
        "name: tiny net\n"
        "flag: true\n"
        "dims: 2, 4, 8\n");
    CHECK(cfg.get_size("model.window", 0) == 7);
    CHECK(cfg.get_double("train.peak_lr", 0.0) == doctest::Approx(1e-3));
    CHECK(cfg.get_string("name", "") == "tiny net");
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.get_size_list("dims", {}) == std::vector<std::size_t>{2, 4, 8});
    CHECK(cfg.get_size("absent", 13) == 13);
    CHECK_FALSE(cfg.has("absent"));
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(KeyValueConfig::from_string("no colon here\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::from_string(": empty key\n"), ConfigError);
    const auto cfg = KeyValueConfig::from_string("x: notanumber\n");
    CHECK_THROWS_AS(cfg.get_double("x", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.get_size("x", 0), ConfigError);
}

TEST_CASE("config round-trips through to_string") {
    auto cfg = KeyValueConfig::from_string("b: 2\na: 1\n");
    cfg.set("c", "3");
    const auto again = KeyValueConfig::from_string(cfg.to_string());
    CHECK(again.get_string("a", "") == "1");
    CHECK(again.get_string("b", "") == "2");
    CHECK(again.get_string("c", "") == "3");
    CHECK(again.to_string() == cfg.to_string());
}

TEST_SUITE_END();
