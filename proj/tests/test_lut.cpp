#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "sfm/fold.hpp"
#include "sfm/lut.hpp"

using namespace sfm;

TEST_CASE("LUT file format is pinned") {
    TuneLut lut;
    lut.hardware_tag = "testbox-8c";
    lut.timestamp = "2026-01-02T03:04:05Z";
    lut.insert(128, 640, 8, 49, 0.03125, true);
    lut.insert(64, 320, 8, 196, 1.0, false);
    const std::string expect =
        "foldscan-lut v1 testbox-8c\n"
        "# tuned 2026-01-02T03:04:05Z\n"
        "64 320 8 196 1 0\n"
        "128 640 8 49 0.03125 1\n";
    CHECK(lut.serialize() == expect);

    TuneLut parsed = TuneLut::parse(expect);
    CHECK(parsed.hardware_tag == "testbox-8c");
    CHECK(parsed.timestamp == "2026-01-02T03:04:05Z");
    REQUIRE(parsed.cells.size() == 2);
    CHECK(parsed.cells.at({128, 640, 8, 49}).ratio == doctest::Approx(0.03125));
    CHECK(parsed.cells.at({128, 640, 8, 49}).reliable);
    CHECK_FALSE(parsed.cells.at({64, 320, 8, 196}).reliable);
    CHECK(parsed.serialize() == expect);
}

TEST_CASE("malformed LUT files are rejected") {
    CHECK_THROWS_AS(TuneLut::parse(""), std::invalid_argument);
    CHECK_THROWS_AS(TuneLut::parse("wrong-magic v1 tag\n"), std::invalid_argument);
    CHECK_THROWS_AS(TuneLut::parse("foldscan-lut v2 tag\n"), std::invalid_argument);
    CHECK_THROWS_AS(TuneLut::parse("foldscan-lut v1 tag\n128 640 8\n"), std::invalid_argument);
}

TEST_CASE("lookup on an exact grid hit applies Eq-style divisor rounding") {
    TuneLut lut;
    lut.insert(128, 640, 8, 49, 1.0 / 32.0, true);
    LutLookup r = lut_lookup(lut, 128, 640, 8, 49);
    CHECK_FALSE(r.warned);
    CHECK(r.b1 == 4);  // closest_divisor(128, 128/32) = 4
}

TEST_CASE("stored ratio 1.0 disables folding") {
    TuneLut lut;
    lut.insert(64, 64, 8, 49, 1.0, true);
    CHECK(lut_lookup(lut, 64, 64, 8, 49).b1 == 64);
}

TEST_CASE("empty LUT returns B1 = B with a warning signal") {
    TuneLut lut;
    LutLookup r = lut_lookup(lut, 96, 64, 8, 49);
    CHECK(r.warned);
    CHECK(r.b1 == 96);
}

TEST_CASE("queries between grid points snap in log2 space, ties toward smaller") {
    TuneLut lut;
    lut.insert(64, 64, 8, 64, 0.5, true);    // -> B1 = B/2
    lut.insert(256, 64, 8, 64, 0.25, true);  // -> B1 = B/4
    // B = 128 is equidistant from 64 and 256 in log2; the smaller grid value
    // wins, so the 0.5 ratio applies
    LutLookup r = lut_lookup(lut, 128, 64, 8, 64);
    CHECK(r.b1 == 64);
    // far off-grid D snaps to the only D value present
    CHECK(lut_lookup(lut, 64, 1000, 8, 64).b1 == 32);
}

TEST_CASE("unreliable cells fall back to no folding") {
    TuneLut lut;
    lut.insert(64, 64, 8, 49, 0.125, false);
    CHECK(lut_lookup(lut, 64, 64, 8, 49).b1 == 64);
}

TEST_CASE("every stored ratio rounds to a valid divisor for any grid B") {
    TuneLut lut;
    lut.insert(24, 16, 4, 49, 0.3, true);
    lut.insert(128, 32, 8, 196, 0.05, true);
    lut.insert(96, 64, 8, 16, 0.7, true);
    for (const auto& [k, c] : lut.cells) {
        for (const auto& [k2, c2] : lut.cells) {
            const int64_t b1 = closest_divisor(k.b, static_cast<double>(k.b) * c2.ratio);
            CHECK(k.b % b1 == 0);
        }
    }
}

TEST_CASE("save and load round-trip through a file") {
    TuneLut lut;
    lut.hardware_tag = hardware_tag();
    lut.timestamp = "2026-02-03T00:00:00Z";
    lut.insert(32, 16, 4, 25, 0.25, true);
    const std::string path = "lut_roundtrip_test.lut";
    lut.save(path);
    TuneLut back = TuneLut::load(path);
    CHECK(back.serialize() == lut.serialize());
    std::remove(path.c_str());
    CHECK_THROWS_AS(TuneLut::load("does_not_exist.lut"), std::invalid_argument);
}

TEST_CASE("merge overwrites matching keys and keeps the rest") {
    TuneLut a, b;
    a.insert(32, 16, 4, 25, 0.25, true);
    a.insert(64, 16, 4, 25, 0.5, true);
    b.insert(64, 16, 4, 25, 0.125, true);
    a.merge_from(b);
    CHECK(a.cells.size() == 2);
    CHECK(a.cells.at({64, 16, 4, 25}).ratio == doctest::Approx(0.125));
}

TEST_CASE("bench sweep covers all divisors and pins the baseline speedup at 1") {
    BenchConfig cfg{8, 4, 2, 6};
    BenchOptions opts;
    opts.trials = 3;
    opts.warmup = 1;
    opts.lanes = 4;
    auto records = bench_fold_sweep(cfg, {}, opts);
    const auto divs = divisors(cfg.B);
    REQUIRE(records.size() == divs.size());
    bool saw_baseline = false;
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].b1 == divs[i]);
        CHECK(records[i].median_ns > 0.0);
        CHECK(records[i].trials == 3);
        if (records[i].b1 == cfg.B) {
            saw_baseline = true;
            CHECK(records[i].speedup == 1.0);
        }
    }
    CHECK(saw_baseline);
    // a sweep that omits the baseline still measures it
    auto partial = bench_fold_sweep(cfg, {1, 2}, opts);
    CHECK(partial.size() == 3);
    CHECK_THROWS_AS(bench_fold_sweep(cfg, {3}, opts), std::invalid_argument);
    BenchOptions bad = opts;
    bad.trials = 0;
    CHECK_THROWS_AS(bench_fold_sweep(cfg, {}, bad), std::invalid_argument);
}

TEST_CASE("tune stores one cell per config with a valid ratio and tags") {
    TuneOptions opts;
    opts.trials = 3;
    opts.warmup = 1;
    opts.lanes = 4;
    std::vector<BenchConfig> configs{{8, 4, 2, 6}, {4, 2, 2, 4}};
    TuneLut lut = tune(configs, opts);
    CHECK(lut.cells.size() == 2);
    CHECK(lut.hardware_tag == hardware_tag());
    CHECK_FALSE(lut.timestamp.empty());
    for (const auto& [k, c] : lut.cells) {
        CHECK(c.ratio > 0.0);
        CHECK(c.ratio <= 1.0);
        const int64_t b1 = lut_lookup(lut, k.b, k.d, k.s, k.l).b1;
        CHECK(k.b % b1 == 0);
    }
    TuneOptions bad = opts;
    bad.trials = 0;
    CHECK_THROWS_AS(tune(configs, bad), std::invalid_argument);
}

TEST_CASE("tune marks cells unreliable when timings are too noisy") {
    TuneOptions opts;
    opts.trials = 3;
    opts.warmup = 1;
    opts.lanes = 4;
    opts.unreliable_spread = -1.0;  // every spread exceeds this: force the fallback
    TuneLut lut = tune({{8, 4, 2, 6}}, opts);
    REQUIRE(lut.cells.size() == 1);
    const auto& cell = lut.cells.begin()->second;
    CHECK_FALSE(cell.reliable);
    CHECK(cell.ratio == 1.0);
    CHECK(lut_lookup(lut, 8, 4, 2, 6).b1 == 8);  // no folding
}

TEST_CASE("tune then lookup returns the measured-fastest fold factor") {
    // structural self-consistency: the adaptive path selects exactly the
    // divisor tune stored for the same config
    TuneOptions opts;
    opts.trials = 5;
    opts.warmup = 1;
    opts.lanes = 8;
    std::vector<BenchConfig> configs{{16, 8, 4, 12}};
    TuneLut lut = tune(configs, opts);
    REQUIRE(lut.cells.size() == 1);
    const auto& cell = lut.cells.begin()->second;
    if (cell.reliable) {
        const int64_t stored_b1 =
            static_cast<int64_t>(cell.ratio * 16.0 + 0.5);
        CHECK(lut_lookup(lut, 16, 8, 4, 12).b1 == stored_b1);
    }
}
