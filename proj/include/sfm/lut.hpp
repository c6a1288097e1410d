#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "sfm/parallel.hpp"

namespace sfm {

// Coarse 4-D table (B, D, S, L) -> optimal B1/B ratio, persisted as a
// line-oriented text file:
//
//   foldscan-lut v1 <hardware-tag>
//   # tuned <timestamp>
//   B D S L ratio reliable
//
// Lines starting with '#' are comments. Queries snap each axis to the nearest
// grid value in log2 space (ties toward the smaller value); if the snapped
// cell has no record, the nearest record by summed |log2| distance wins.
struct TuneLut {
    struct Key {
        int64_t b, d, s, l;
        bool operator<(const Key& o) const {
            return std::tie(b, d, s, l) < std::tie(o.b, o.d, o.s, o.l);
        }
    };
    struct Cell {
        double ratio = 1.0;
        bool reliable = true;
    };

    std::map<Key, Cell> cells;
    std::string hardware_tag;
    std::string timestamp;

    bool empty() const { return cells.empty(); }
    void insert(int64_t B, int64_t D, int64_t S, int64_t L, double ratio, bool reliable);
    // merge: records from other overwrite matching keys
    void merge_from(const TuneLut& other);

    static TuneLut load(const std::string& path);
    static TuneLut parse(const std::string& text);
    void save(const std::string& path) const;
    std::string serialize() const;
};

struct LutLookup {
    int64_t b1 = 0;
    bool warned = false;  // empty LUT fallback (no folding)
};

LutLookup lut_lookup(const TuneLut& lut, int64_t B, int64_t D, int64_t S, int64_t L);

std::string hardware_tag();

// Benchmarking of the chunked scan executor over fold factors.
struct BenchConfig {
    int64_t B = 0, D = 0, S = 0, L = 0;
};

struct BenchRecord {
    BenchConfig cfg;
    int64_t b1 = 0;
    double median_ns = 0.0;
    double speedup = 1.0;  // time(B1=B) / time(B1)
    int trials = 0;
    double spread = 0.0;  // (p75 - p25) / median of the timed runs
};

enum class BenchPrecision { f32, f64 };

BenchPrecision precision_from_string(const std::string& s);

struct BenchOptions {
    int trials = 20;
    int warmup = 3;
    int lanes = 32;
    BenchPrecision precision = BenchPrecision::f32;
    uint64_t seed = 1;
    ThreadPool* pool = nullptr;  // defaults to the global pool
};

// Sweeps the given fold factors (all divisors of B when b1_sweep is empty);
// the B1 = B baseline is always measured so speedups are well defined.
std::vector<BenchRecord> bench_fold_sweep(const BenchConfig& cfg,
                                          std::vector<int64_t> b1_sweep,
                                          const BenchOptions& opts);

struct TuneOptions {
    int trials = 9;
    int warmup = 2;
    int lanes = 32;
    BenchPrecision precision = BenchPrecision::f32;
    uint64_t seed = 1;
    double unreliable_spread = 0.5;  // above this, the cell falls back to ratio 1.0
    ThreadPool* pool = nullptr;
};

// Benchmarks every divisor of B for each config and stores the ratio of the
// fastest; cells with too noisy timings are marked unreliable with ratio 1.0.
TuneLut tune(const std::vector<BenchConfig>& configs, const TuneOptions& opts,
             const TuneLut* merge_base = nullptr);

}  // namespace sfm
