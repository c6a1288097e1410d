#include "sfm/lut.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "sfm/fold.hpp"
#include "sfm/scan.hpp"

namespace sfm {

void TuneLut::insert(int64_t B, int64_t D, int64_t S, int64_t L, double ratio, bool reliable) {
    require(B >= 1 && D >= 1 && S >= 1 && L >= 1, "TuneLut: config values must be >= 1");
    require(ratio > 0.0 && ratio <= 1.0, "TuneLut: ratio must be in (0, 1]");
    cells[{B, D, S, L}] = {ratio, reliable};
}

void TuneLut::merge_from(const TuneLut& other) {
    for (const auto& [k, c] : other.cells) cells[k] = c;
    if (!other.hardware_tag.empty()) hardware_tag = other.hardware_tag;
    if (!other.timestamp.empty()) timestamp = other.timestamp;
}

std::string TuneLut::serialize() const {
    std::ostringstream os;
    os << "foldscan-lut v1 " << (hardware_tag.empty() ? std::string("unknown") : hardware_tag)
       << "\n";
    if (!timestamp.empty()) os << "# tuned " << timestamp << "\n";
    for (const auto& [k, c] : cells) {
        os << k.b << " " << k.d << " " << k.s << " " << k.l << " " << c.ratio << " "
           << (c.reliable ? 1 : 0) << "\n";
    }
    return os.str();
}

void TuneLut::save(const std::string& path) const {
    std::ofstream f(path);
    require(f.good(), "TuneLut: cannot open for writing: " + path);
    f << serialize();
}

TuneLut TuneLut::parse(const std::string& text) {
    TuneLut lut;
    std::istringstream is(text);
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "TuneLut: empty file");
    std::istringstream header(line);
    std::string magic, version;
    header >> magic >> version >> lut.hardware_tag;
    require(magic == "foldscan-lut" && version == "v1",
            "TuneLut: bad header (expected 'foldscan-lut v1 <tag>')");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream cs(line);
            std::string hash, word;
            cs >> hash >> word;
            if (word == "tuned") cs >> lut.timestamp;
            continue;
        }
        std::istringstream rs(line);
        int64_t B, D, S, L;
        double ratio;
        int reliable;
        require(static_cast<bool>(rs >> B >> D >> S >> L >> ratio >> reliable),
                "TuneLut: malformed record: " + line);
        lut.insert(B, D, S, L, ratio, reliable != 0);
    }
    return lut;
}

TuneLut TuneLut::load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "TuneLut: cannot open: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
}

namespace {

double log2_dist(int64_t a, int64_t b) {
    return std::abs(std::log2(static_cast<double>(a)) - std::log2(static_cast<double>(b)));
}

// nearest grid value in log2 space; ties toward the smaller value
int64_t snap_axis(const std::vector<int64_t>& axis, int64_t q) {
    int64_t best = axis.front();
    double best_d = log2_dist(axis.front(), q);
    for (int64_t v : axis) {
        double d = log2_dist(v, q);
        if (d < best_d || (d == best_d && v < best)) {
            best = v;
            best_d = d;
        }
    }
    return best;
}

}  // namespace

LutLookup lut_lookup(const TuneLut& lut, int64_t B, int64_t D, int64_t S, int64_t L) {
    require(B >= 1 && D >= 1 && S >= 1 && L >= 1, "lut_lookup: config values must be >= 1");
    if (lut.empty()) {
        return {B, true};  // no data: no folding, caller should warn
    }
    std::vector<int64_t> ax_b, ax_d, ax_s, ax_l;
    for (const auto& [k, c] : lut.cells) {
        ax_b.push_back(k.b);
        ax_d.push_back(k.d);
        ax_s.push_back(k.s);
        ax_l.push_back(k.l);
    }
    auto uniq = [](std::vector<int64_t>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(ax_b);
    uniq(ax_d);
    uniq(ax_s);
    uniq(ax_l);

    TuneLut::Key key{snap_axis(ax_b, B), snap_axis(ax_d, D), snap_axis(ax_s, S),
                     snap_axis(ax_l, L)};
    auto it = lut.cells.find(key);
    if (it == lut.cells.end()) {
        // sparse table: nearest stored record by summed log2 distance;
        // map order makes ties resolve toward smaller keys
        double best_d = 1e300;
        for (const auto& [k, c] : lut.cells) {
            double d = log2_dist(k.b, B) + log2_dist(k.d, D) + log2_dist(k.s, S) +
                       log2_dist(k.l, L);
            if (d < best_d) {
                best_d = d;
                it = lut.cells.find(k);
            }
        }
    }
    const double ratio = it->second.reliable ? it->second.ratio : 1.0;
    return {closest_divisor(B, static_cast<double>(B) * ratio), false};
}

std::string hardware_tag() {
#if defined(__x86_64__)
    std::string arch = "x86_64";
#elif defined(__aarch64__)
    std::string arch = "aarch64";
#else
    std::string arch = "generic";
#endif
    return arch + "-" + std::to_string(std::thread::hardware_concurrency()) + "c";
}

BenchPrecision precision_from_string(const std::string& s) {
    if (s == "f32") return BenchPrecision::f32;
    if (s == "f64") return BenchPrecision::f64;
    throw std::invalid_argument("unknown precision: " + s);
}

namespace {

template <typename R>
struct BenchProblem {
    std::vector<R> x, delta, a_neg, bg, cg;
    std::vector<uint8_t> reset;
    int64_t B1, D, T, S;

    RawScanProblem<R> raw() const {
        RawScanProblem<R> p;
        p.x = x.data();
        p.delta = delta.data();
        p.a_neg = a_neg.data();
        p.b_gate = bg.data();
        p.c_gate = cg.data();
        p.reset = reset.data();
        p.B = B1;
        p.D = D;
        p.T = T;
        p.S = S;
        return p;
    }
};

// random scan instance already laid out in folded shape [B1, D, B2*L]
template <typename R>
BenchProblem<R> make_problem(const BenchConfig& cfg, int64_t b1, uint64_t seed) {
    BenchProblem<R> p;
    const int64_t b2 = cfg.B / b1;
    p.B1 = b1;
    p.D = cfg.D;
    p.T = b2 * cfg.L;
    p.S = cfg.S;
    Rng rng(seed);
    auto fill = [&](std::vector<R>& v, int64_t n, double lo, double hi) {
        v.resize(static_cast<size_t>(n));
        for (auto& e : v) e = static_cast<R>(rng.uniform(lo, hi));
    };
    fill(p.x, p.B1 * p.D * p.T, -1.0, 1.0);
    fill(p.delta, p.B1 * p.D * p.T, 0.05, 1.0);
    fill(p.bg, p.B1 * p.S * p.T, -1.0, 1.0);
    fill(p.cg, p.B1 * p.S * p.T, -1.0, 1.0);
    p.a_neg.resize(static_cast<size_t>(p.D * p.S));
    for (auto& e : p.a_neg) e = static_cast<R>(-rng.uniform(0.5, static_cast<double>(p.S) + 0.5));
    p.reset.assign(static_cast<size_t>(p.T), 0);
    for (int64_t k = 0; k < b2; ++k) p.reset[static_cast<size_t>(k * cfg.L)] = 1;
    return p;
}

template <typename R>
double time_scan_ns(const BenchProblem<R>& p, int lanes, int trials, int warmup,
                    ThreadPool* pool, std::vector<double>* samples) {
    std::vector<R> y(static_cast<size_t>(p.B1 * p.D * p.T));
    auto run = [&] {
        scan_parallel_raw<R>(p.raw(), lanes, y.data(), nullptr, pool);
    };
    for (int i = 0; i < warmup; ++i) run();
    std::vector<double> times;
    times.reserve(static_cast<size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        run();
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(
            static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
                                    .count()));
    }
    if (samples) *samples = times;
    std::sort(times.begin(), times.end());
    const size_t n = times.size();
    return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<BenchRecord> bench_fold_sweep(const BenchConfig& cfg, std::vector<int64_t> b1_sweep,
                                          const BenchOptions& opts) {
    require(cfg.B >= 1 && cfg.D >= 1 && cfg.S >= 1 && cfg.L >= 1,
            "bench: config values must be >= 1");
    require(opts.trials >= 1, "bench: trials must be >= 1");
    static_assert(std::chrono::steady_clock::is_steady, "monotonic clock required");
    if (b1_sweep.empty()) b1_sweep = divisors(cfg.B);
    for (int64_t b1 : b1_sweep) {
        require(b1 >= 1 && cfg.B % b1 == 0, "bench: B1 must divide B");
    }
    if (std::find(b1_sweep.begin(), b1_sweep.end(), cfg.B) == b1_sweep.end()) {
        b1_sweep.push_back(cfg.B);  // baseline is always measured
    }
    std::sort(b1_sweep.begin(), b1_sweep.end());
    b1_sweep.erase(std::unique(b1_sweep.begin(), b1_sweep.end()), b1_sweep.end());

    ThreadPool* pool = opts.pool ? opts.pool : &global_pool();
    std::vector<BenchRecord> records;
    for (int64_t b1 : b1_sweep) {
        BenchRecord rec;
        rec.cfg = cfg;
        rec.b1 = b1;
        rec.trials = opts.trials;
        std::vector<double> samples;
        if (opts.precision == BenchPrecision::f32) {
            auto p = make_problem<float>(cfg, b1, opts.seed);
            rec.median_ns = time_scan_ns<float>(p, opts.lanes, opts.trials, opts.warmup, pool,
                                                &samples);
        } else {
            auto p = make_problem<double>(cfg, b1, opts.seed);
            rec.median_ns = time_scan_ns<double>(p, opts.lanes, opts.trials, opts.warmup, pool,
                                                 &samples);
        }
        rec.spread = rec.median_ns > 0.0
                         ? (quantile(samples, 0.75) - quantile(samples, 0.25)) / rec.median_ns
                         : 0.0;
        records.push_back(rec);
    }
    double baseline = 0.0;
    for (const auto& r : records) {
        if (r.b1 == cfg.B) baseline = r.median_ns;
    }
    for (auto& r : records) {
        // exactly 1.0 at the baseline by construction
        r.speedup = r.b1 == cfg.B ? 1.0 : baseline / r.median_ns;
    }
    return records;
}

TuneLut tune(const std::vector<BenchConfig>& configs, const TuneOptions& opts,
             const TuneLut* merge_base) {
    require(opts.trials >= 1, "tune: trials must be >= 1");
    TuneLut lut;
    if (merge_base) lut.merge_from(*merge_base);
    lut.hardware_tag = hardware_tag();
    {
        std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        lut.timestamp = buf;
    }
    BenchOptions bo;
    bo.trials = opts.trials;
    bo.warmup = opts.warmup;
    bo.lanes = opts.lanes;
    bo.precision = opts.precision;
    bo.seed = opts.seed;
    bo.pool = opts.pool;
    for (const auto& cfg : configs) {
        auto records = bench_fold_sweep(cfg, {}, bo);
        const BenchRecord* best = &records.front();
        for (const auto& r : records) {
            if (r.median_ns < best->median_ns) best = &r;
        }
        if (best->spread > opts.unreliable_spread) {
            lut.insert(cfg.B, cfg.D, cfg.S, cfg.L, 1.0, false);
        } else {
            lut.insert(cfg.B, cfg.D, cfg.S, cfg.L,
                       static_cast<double>(best->b1) / static_cast<double>(cfg.B), true);
        }
    }
    return lut;
}

}  // namespace sfm
