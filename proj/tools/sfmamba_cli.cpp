// sfmamba command line: verification suites, fold-factor autotuning, scan
// benchmarks, ERF export, and the toy trainer. Talks to the core only
// through the C API in sfmamba.h.
//
// Exit codes: 0 success, 1 verification/runtime failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sfmamba.h"

namespace {

struct CtxGuard {
    sfm_ctx* ctx;
    CtxGuard() : ctx(sfm_ctx_create()) {}
    ~CtxGuard() { sfm_ctx_destroy(ctx); }
};

int status_to_exit(const sfm_ctx* ctx, sfm_status st) {
    if (st == SFM_OK) return 0;
    std::fprintf(stderr, "error: %s\n", sfm_last_error(ctx));
    return st == SFM_ERR_INVALID_ARGUMENT ? 2 : 1;
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

bool set_or_die(sfm_ctx* ctx, const char* key, const std::string& value) {
    if (sfm_ctx_set(ctx, key, value.c_str()) != SFM_OK) {
        std::fprintf(stderr, "error: %s\n", sfm_last_error(ctx));
        return false;
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SF-Mamba computational core: selective scan with batch folding, "
                 "periodic state reset, auxiliary-token swapping, and autotuning"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    // options shared across subcommands
    int workers = 0;
    int lanes = 32;
    uint64_t seed = 42;
    std::string precision;
    app.add_option("--workers", workers, "worker threads (default: SFMAMBA_WORKERS or cores)");
    app.add_option("--lanes", lanes, "chunks per scan row (warp-width analogue)");
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--precision", precision,
                   "f32|f64 (default: f32 for bench/tune, f64 elsewhere)")
        ->check(CLI::IsMember({"f32", "f64"}));

    auto* verify = app.add_subcommand("verify", "run the verification suites");
    std::string scope = "all";
    bool inject_fault = false;
    verify->add_option("--scope", scope, "all|scan|fold|conv|grad|erf|divisor");
    verify->add_flag("--inject-fault", inject_fault, "force a failure (CI self-test)");

    auto* bench = app.add_subcommand("bench", "benchmark the scan over fold factors");
    std::vector<std::string> bench_configs;
    std::string b1_sweep = "all";
    int trials = 20;
    std::string bench_out = "bench.csv";
    bench->add_option("--config", bench_configs, "scan config B,D,S,L (repeatable)")
        ->required();
    bench->add_option("--b1", b1_sweep, "comma-separated fold factors, or 'all'");
    bench->add_option("--trials", trials, "timed runs per point");
    bench->add_option("--out", bench_out, "output CSV (append-safe)");

    auto* tune = app.add_subcommand("tune", "build or merge the fold-factor LUT");
    std::vector<std::string> tune_configs;
    std::string lut_path = "foldscan.lut";
    int tune_trials = 9;
    tune->add_option("--config", tune_configs, "scan config B,D,S,L (repeatable)")->required();
    tune->add_option("--lut", lut_path, "LUT file to write/merge");
    tune->add_option("--trials", tune_trials, "timed runs per fold factor");

    auto* erf = app.add_subcommand("erf", "export an effective-receptive-field heat map");
    std::string erf_config;
    std::string erf_cut = "stage3_mamba";
    std::string erf_out = "erf.txt";
    std::string erf_swap = "on";
    std::string erf_discard = "after_first_attn";
    int64_t erf_probes = 8;
    std::string erf_fold = "off";
    std::string erf_lut;
    erf->add_option("--config", erf_config, "model config file (key = value lines)");
    erf->add_option("--cut", erf_cut, "stage3_mamba|full");
    auto* erf_fold_opt = erf->add_option("--fold", erf_fold, "off|fixed:<B1>|adaptive");
    auto* erf_lut_opt = erf->add_option("--lut", erf_lut, "LUT file for the adaptive fold policy");
    auto* erf_swap_opt =
        erf->add_option("--swap", erf_swap, "on|off")->check(CLI::IsMember({"on", "off"}));
    auto* erf_discard_opt =
        erf->add_option("--discard", erf_discard, "before_attn|after_first_attn|after_attn");
    erf->add_option("--probes", erf_probes, "probe batch size");
    erf->add_option("--out", erf_out, "output text matrix");

    auto* train = app.add_subcommand("train", "train the toy last-patch-cue probe task");
    std::string task = "grid=3,classes=2,seed=7";
    int64_t steps = 2000;
    int64_t depth = 2;
    int64_t dim = 16;
    double lr = 0.2;
    std::string train_swap = "on";
    std::string trace_out = "train.csv";
    train->add_option("--task", task, "task spec, e.g. grid=3,classes=2,seed=7");
    train->add_option("--steps", steps, "SGD steps");
    train->add_option("--depth", depth, "Mamba blocks in the stack");
    train->add_option("--dim", dim, "model width");
    train->add_option("--lr", lr, "SGD step size");
    train->add_option("--swap", train_swap, "on|off")->check(CLI::IsMember({"on", "off"}));
    std::string train_fold = "off";
    std::string train_lut;
    train->add_option("--fold", train_fold, "off|fixed:<B1>|adaptive");
    train->add_option("--lut", train_lut, "LUT file for the adaptive fold policy");
    train->add_option("--out", trace_out, "metrics trace CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    CtxGuard guard;
    sfm_ctx* ctx = guard.ctx;
    if (!ctx) {
        std::fprintf(stderr, "error: cannot create context\n");
        return 1;
    }
    if (workers > 0 && !set_or_die(ctx, "workers", std::to_string(workers))) return 2;
    if (!set_or_die(ctx, "lanes", std::to_string(lanes))) return 2;
    if (!set_or_die(ctx, "seed", std::to_string(seed))) return 2;
    if (precision.empty()) precision = (*bench || *tune) ? "f32" : "f64";
    if (!set_or_die(ctx, "precision", precision)) return 2;

    if (*verify) {
        sfm_ctx_set(ctx, "mode", "verify");
        sfm_status st = sfm_verify(ctx, scope.c_str(), inject_fault ? 1 : 0, print_line,
                                   nullptr);
        if (st == SFM_OK) {
            std::printf("verify: all checks passed\n");
            return 0;
        }
        if (st == SFM_ERR_VERIFY_FAILED) {
            std::printf("verify: FAILED\n");
            return 1;
        }
        return status_to_exit(ctx, st);
    }

    if (*bench) {
        sfm_ctx_set(ctx, "mode", "benchmark");
        if (!set_or_die(ctx, "trials", std::to_string(trials))) return 2;
        std::string joined;
        for (const auto& c : bench_configs) {
            if (!joined.empty()) joined += ";";
            joined += c;
        }
        sfm_status st = sfm_bench(ctx, joined.c_str(), b1_sweep.c_str(), bench_out.c_str());
        if (st == SFM_OK) std::printf("bench: wrote %s\n", bench_out.c_str());
        return status_to_exit(ctx, st);
    }

    if (*tune) {
        sfm_ctx_set(ctx, "mode", "benchmark");
        if (!set_or_die(ctx, "trials", std::to_string(tune_trials))) return 2;
        std::string joined;
        for (const auto& c : tune_configs) {
            if (!joined.empty()) joined += ";";
            joined += c;
        }
        sfm_status st = sfm_tune(ctx, joined.c_str(), lut_path.c_str());
        if (st == SFM_OK) std::printf("tune: wrote %s\n", lut_path.c_str());
        return status_to_exit(ctx, st);
    }

    if (*erf) {
        sfm_ctx_set(ctx, "mode", "verify");
        std::string config;
        if (!erf_config.empty()) {
            std::ifstream f(erf_config);
            if (!f.good()) {
                std::fprintf(stderr, "error: cannot open config: %s\n", erf_config.c_str());
                return 2;
            }
            std::ostringstream os;
            os << f.rdbuf();
            config = os.str() + "\n";
        } else {
            // desk default, ERF-sharp: no conv halo, two Mamba blocks at stage 3
            config = "image_size = 64\nin_channels = 1\nbase_dim = 2\ndepths = 0,0,4,2\n"
                     "state_dim = 2\nheads = 2\nlanes = 4\nclasses = 2\n";
            config += "seed = " + std::to_string(seed) + "\n";
            config += "swap = " + erf_swap + "\n";
            config += "discard = " + erf_discard + "\n";
            config += "fold = " + erf_fold + "\n";
        }
        // later lines win: flags given explicitly override the config file
        if (erf_swap_opt->count() > 0) config += "swap = " + erf_swap + "\n";
        if (erf_discard_opt->count() > 0) config += "discard = " + erf_discard + "\n";
        if (erf_fold_opt->count() > 0) config += "fold = " + erf_fold + "\n";
        if (erf_lut_opt->count() > 0) config += "lut = " + erf_lut + "\n";
        sfm_model* model = nullptr;
        sfm_status st = sfm_model_create(ctx, config.c_str(), &model);
        if (st != SFM_OK) return status_to_exit(ctx, st);
        st = sfm_erf(ctx, model, erf_cut.c_str(), erf_probes, erf_out.c_str());
        sfm_model_destroy(model);
        if (st == SFM_OK) std::printf("erf: wrote %s\n", erf_out.c_str());
        return status_to_exit(ctx, st);
    }

    if (*train) {
        sfm_ctx_set(ctx, "mode", "verify");
        if (!set_or_die(ctx, "swap", train_swap)) return 2;
        if (!set_or_die(ctx, "fold", train_fold)) return 2;
        if (!train_lut.empty() && !set_or_die(ctx, "lut", train_lut)) return 2;
        double final_acc = 0.0;
        sfm_status st = sfm_train_toy(ctx, task.c_str(), steps, depth, dim, lr,
                                      trace_out.c_str(), &final_acc);
        if (st == SFM_OK) {
            std::printf("train: final eval accuracy %.4f, trace %s\n", final_acc,
                        trace_out.c_str());
        }
        return status_to_exit(ctx, st);
    }

    return 2;
}
