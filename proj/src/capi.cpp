#include "sfmamba.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sfm/blocks.hpp"
#include "sfm/fold.hpp"
#include "sfm/lut.hpp"
#include "sfm/model.hpp"
#include "sfm/scan.hpp"
#include "sfm/verify.hpp"

using namespace sfm;

struct sfm_ctx {
    std::string last_error;
    int workers = 0;  // 0: library default
    int lanes = 32;
    uint64_t seed = 1;
    int trials = 20;
    BenchPrecision precision = BenchPrecision::f32;
    bool swap_aux = true;
    std::string fold = "off";  // off | fixed:<B1> | adaptive
    std::string lut_path;
};

struct sfm_lut {
    TuneLut lut;
};

struct sfm_model {
    Model model;
};

const char* sfm_version(void) { return "sfmamba 1.0.0"; }

sfm_ctx* sfm_ctx_create(void) { return new (std::nothrow) sfm_ctx(); }

void sfm_ctx_destroy(sfm_ctx* ctx) { delete ctx; }

const char* sfm_last_error(const sfm_ctx* ctx) {
    return ctx ? ctx->last_error.c_str() : "null context";
}

namespace {

ThreadPool* ctx_pool(sfm_ctx* ctx) {
    if (ctx->workers > 0) set_global_workers(ctx->workers);
    return &global_pool();
}

template <typename F>
sfm_status guarded(sfm_ctx* ctx, F&& fn) {
    if (!ctx) return SFM_ERR_INVALID_ARGUMENT;
    ctx->last_error.clear();
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        ctx->last_error = e.what();
        return SFM_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        ctx->last_error = e.what();
        return SFM_ERR_RUNTIME;
    }
}

}  // namespace

sfm_status sfm_ctx_set(sfm_ctx* ctx, const char* key, const char* value) {
    return guarded(ctx, [&]() -> sfm_status {
        require(key && value, "sfm_ctx_set: null key or value");
        const std::string k = key, v = value;
        if (k == "workers") {
            const int n = std::stoi(v);
            require(n >= 1, "workers must be >= 1");
            ctx->workers = n;
        } else if (k == "lanes") {
            const int n = std::stoi(v);
            require(n >= 1, "lanes must be >= 1");
            ctx->lanes = n;
        } else if (k == "seed") {
            ctx->seed = std::stoull(v);
        } else if (k == "trials") {
            const int n = std::stoi(v);
            require(n >= 1, "trials must be >= 1");
            ctx->trials = n;
        } else if (k == "precision") {
            ctx->precision = precision_from_string(v);
        } else if (k == "mode") {
            if (v == "verify") set_mode(Mode::verify);
            else if (v == "benchmark") set_mode(Mode::benchmark);
            else throw std::invalid_argument("mode must be verify|benchmark");
        } else if (k == "swap") {
            require(v == "on" || v == "off", "swap must be on|off");
            ctx->swap_aux = v == "on";
        } else if (k == "fold") {
            const bool fixed = v.rfind("fixed:", 0) == 0;
            require(v == "off" || v == "adaptive" || fixed,
                    "fold must be off|fixed:<B1>|adaptive");
            if (fixed) require(std::stoll(v.substr(6)) >= 1, "fixed B1 must be >= 1");
            ctx->fold = v;
        } else if (k == "lut") {
            ctx->lut_path = v;
        } else {
            throw std::invalid_argument("unknown option: " + k);
        }
        return SFM_OK;
    });
}

sfm_status sfm_scan(sfm_ctx* ctx, const double* x, const double* delta, const double* a_log,
                    const double* b_gate, const double* c_gate, const uint8_t* reset_mask,
                    int64_t B, int64_t D, int64_t T, int64_t S, int training, double* y,
                    double* h_final) {
    return guarded(ctx, [&]() -> sfm_status {
        require(x && delta && a_log && b_gate && c_gate && reset_mask && y,
                "sfm_scan: null buffer");
        ScanInputs in;
        in.x = Tensor3(B, D, T);
        std::memcpy(in.x.data.data(), x, sizeof(double) * static_cast<size_t>(B * D * T));
        in.delta = Tensor3(B, D, T);
        std::memcpy(in.delta.data.data(), delta,
                    sizeof(double) * static_cast<size_t>(B * D * T));
        in.a_log = Mat(D, S);
        std::memcpy(in.a_log.data.data(), a_log, sizeof(double) * static_cast<size_t>(D * S));
        in.b_gate = Tensor3(B, S, T);
        std::memcpy(in.b_gate.data.data(), b_gate,
                    sizeof(double) * static_cast<size_t>(B * S * T));
        in.c_gate = Tensor3(B, S, T);
        std::memcpy(in.c_gate.data.data(), c_gate,
                    sizeof(double) * static_cast<size_t>(B * S * T));
        in.reset_mask.assign(reset_mask, reset_mask + T);
        in.state_dim = S;
        ScanOutputs out = scan_parallel(in, ctx->lanes, training != 0, ctx_pool(ctx));
        std::memcpy(y, out.y.data.data(), sizeof(double) * static_cast<size_t>(B * D * T));
        if (training && h_final) {
            std::memcpy(h_final, out.h_final.data(),
                        sizeof(double) * static_cast<size_t>(B * D * S));
        }
        return SFM_OK;
    });
}

sfm_status sfm_fold(sfm_ctx* ctx, const double* z, int64_t B, int64_t D, int64_t L, int64_t b1,
                    double* out) {
    return guarded(ctx, [&]() -> sfm_status {
        require(z && out, "sfm_fold: null buffer");
        FoldPlan plan = FoldPlan::make(B, b1, L);  // validates divisibility
        (void)plan;
        fold_into(z, B, D, L, b1, out);
        return SFM_OK;
    });
}

sfm_status sfm_unfold(sfm_ctx* ctx, const double* zf, int64_t B, int64_t D, int64_t L,
                      int64_t b1, double* out) {
    return guarded(ctx, [&]() -> sfm_status {
        require(zf && out, "sfm_unfold: null buffer");
        FoldPlan plan = FoldPlan::make(B, b1, L);
        (void)plan;
        unfold_into(zf, B, D, L, b1, out);
        return SFM_OK;
    });
}

int64_t sfm_closest_divisor(int64_t a, double b) {
    if (a < 1) return 0;
    return closest_divisor(a, b);
}

sfm_status sfm_lut_load(sfm_ctx* ctx, const char* path, sfm_lut** out) {
    return guarded(ctx, [&]() -> sfm_status {
        require(path && out, "sfm_lut_load: null argument");
        auto* handle = new sfm_lut();
        try {
            handle->lut = TuneLut::load(path);
        } catch (...) {
            delete handle;
            throw;
        }
        *out = handle;
        return SFM_OK;
    });
}

sfm_status sfm_lut_save(sfm_ctx* ctx, const sfm_lut* lut, const char* path) {
    return guarded(ctx, [&]() -> sfm_status {
        require(lut && path, "sfm_lut_save: null argument");
        lut->lut.save(path);
        return SFM_OK;
    });
}

void sfm_lut_destroy(sfm_lut* lut) { delete lut; }

sfm_status sfm_lut_lookup(sfm_ctx* ctx, const sfm_lut* lut, int64_t B, int64_t D, int64_t S,
                          int64_t L, int64_t* b1_out) {
    return guarded(ctx, [&]() -> sfm_status {
        require(lut && b1_out, "sfm_lut_lookup: null argument");
        *b1_out = lut_lookup(lut->lut, B, D, S, L).b1;
        return SFM_OK;
    });
}

namespace {

std::vector<BenchConfig> parse_configs(const std::string& text) {
    std::vector<BenchConfig> configs;
    std::istringstream is(text);
    std::string quad;
    while (std::getline(is, quad, ';')) {
        if (quad.empty()) continue;
        BenchConfig c;
        char comma;
        std::istringstream qs(quad);
        require(static_cast<bool>(qs >> c.B >> comma >> c.D >> comma >> c.S >> comma >> c.L),
                "config must be B,D,S,L: " + quad);
        configs.push_back(c);
    }
    require(!configs.empty(), "no configs given");
    return configs;
}

}  // namespace

sfm_status sfm_tune(sfm_ctx* ctx, const char* configs, const char* lut_path) {
    return guarded(ctx, [&]() -> sfm_status {
        require(configs && lut_path, "sfm_tune: null argument");
        TuneOptions opts;
        opts.trials = ctx->trials;
        opts.lanes = ctx->lanes;
        opts.precision = ctx->precision;
        opts.seed = ctx->seed;
        opts.pool = ctx_pool(ctx);
        TuneLut base;
        bool have_base = false;
        {
            std::ifstream probe(lut_path);
            if (probe.good()) {
                base = TuneLut::load(lut_path);
                have_base = true;
            }
        }
        TuneLut lut = tune(parse_configs(configs), opts, have_base ? &base : nullptr);
        lut.save(lut_path);
        return SFM_OK;
    });
}

sfm_status sfm_bench(sfm_ctx* ctx, const char* config, const char* b1_sweep,
                     const char* out_csv) {
    return guarded(ctx, [&]() -> sfm_status {
        require(config && out_csv, "sfm_bench: null argument");
        require(ctx->trials >= 3, "sfm_bench: trials must be >= 3");
        auto configs = parse_configs(config);
        std::vector<int64_t> sweep;
        if (b1_sweep && std::string(b1_sweep) != "all" && std::string(b1_sweep) != "") {
            std::istringstream ss(b1_sweep);
            std::string tok;
            while (std::getline(ss, tok, ',')) sweep.push_back(std::stoll(tok));
        }
        BenchOptions opts;
        opts.trials = ctx->trials;
        opts.lanes = ctx->lanes;
        opts.precision = ctx->precision;
        opts.seed = ctx->seed;
        opts.pool = ctx_pool(ctx);

        // append-safe: find the previous run id, write the header only once
        int64_t run_id = 1;
        bool write_header = true;
        {
            std::ifstream existing(out_csv);
            if (existing.good()) {
                std::string line;
                if (std::getline(existing, line) && !line.empty()) write_header = false;
                while (std::getline(existing, line)) {
                    const size_t comma = line.rfind(',');
                    if (comma == std::string::npos) continue;
                    try {
                        const int64_t prev = static_cast<int64_t>(
                            std::stoll(line.substr(comma + 1)));
                        run_id = std::max(run_id, prev + 1);
                    } catch (...) {
                    }
                }
            }
        }
        std::ofstream f(out_csv, std::ios::app);
        require(f.good(), "cannot open bench output: " + std::string(out_csv));
        if (write_header) f << "B,D,S,L,B1,median_ns,speedup,trials,run_id\n";
        for (const auto& cfg : configs) {
            std::vector<BenchRecord> records;
            try {
                records = bench_fold_sweep(cfg, sweep, opts);
            } catch (const std::invalid_argument&) {
                // invalid config: skipped, flagged with B1 = -1
                f << cfg.B << "," << cfg.D << "," << cfg.S << "," << cfg.L << ",-1,0,0,0,"
                  << run_id << "\n";
                continue;
            }
            for (const auto& r : records) {
                f << r.cfg.B << "," << r.cfg.D << "," << r.cfg.S << "," << r.cfg.L << ","
                  << r.b1 << "," << static_cast<int64_t>(r.median_ns) << "," << r.speedup
                  << "," << r.trials << "," << run_id << "\n";
            }
        }
        return SFM_OK;
    });
}

sfm_status sfm_verify(sfm_ctx* ctx, const char* scope, int inject_fault, sfm_report_fn report,
                      void* user) {
    return guarded(ctx, [&]() -> sfm_status {
        VerifyOptions opts;
        opts.scope = scope ? scope : "all";
        opts.inject_fault = inject_fault != 0;
        opts.seed = ctx->seed;
        opts.lanes = ctx->lanes;
        opts.pool = ctx_pool(ctx);
        auto results = run_verify(opts);
        for (const auto& r : results) {
            if (report) report(format_check(r).c_str(), user);
        }
        if (!all_passed(results)) {
            ctx->last_error = "verification failed";
            return SFM_ERR_VERIFY_FAILED;
        }
        return SFM_OK;
    });
}

sfm_status sfm_model_create(sfm_ctx* ctx, const char* config, sfm_model** out) {
    return guarded(ctx, [&]() -> sfm_status {
        require(config && out, "sfm_model_create: null argument");
        const std::string text = config;
        ModelConfig cfg = text.rfind("@", 0) == 0 ? ModelConfig::from_file(text.substr(1))
                                                  : ModelConfig::from_kv_text(text);
        auto* handle = new sfm_model{Model::build(cfg)};
        *out = handle;
        return SFM_OK;
    });
}

void sfm_model_destroy(sfm_model* model) { delete model; }

sfm_status sfm_model_forward(sfm_ctx* ctx, sfm_model* model, const double* images, int64_t n,
                             int training, double* logits) {
    return guarded(ctx, [&]() -> sfm_status {
        require(model && images && logits, "sfm_model_forward: null argument");
        require(n >= 1, "sfm_model_forward: batch must be >= 1");
        const ModelConfig& cfg = model->model.cfg;
        Grid batch(n, cfg.in_channels, cfg.image_size, cfg.image_size);
        std::memcpy(batch.data.data(), images,
                    sizeof(double) * static_cast<size_t>(batch.size()));
        if (ctx->workers > 0) set_global_workers(ctx->workers);
        Mat out = model_forward(model->model, batch, training != 0, nullptr);
        for (const auto& w : model->model.run_warnings) {
            std::fprintf(stderr, "warning: %s\n", w.c_str());
        }
        std::memcpy(logits, out.data.data(),
                    sizeof(double) * static_cast<size_t>(out.size()));
        return SFM_OK;
    });
}

int64_t sfm_model_classes(const sfm_model* model) {
    return model ? model->model.cfg.classes : 0;
}
int64_t sfm_model_input_size(const sfm_model* model) {
    return model ? model->model.cfg.image_size : 0;
}
int64_t sfm_model_input_channels(const sfm_model* model) {
    return model ? model->model.cfg.in_channels : 0;
}
int64_t sfm_model_param_count(sfm_model* model) {
    return model ? model->model.param_count() : 0;
}

sfm_status sfm_erf(sfm_ctx* ctx, sfm_model* model, const char* cut, int64_t probes,
                   const char* out_path) {
    return guarded(ctx, [&]() -> sfm_status {
        require(model && cut && out_path, "sfm_erf: null argument");
        require(probes >= 1, "sfm_erf: probes must be >= 1");
        const ModelConfig& cfg = model->model.cfg;
        Rng rng(ctx->seed);
        Grid batch(probes, cfg.in_channels, cfg.image_size, cfg.image_size);
        for (auto& v : batch.data) v = rng.normal();
        if (ctx->workers > 0) set_global_workers(ctx->workers);
        Mat heat = erf_map(model->model, batch, erf_cut_from_string(cut));
        for (const auto& w : model->model.run_warnings) {
            std::fprintf(stderr, "warning: %s\n", w.c_str());
        }
        std::ofstream f(out_path);
        require(f.good(), "cannot open erf output: " + std::string(out_path));
        f.setf(std::ios::scientific);
        f.precision(9);
        for (int64_t y = 0; y < heat.rows; ++y) {
            for (int64_t x = 0; x < heat.cols; ++x) {
                f << heat.at(y, x) << (x + 1 == heat.cols ? "" : " ");
            }
            f << "\n";
        }
        return SFM_OK;
    });
}

sfm_status sfm_train_toy(sfm_ctx* ctx, const char* task_spec, int64_t steps, int64_t depth,
                         int64_t dim, double lr, const char* trace_csv,
                         double* final_eval_acc) {
    return guarded(ctx, [&]() -> sfm_status {
        require(task_spec && trace_csv, "sfm_train_toy: null argument");
        ToyTask task = ToyTask::parse(task_spec);
        ToyConfig tc;
        tc.dim = dim >= 1 ? dim : 16;
        tc.depth = depth >= 1 ? depth : 2;
        tc.swap_aux = ctx->swap_aux;
        tc.seed = ctx->seed;
        TrainOptions opts;
        opts.steps = steps;
        opts.lr = lr > 0.0 ? lr : opts.lr;
        opts.seed = ctx->seed;
        std::optional<TuneLut> lut;
        if (ctx->fold.rfind("fixed:", 0) == 0) {
            tc.fold = FoldPolicyKind::fixed;
            tc.fold_b1 = std::stoll(ctx->fold.substr(6));
            require(opts.batch % tc.fold_b1 == 0, "fold: fixed B1 must divide the batch size");
        } else if (ctx->fold == "adaptive") {
            if (ctx->lut_path.empty()) {
                std::fprintf(stderr, "warning: adaptive fold without a LUT, folding disabled\n");
            } else {
                lut = TuneLut::load(ctx->lut_path);
                tc.fold = FoldPolicyKind::adaptive;
                if (lut->empty()) {
                    std::fprintf(stderr,
                                 "warning: adaptive fold with an empty LUT, folding disabled\n");
                }
            }
        }
        ToyModel model = ToyModel::build(tc, task);
        model.lut = std::move(lut);
        if (ctx->workers > 0) set_global_workers(ctx->workers);
        TrainResult res = train_toy(model, task, opts, &global_pool());
        std::ofstream f(trace_csv);
        require(f.good(), "cannot open trace output: " + std::string(trace_csv));
        f << "step,loss,acc,eval_acc\n";
        f.precision(17);
        for (const auto& row : res.trace) {
            f << row.step << "," << row.loss << "," << row.acc << ",";
            if (row.eval_acc >= 0.0) f << row.eval_acc;
            f << "\n";
        }
        if (final_eval_acc) *final_eval_acc = res.final_eval_acc;
        return SFM_OK;
    });
}

