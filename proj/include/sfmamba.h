/* sfmamba — selective-scan core with batch folding, periodic state reset,
 * auxiliary-token swapping, and the fold-factor autotuner.
 *
 * C API over opaque handles. Every function returns SFM_OK on success; on
 * failure, sfm_last_error(ctx) holds a message until the next call on the
 * same context. Handles are not thread-safe; use one context per thread.
 */
#ifndef SFMAMBA_H
#define SFMAMBA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SFM_API __declspec(dllexport)
#else
#define SFM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sfm_status {
    SFM_OK = 0,
    SFM_ERR_INVALID_ARGUMENT = 1,
    SFM_ERR_IO = 2,
    SFM_ERR_VERIFY_FAILED = 3,
    SFM_ERR_RUNTIME = 4
} sfm_status;

typedef struct sfm_ctx sfm_ctx;
typedef struct sfm_lut sfm_lut;
typedef struct sfm_model sfm_model;

SFM_API const char* sfm_version(void);

SFM_API sfm_ctx* sfm_ctx_create(void);
SFM_API void sfm_ctx_destroy(sfm_ctx* ctx);
SFM_API const char* sfm_last_error(const sfm_ctx* ctx);

/* Recognized keys: workers, lanes, seed, trials, precision (f32|f64),
 * mode (verify|benchmark), swap (on|off), fold (off|fixed:<B1>|adaptive),
 * lut (path used by the adaptive fold policy). */
SFM_API sfm_status sfm_ctx_set(sfm_ctx* ctx, const char* key, const char* value);

/* ---- selective scan on raw buffers ------------------------------------- */
/* Layouts: x, delta, y are [B, D, T] row-major; a_log is [D, S]; b_gate and
 * c_gate are [B, S, T]; reset_mask has length T with reset_mask[0] != 0.
 * h_final ([B, D, S]) may be NULL; pass training != 0 to request it. */
SFM_API sfm_status sfm_scan(sfm_ctx* ctx, const double* x, const double* delta,
                            const double* a_log, const double* b_gate, const double* c_gate,
                            const uint8_t* reset_mask, int64_t B, int64_t D, int64_t T,
                            int64_t S, int training, double* y, double* h_final);

/* ---- batch folding ------------------------------------------------------ */
SFM_API sfm_status sfm_fold(sfm_ctx* ctx, const double* z, int64_t B, int64_t D, int64_t L,
                            int64_t b1, double* out);
SFM_API sfm_status sfm_unfold(sfm_ctx* ctx, const double* zf, int64_t B, int64_t D, int64_t L,
                              int64_t b1, double* out);

/* divisor of a closest to b, ties toward the smaller; returns 0 when a < 1 */
SFM_API int64_t sfm_closest_divisor(int64_t a, double b);

/* ---- fold-factor lookup table ------------------------------------------- */
SFM_API sfm_status sfm_lut_load(sfm_ctx* ctx, const char* path, sfm_lut** out);
SFM_API sfm_status sfm_lut_save(sfm_ctx* ctx, const sfm_lut* lut, const char* path);
SFM_API void sfm_lut_destroy(sfm_lut* lut);
SFM_API sfm_status sfm_lut_lookup(sfm_ctx* ctx, const sfm_lut* lut, int64_t B, int64_t D,
                                  int64_t S, int64_t L, int64_t* b1_out);

/* configs: "B,D,S,L" quadruples separated by ';'. Merges into an existing
 * LUT file at lut_path when one is present. */
SFM_API sfm_status sfm_tune(sfm_ctx* ctx, const char* configs, const char* lut_path);

/* ---- benchmark ----------------------------------------------------------- */
/* b1_sweep: "all" or comma-separated fold factors. Appends to out_csv with a
 * run-id column; writes the header only when the file is new. */
SFM_API sfm_status sfm_bench(sfm_ctx* ctx, const char* config, const char* b1_sweep,
                             const char* out_csv);

/* ---- verification -------------------------------------------------------- */
typedef void (*sfm_report_fn)(const char* line, void* user);
/* scope: all|scan|fold|conv|grad|erf|divisor. Returns SFM_ERR_VERIFY_FAILED
 * when any check fails (including injected faults). */
SFM_API sfm_status sfm_verify(sfm_ctx* ctx, const char* scope, int inject_fault,
                              sfm_report_fn report, void* user);

/* ---- model ---------------------------------------------------------------- */
/* config: key = value lines (see README), or "@/path/to/file". */
SFM_API sfm_status sfm_model_create(sfm_ctx* ctx, const char* config, sfm_model** out);
SFM_API void sfm_model_destroy(sfm_model* model);
SFM_API sfm_status sfm_model_forward(sfm_ctx* ctx, sfm_model* model, const double* images,
                                     int64_t n, int training, double* logits);
SFM_API int64_t sfm_model_classes(const sfm_model* model);
SFM_API int64_t sfm_model_input_size(const sfm_model* model);
SFM_API int64_t sfm_model_input_channels(const sfm_model* model);
SFM_API int64_t sfm_model_param_count(sfm_model* model);

/* ERF heat map of the center output feature. cut: "stage3_mamba" | "full".
 * Writes a plain text matrix (probes x image rows) to out_path. */
SFM_API sfm_status sfm_erf(sfm_ctx* ctx, sfm_model* model, const char* cut, int64_t probes,
                           const char* out_path);

/* ---- toy training ---------------------------------------------------------- */
/* task: "grid=3,classes=2,seed=7,..."; writes a step,loss,acc,eval_acc CSV
 * trace; final_eval_acc may be NULL. */
SFM_API sfm_status sfm_train_toy(sfm_ctx* ctx, const char* task, int64_t steps, int64_t depth,
                                 int64_t dim, double lr, const char* trace_csv,
                                 double* final_eval_acc);

#ifdef __cplusplus
}
#endif

#endif /* SFMAMBA_H */
