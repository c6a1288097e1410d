#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sfm/scan.hpp"
#include "sfmamba.h"
#include "test_util.hpp"

using testutil::bit_equal;

namespace {

struct Ctx {
    sfm_ctx* c;
    Ctx() : c(sfm_ctx_create()) {}
    ~Ctx() { sfm_ctx_destroy(c); }
};

}  // namespace

TEST_CASE("version and option validation") {
    CHECK(std::string(sfm_version()).rfind("sfmamba", 0) == 0);
    Ctx ctx;
    CHECK(sfm_ctx_set(ctx.c, "workers", "2") == SFM_OK);
    CHECK(sfm_ctx_set(ctx.c, "lanes", "8") == SFM_OK);
    CHECK(sfm_ctx_set(ctx.c, "precision", "f32") == SFM_OK);
    CHECK(sfm_ctx_set(ctx.c, "bogus", "1") == SFM_ERR_INVALID_ARGUMENT);
    CHECK(std::string(sfm_last_error(ctx.c)).find("unknown option") != std::string::npos);
    CHECK(sfm_ctx_set(ctx.c, "workers", "0") == SFM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("raw scan through the C API matches the core executor") {
    Ctx ctx;
    sfm::Rng rng(31);
    sfm::ScanInputs in = testutil::random_scan_inputs(rng, 2, 3, 17, 4);
    sfm::ScanOutputs ref = sfm::scan_parallel(in, 32, true);

    std::vector<double> y(static_cast<size_t>(2 * 3 * 17));
    std::vector<double> h(static_cast<size_t>(2 * 3 * 4));
    CHECK(sfm_ctx_set(ctx.c, "lanes", "32") == SFM_OK);
    sfm_status st = sfm_scan(ctx.c, in.x.data.data(), in.delta.data.data(),
                             in.a_log.data.data(), in.b_gate.data.data(),
                             in.c_gate.data.data(), in.reset_mask.data(), 2, 3, 17, 4,
                             /*training=*/1, y.data(), h.data());
    REQUIRE(st == SFM_OK);
    CHECK(bit_equal(y, ref.y.data));
    CHECK(bit_equal(h, ref.h_final));

    // invalid inputs surface as INVALID_ARGUMENT with a message
    std::vector<double> bad_delta(in.delta.data.size(), -1.0);
    st = sfm_scan(ctx.c, in.x.data.data(), bad_delta.data(), in.a_log.data.data(),
                  in.b_gate.data.data(), in.c_gate.data.data(), in.reset_mask.data(), 2, 3, 17,
                  4, 0, y.data(), nullptr);
    CHECK(st == SFM_ERR_INVALID_ARGUMENT);
    CHECK(std::strlen(sfm_last_error(ctx.c)) > 0);
}

TEST_CASE("fold round-trip and divisor through the C API") {
    Ctx ctx;
    std::vector<double> z{0, 1, 10, 11, 20, 21, 30, 31};
    std::vector<double> folded(8), back(8);
    REQUIRE(sfm_fold(ctx.c, z.data(), 4, 1, 2, 2, folded.data()) == SFM_OK);
    REQUIRE(sfm_unfold(ctx.c, folded.data(), 4, 1, 2, 2, back.data()) == SFM_OK);
    CHECK(back == z);
    CHECK(sfm_fold(ctx.c, z.data(), 4, 1, 2, 3, folded.data()) == SFM_ERR_INVALID_ARGUMENT);

    CHECK(sfm_closest_divisor(12, 5.0) == 4);
    CHECK(sfm_closest_divisor(128, 24.0) == 16);
    CHECK(sfm_closest_divisor(0, 1.0) == 0);
}

TEST_CASE("LUT save, load, and lookup through the C API") {
    Ctx ctx;
    const char* path = "capi_lut_test.lut";
    {
        std::ofstream f(path);
        f << "foldscan-lut v1 testtag\n128 640 8 49 0.03125 1\n";
    }
    sfm_lut* lut = nullptr;
    REQUIRE(sfm_lut_load(ctx.c, path, &lut) == SFM_OK);
    int64_t b1 = 0;
    REQUIRE(sfm_lut_lookup(ctx.c, lut, 128, 640, 8, 49, &b1) == SFM_OK);
    CHECK(b1 == 4);
    const char* path2 = "capi_lut_test2.lut";
    REQUIRE(sfm_lut_save(ctx.c, lut, path2) == SFM_OK);
    sfm_lut* again = nullptr;
    REQUIRE(sfm_lut_load(ctx.c, path2, &again) == SFM_OK);
    REQUIRE(sfm_lut_lookup(ctx.c, again, 128, 640, 8, 49, &b1) == SFM_OK);
    CHECK(b1 == 4);
    sfm_lut_destroy(lut);
    sfm_lut_destroy(again);
    std::remove(path);
    std::remove(path2);

    sfm_lut* missing = nullptr;
    CHECK(sfm_lut_load(ctx.c, "no_such_file.lut", &missing) == SFM_ERR_INVALID_ARGUMENT);
}

static void count_lines(const char*, void* user) { ++*static_cast<int*>(user); }

TEST_CASE("verify through the C API, including the injected fault") {
    Ctx ctx;
    int lines = 0;
    CHECK(sfm_verify(ctx.c, "divisor", 0, count_lines, &lines) == SFM_OK);
    CHECK(lines > 0);
    lines = 0;
    CHECK(sfm_verify(ctx.c, "scan", 1, count_lines, &lines) == SFM_ERR_VERIFY_FAILED);
    CHECK(lines > 0);
    CHECK(sfm_verify(ctx.c, "nonsense", 0, nullptr, nullptr) == SFM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("model create, forward, erf, and train through the C API") {
    Ctx ctx;
    const char* cfg =
        "image_size = 32\nin_channels = 1\nbase_dim = 2\ndepths = 0,0,2,2\n"
        "state_dim = 2\nheads = 2\nlanes = 2\nclasses = 2\nseed = 3\n";
    sfm_model* model = nullptr;
    REQUIRE(sfm_model_create(ctx.c, cfg, &model) == SFM_OK);
    CHECK(sfm_model_classes(model) == 2);
    CHECK(sfm_model_input_size(model) == 32);
    CHECK(sfm_model_input_channels(model) == 1);
    CHECK(sfm_model_param_count(model) > 0);

    std::vector<double> images(static_cast<size_t>(2 * 1 * 32 * 32));
    sfm::Rng rng(8);
    for (auto& v : images) v = rng.normal();
    std::vector<double> logits(4);
    REQUIRE(sfm_model_forward(ctx.c, model, images.data(), 2, 0, logits.data()) == SFM_OK);
    for (double v : logits) CHECK(std::isfinite(v));

    const char* erf_path = "capi_erf_test.txt";
    REQUIRE(sfm_erf(ctx.c, model, "stage3_mamba", 2, erf_path) == SFM_OK);
    {
        std::ifstream f(erf_path);
        REQUIRE(f.good());
        std::string line;
        int rows = 0, cols = 0;
        while (std::getline(f, line)) {
            if (rows == 0) {
                std::istringstream is(line);
                double v;
                while (is >> v) ++cols;
            }
            ++rows;
        }
        CHECK(rows == 32);
        CHECK(cols == 32);
    }
    std::remove(erf_path);
    CHECK(sfm_erf(ctx.c, model, "bogus_cut", 2, erf_path) == SFM_ERR_INVALID_ARGUMENT);
    sfm_model_destroy(model);

    sfm_model* bad = nullptr;
    CHECK(sfm_model_create(ctx.c, "depths = 1,1,3,2", &bad) == SFM_ERR_INVALID_ARGUMENT);

    const char* trace_path = "capi_train_test.csv";
    double final_acc = -1.0;
    CHECK(sfm_ctx_set(ctx.c, "seed", "5") == SFM_OK);
    REQUIRE(sfm_train_toy(ctx.c, "grid=2,classes=2,seed=2", 5, 1, 6, 0.1, trace_path,
                          &final_acc) == SFM_OK);
    CHECK(final_acc >= 0.0);
    {
        std::ifstream f(trace_path);
        std::string header;
        std::getline(f, header);
        CHECK(header == "step,loss,acc,eval_acc");
    }
    std::remove(trace_path);
}
