#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfm/parallel.hpp"

namespace sfm {

struct CheckResult {
    std::string suite;
    std::string name;
    bool pass = false;
    double max_err = 0.0;
    std::string detail;
};

struct VerifyOptions {
    std::string scope = "all";  // all | scan | fold | conv | grad | erf | divisor
    bool inject_fault = false;  // CI self-test: forces a scan-suite failure
    uint64_t seed = 42;
    int lanes = 32;
    ThreadPool* pool = nullptr;
};

std::vector<CheckResult> run_verify(const VerifyOptions& opts);

bool all_passed(const std::vector<CheckResult>& results);

std::string format_check(const CheckResult& r);

}  // namespace sfm
