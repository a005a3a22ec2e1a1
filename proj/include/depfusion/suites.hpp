#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace depfusion {

struct CheckResult {
    std::string name;
    double tolerance = 0.0;
    double observed = 0.0;
    bool pass = false;
};

struct SuiteReport {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;

    bool pass() const;
    // config_echo_json: effective run configuration serialized by the
    // caller, embedded verbatim for reproducibility.
    std::string to_json(const std::string& config_echo_json) const;
};

// suite: reconstruction | ssm | decay | gradients | all.
// Check failures are report entries, never exceptions.
SuiteReport run_suite(const std::string& suite, std::uint64_t seed);

}  // namespace depfusion
