#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "depfusion/pgmf.hpp"
#include "depfusion/ssm.hpp"

namespace depfusion {

// ---- losses -------------------------------------------------------------

struct LossConfig {
    double alpha_t = 1.0;  // class weight, > 0
    double gamma_t = 0.0;  // focusing exponent, >= 0
    double alpha = 1.0;    // detection term weight
    double beta = 1.0;     // regression term weight
};

// Focal loss -alpha_t [p(1-t) + t(1-p)]^gamma_t log(p_t) with
// p_t = p when t = 1, else 1 - p. Reduces to weighted cross-entropy at
// gamma_t = 0. p must lie strictly inside (0, 1).
double focal_loss(double p, int t, const LossConfig& cfg);

// Quadratic inside |d| < 1, linear outside; both branches meet at 0.5.
double smooth_l1(double y_gt, double y_pred);

double total_loss(double det, double reg, const LossConfig& cfg);

// ---- gradient checks ------------------------------------------------------

enum class GradModel { LtiKernel, Psn, PgmfPath, SelectiveScan };

const char* to_string(GradModel m);

struct GradientGroupResult {
    std::string group;
    std::size_t coords_checked = 0;
    double max_rel_err = 0.0;
    std::string worst_coordinate;  // "group[index]" of the largest error
};

struct GradientReport {
    std::string model;
    double h = 0.0;
    std::string dtype = "binary64";
    std::vector<GradientGroupResult> groups;

    double max_rel_err() const;
    std::string to_json() const;
};

// Compares hand-derived reverse-pass gradients against central finite
// differences of the same forward, on a random coordinate subset (>= 32 per
// group when available). Relative error uses max(|analytic|, |fd|, 1e-8).
// Throws NumericalError naming the parameter path if a gradient is
// non-finite.
GradientReport check_gradients(GradModel model, std::uint64_t seed, double h = 1e-5);

// Structural identity behind the shared-PSN factor 2: with f_v == f_i and
// shared latent weights, the PSN gradient of the fused objective equals
// exactly twice the gradient with the IR branch contribution detached.
// Returns the maximum absolute discrepancy |full - 2 * detached|.
double psn_factor2_discrepancy(std::uint64_t seed);

// ---- aggregate suites -------------------------------------------------------

struct DecaySuiteResult {
    std::size_t trials = 0;
    std::size_t steps = 0;
    std::size_t bound_violations = 0;
    bool constant_monotone = true;  // exact-gap curve non-increasing for constant a_bar
    double max_contribution_gap100 = 0.0;  // over the constant a_bar = 0.9 trials
    std::vector<std::pair<std::size_t, double>> gap_max;  // aggregated over random trials

    bool pass() const { return bound_violations == 0 && constant_monotone; }
    std::string to_json() const;
};

DecaySuiteResult run_decay_suite(std::size_t trials, std::size_t steps, std::uint64_t seed);

ComplexityTable run_complexity_suite(const std::vector<std::size_t>& sizes,
                                     std::size_t repeats = 5);

}  // namespace depfusion
