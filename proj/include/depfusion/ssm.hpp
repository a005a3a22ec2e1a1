#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "depfusion/prng.hpp"
#include "depfusion/tensor.hpp"

namespace depfusion {

// Zoh: a_bar = e^{delta a}, b_bar = (a_bar - 1)/a * b.
// EulerB: a_bar = e^{delta a}, b_bar = delta * b (the simplified input
// discretization common in selective-scan practice).
enum class Discretization { Zoh, EulerB };

const char* to_string(Discretization d);
Discretization discretization_from_string(const std::string& name);

// Time-invariant diagonal state-space system. All a_j must be strictly
// negative so every discrete eigenvalue e^{delta a_j} lies in (0, 1).
struct StateSpaceSystem {
    std::vector<double> a;  // continuous diagonal, a_j < 0
    std::vector<double> b;  // input vector, n
    std::vector<double> c;  // readout covector, n
    double delta = 1.0;     // step size > 0
    Discretization disc = Discretization::Zoh;

    std::size_t dim() const { return a.size(); }
    void validate() const;

    static StateSpaceSystem random(Prng& prng, std::size_t n, Discretization disc);
};

struct DiscreteParams {
    std::vector<double> a_bar;  // in (0, 1)
    std::vector<double> b_bar;
};

DiscreteParams discretize(const StateSpaceSystem& sys);

// One step of the same map for per-step (selective) parameters.
void discretize_step(std::span<const double> a, double delta, std::span<const double> b,
                     Discretization disc, double* a_bar, double* b_bar);

// Time-varying system with per-step parameters given explicitly.
// delta has T entries; b and c are T x n row-major.
struct SelectiveSystem {
    std::vector<double> a;  // continuous diagonal, n
    std::vector<double> delta;
    std::vector<double> b;
    std::vector<double> c;
    Discretization disc = Discretization::EulerB;

    std::size_t dim() const { return a.size(); }
    std::size_t steps() const { return delta.size(); }
    void validate() const;

    static SelectiveSystem random(Prng& prng, std::size_t n, std::size_t steps,
                                  Discretization disc);
};

struct ScanResult {
    std::vector<double> y;        // one output per input token
    std::vector<double> h_final;  // n
    std::vector<double> h_all;    // T x n when requested, else empty
};

// Exact left-to-right recurrence h_t = a_bar_t (.) h_{t-1} + b_bar_t x_t,
// y_t = c_t . h_t, starting from h_0 = 0.
ScanResult scan(const StateSpaceSystem& sys, std::span<const double> x, bool keep_states = false);
ScanResult scan(const SelectiveSystem& sys, std::span<const double> x, bool keep_states = false);

// K_m = c . (a_bar^m (.) b_bar) for m = 0..len-1. Valid only for the
// time-invariant form; the per-step overload always throws
// UnsupportedModeError because a time-varying recurrence has no single
// convolution kernel.
std::vector<double> conv_kernel(const StateSpaceSystem& sys, std::size_t len);
std::vector<double> conv_kernel(const SelectiveSystem& sys, std::size_t len);

// Causal convolution y_t = sum_{m<=t} K_m x_{t-m}.
std::vector<double> apply_kernel(std::span<const double> x, std::span<const double> kernel);

// Signed propagated contribution of token i to hidden state t:
// (prod_{k=i+1..t} a_bar_k) (.) b_bar_i x_i. Tokens are indexed 0..T-1 and
// i == t yields b_bar_i x_i (empty product). token_contribution returns its
// Euclidean norm.
std::vector<double> token_contribution_vector(const SelectiveSystem& sys,
                                              std::span<const double> x, std::size_t i,
                                              std::size_t t);
double token_contribution(const SelectiveSystem& sys, std::span<const double> x, std::size_t i,
                          std::size_t t);

struct DecaySample {
    std::size_t i = 0, t = 0;
    double contribution = 0.0;
    double bound = 0.0;  // max-abs-diagonal norm of the a_bar product times |b_bar_i x_i|
    bool within = false;
};

struct DecayReport {
    std::size_t state_dim = 0;
    std::size_t steps = 0;
    double max_spectral_radius = 0.0;
    std::size_t bound_violations = 0;
    std::vector<DecaySample> samples;                      // every pair i <= t
    std::vector<std::pair<std::size_t, double>> gap_max;   // max contribution, gap >= g
    std::vector<double> max_by_exact_gap;                  // decay curve, index = t - i

    bool all_within() const { return bound_violations == 0; }
    std::string to_json(bool include_samples = false) const;
};

// Evaluates the contribution bound and finite-gap decay for every (i, t)
// pair. Throws InstabilityError when any per-step spectral radius reaches 1.
DecayReport verify_decay(const SelectiveSystem& sys, std::span<const double> x, double tolerance);

// scan(fwd, x) + reverse(scan(bwd, reverse(x))), elementwise.
std::vector<double> bidirectional_scan(const StateSpaceSystem& fwd, const StateSpaceSystem& bwd,
                                       std::span<const double> x);
std::vector<double> bidirectional_scan(const SelectiveSystem& fwd, const SelectiveSystem& bwd,
                                       std::span<const double> x);

// ---- input-dependent parameterization ----------------------------------

// Standard selective structure over C-channel tokens: per step,
//   delta_t = softplus(w_delta . x_t + b_delta)   (softplus keeps delta > 0)
//   B_t = W_b x_t + b_b,  C_t = W_c x_t + b_c
// shared across channels; each channel then runs its own scalar recurrence
//   y_t[ch] = C_t . h_t[ch] + skip_gain x_t[ch] + out_bias.
struct SelectiveProjection {
    std::size_t state_dim = 0;
    std::size_t channels = 0;
    std::vector<double> a;        // n
    std::vector<double> w_delta;  // C
    double b_delta = 0.0;
    std::vector<double> w_b;      // n x C
    std::vector<double> b_b;      // n
    std::vector<double> w_c;      // n x C
    std::vector<double> b_c;      // n
    double skip_gain = 0.0;
    double out_bias = 0.0;
    Discretization disc = Discretization::Zoh;

    void validate() const;

    static SelectiveProjection random(Prng& prng, std::size_t n, std::size_t channels,
                                      Discretization disc);
    // Zero weights, zero skip: output is `value` at every step. Used by the
    // identity parameterizations.
    static SelectiveProjection constant_output(std::size_t n, std::size_t channels, double value,
                                               Discretization disc);
};

// Materializes the per-step parameters for one batch item's token stream.
SelectiveSystem project_sequence(const SelectiveProjection& p, const TokenSequence<double>& seq,
                                 std::size_t batch_index);

TokenSequence<double> selective_scan_tokens(const SelectiveProjection& p,
                                            const TokenSequence<double>& seq);
TokenSequence<double> bidirectional_scan_tokens(const SelectiveProjection& fwd,
                                                const SelectiveProjection& bwd,
                                                const TokenSequence<double>& seq);

double softplus(double z);

}  // namespace depfusion
