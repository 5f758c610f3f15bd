#pragma once

#include <cstdint>
#include <string>

#include "coms2t/errors.hpp"

namespace coms2t {

/// Parameters of one aggregation neighborhood for the error analysis:
/// degree d, causal fraction p, base Gaussian (mu0, sigma0), current and
/// next self expectations, causal/spurious neighbor expectations, fixed
/// aggregation weights, weight prior mean, and the shift multiplier q.
struct CausalNeighborhoodSpec {
    int d = 2;
    double p = 0.5;
    double mu0 = 1.0;
    double sigma0 = 1.0;
    double mu0_t = 0.0;
    double mu0_next = 0.0;
    double mu0_c = 0.0;
    double mu0_s = 0.0;
    double w_c = 1.0;
    double w_s = 1.0;
    double mu_w = 1.0;
    double sigma_wc = 0.1;
    double sigma_ws = 0.1;
    int q = 1;

    void validate() const;  // throws ConfigError
};

/// Expected aggregated representation:
/// (mu0_t + p*d*mu0_c*w_c + (1-p)*d*mu0_s*w_s) / (1+d).
double expected_aggregation(const CausalNeighborhoodSpec& spec);

/// Signed one-step residual against the next self expectation; the
/// irreducible-error results quote its absolute value.
double aggregation_residual(const CausalNeighborhoodSpec& spec, double w_s_value);

/// Irreducible aggregation error 2*(1-p)*d*mu0_s*w_s / (1+d).
double epsilon0(const CausalNeighborhoodSpec& spec);

/// Shift-amplified error 2*(1-p)*d*q*mu0*mu_w / (1+d).
double epsilon_q(const CausalNeighborhoodSpec& spec);

/// epsilon_q / epsilon_q at q=1; equals q exactly in the closed form.
double amplification_ratio(const CausalNeighborhoodSpec& spec);

/// Spurious weight zeroing the residual:
/// ((1+d)*mu0_next - (mu0_t + p*d*mu0_c*w_c)) / ((1-p)*d*mu0_s).
/// Throws SingularityError when mu0_s == 0.
double optimal_ws(const CausalNeighborhoodSpec& spec);

/// Monte-Carlo mean of the explicit aggregation; p*d should be integral
/// so the neighbor counts are exact.
double mc_expected_aggregation(const CausalNeighborhoodSpec& spec, std::size_t n_samples,
                               std::uint64_t seed);

/// Least-squares aggregator trained at scale 1 and evaluated at scales 1
/// and q; the mean signed test error grows linearly in the scale.
struct McRatioResult {
    double eps_base = 0.0;
    double eps_shift = 0.0;
    double ratio = 0.0;
};
McRatioResult mc_error_ratio(const CausalNeighborhoodSpec& spec, std::size_t n_samples,
                             std::uint64_t seed);

/// Full verification report (closed forms, MC estimates, pass/fail per
/// tolerance) as a JSON document for the `theory-check` subcommand.
std::string theory_check_json(std::size_t mc_samples, std::uint64_t seed);

}  // namespace coms2t
