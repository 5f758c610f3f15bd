#include "coms2t/theory.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

using nlohmann::json;

namespace coms2t {

void CausalNeighborhoodSpec::validate() const {
    if (d <= 1) throw ConfigError("theory: degree must exceed 1");
    if (p <= 0.0 || p >= 1.0) throw ConfigError("theory: causal fraction in (0,1)");
    if (sigma0 <= 0.0) throw ConfigError("theory: sigma0 must be positive");
    if (q < 1) throw ConfigError("theory: q must be a positive integer");
}

double expected_aggregation(const CausalNeighborhoodSpec& spec) {
    spec.validate();
    double dd = spec.d;
    return (spec.mu0_t + spec.p * dd * spec.mu0_c * spec.w_c +
            (1.0 - spec.p) * dd * spec.mu0_s * spec.w_s) /
           (1.0 + dd);
}

double aggregation_residual(const CausalNeighborhoodSpec& spec, double w_s_value) {
    CausalNeighborhoodSpec s = spec;
    s.w_s = w_s_value;
    return expected_aggregation(s) - spec.mu0_next;
}

double epsilon0(const CausalNeighborhoodSpec& spec) {
    spec.validate();
    double dd = spec.d;
    return 2.0 * (1.0 - spec.p) * dd * spec.mu0_s * spec.w_s / (1.0 + dd);
}

double epsilon_q(const CausalNeighborhoodSpec& spec) {
    spec.validate();
    double dd = spec.d;
    return 2.0 * (1.0 - spec.p) * dd * static_cast<double>(spec.q) * spec.mu0 * spec.mu_w /
           (1.0 + dd);
}

double amplification_ratio(const CausalNeighborhoodSpec& spec) {
    CausalNeighborhoodSpec base = spec;
    base.q = 1;
    double e1 = epsilon_q(base);
    if (e1 == 0.0) throw SingularityError("amplification_ratio: zero baseline error");
    return epsilon_q(spec) / e1;
}

double optimal_ws(const CausalNeighborhoodSpec& spec) {
    spec.validate();
    if (spec.mu0_s == 0.0) throw SingularityError("optimal_ws: mu0_s is zero");
    double dd = spec.d;
    return ((1.0 + dd) * spec.mu0_next - (spec.mu0_t + spec.p * dd * spec.mu0_c * spec.w_c)) /
           ((1.0 - spec.p) * dd * spec.mu0_s);
}

namespace {
std::size_t causal_count(const CausalNeighborhoodSpec& spec) {
    return static_cast<std::size_t>(std::llround(spec.p * static_cast<double>(spec.d)));
}
}  // namespace

double mc_expected_aggregation(const CausalNeighborhoodSpec& spec, std::size_t n_samples,
                               std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::size_t nc = causal_count(spec);
    std::size_t ns = static_cast<std::size_t>(spec.d) - nc;
    double total = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double h = spec.mu0_t + spec.sigma0 * unit(rng);
        for (std::size_t i = 0; i < nc; ++i)
            h += spec.w_c * (spec.mu0_c + spec.sigma0 * unit(rng));
        for (std::size_t i = 0; i < ns; ++i)
            h += spec.w_s * (spec.mu0_s + spec.sigma0 * unit(rng));
        total += h / (1.0 + static_cast<double>(spec.d));
    }
    return total / static_cast<double>(n_samples);
}

McRatioResult mc_error_ratio(const CausalNeighborhoodSpec& spec, std::size_t n_samples,
                             std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::size_t nc = causal_count(spec);
    std::size_t ns = static_cast<std::size_t>(spec.d) - nc;
    double inv = 1.0 / (1.0 + static_cast<double>(spec.d));

    // The aggregator averages self + all neighbors with one shared learned
    // weight; it cannot exclude the spurious neighbors, so a mean bias
    // survives training and scales with the test distribution.
    auto draw = [&](double scale, double& agg, double& target) {
        double self = scale * spec.mu0_t + spec.sigma0 * unit(rng);
        double causal_sum = 0.0, spurious_sum = 0.0;
        for (std::size_t i = 0; i < nc; ++i)
            causal_sum += scale * spec.mu0 + spec.sigma0 * unit(rng);
        for (std::size_t i = 0; i < ns; ++i)
            spurious_sum += scale * spec.mu0 + spec.sigma0 * unit(rng);
        agg = inv * (self + causal_sum + spurious_sum);
        target = scale * spec.mu0 + causal_sum;  // intercept + causal part only
    };

    // Least-squares fit of target = w * agg on the training scale.
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double x, y;
        draw(1.0, x, y);
        sxx += x * x;
        sxy += x * y;
    }
    double w = sxy / sxx;

    auto mean_error = [&](double scale) {
        double total = 0.0;
        for (std::size_t s = 0; s < n_samples; ++s) {
            double x, y;
            draw(scale, x, y);
            total += w * x - y;
        }
        return std::fabs(total / static_cast<double>(n_samples));
    };

    McRatioResult r;
    r.eps_base = mean_error(1.0);
    r.eps_shift = mean_error(static_cast<double>(spec.q));
    r.ratio = r.eps_shift / r.eps_base;
    return r;
}

std::string theory_check_json(std::size_t mc_samples, std::uint64_t seed) {
    json out;

    CausalNeighborhoodSpec hand;
    hand.d = 2;
    hand.p = 0.5;
    hand.mu0_t = 0.0;
    hand.mu0_c = 1.0;
    hand.mu0_s = 2.0;
    hand.w_c = 1.0;
    hand.w_s = 1.0;
    out["expected_aggregation"] = {{"value", expected_aggregation(hand)}, {"hand", 1.0}};

    CausalNeighborhoodSpec e0 = hand;
    e0.w_s = 0.5;
    out["epsilon0"] = {{"value", epsilon0(e0)}, {"hand", 2.0 / 3.0}};

    CausalNeighborhoodSpec amp;
    amp.d = 4;
    amp.p = 0.25;
    amp.q = 3;
    out["amplification_ratio"] = {{"value", amplification_ratio(amp)}, {"expected", 3.0}};

    double mc = mc_expected_aggregation(hand, mc_samples, seed);
    double se = hand.sigma0 * std::sqrt(3.0) / (3.0 * std::sqrt(static_cast<double>(mc_samples)));
    bool mc_ok = std::fabs(mc - expected_aggregation(hand)) < 3.0 * se;
    out["mc_expected_aggregation"] = {{"value", mc}, {"closed_form", expected_aggregation(hand)},
                                      {"three_se", 3.0 * se}, {"pass", mc_ok}};

    auto ratio = mc_error_ratio(amp, mc_samples, seed + 1);
    bool ratio_ok = ratio.ratio > 2.4 && ratio.ratio < 3.6;
    out["mc_error_ratio"] = {{"eps_base", ratio.eps_base}, {"eps_shift", ratio.eps_shift},
                             {"ratio", ratio.ratio}, {"band", {2.4, 3.6}}, {"pass", ratio_ok}};

    std::mt19937_64 rng(seed + 2);
    std::uniform_real_distribution<double> u(0.1, 0.9), m(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        CausalNeighborhoodSpec s;
        s.d = 2 + static_cast<int>(rng() % 5);
        s.p = u(rng);
        s.mu0_t = m(rng);
        s.mu0_next = m(rng);
        s.mu0_c = m(rng);
        s.mu0_s = m(rng) + 2.5;  // bounded away from the singularity
        s.w_c = m(rng);
        worst = std::max(worst, std::fabs(aggregation_residual(s, optimal_ws(s))));
    }
    out["optimal_ws_root_check"] = {{"worst_residual", worst}, {"pass", worst < 1e-12}};

    bool all = mc_ok && ratio_ok && worst < 1e-12 &&
               std::fabs(out["expected_aggregation"]["value"].get<double>() - 1.0) < 1e-15 &&
               std::fabs(out["epsilon0"]["value"].get<double>() - 2.0 / 3.0) < 1e-15 &&
               std::fabs(out["amplification_ratio"]["value"].get<double>() - 3.0) < 1e-15;
    out["pass"] = all;
    return out.dump(2);
}

}  // namespace coms2t
