#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coms2t/ndarray.hpp"

namespace coms2t {

/// Observations plus graph structure and node/time metadata. Loaded from a
/// bundle directory or produced by the synthetic generator.
struct SpatioTemporalDataset {
    NDArray observations;            // [T, N, F]
    NDArray adjacency;               // [N, N], nonnegative
    NDArray node_coords;             // [N, 2] (lat deg, long deg)
    std::vector<std::int64_t> node_ids;     // [N]
    std::vector<std::int64_t> timestamps;   // [T], epoch seconds, constant spacing
    std::int64_t interval_seconds = 0;
    std::vector<std::string> feature_units;
    std::uint64_t projection_seed = 0;      // for the loc_no embedding
    bool self_loops = false;

    std::size_t n_steps() const { return observations.dim(0); }
    std::size_t n_nodes() const { return observations.dim(1); }
    std::size_t n_features() const { return observations.dim(2); }

    /// Shape/monotonicity/diagonal invariants; throws SchemaError.
    void validate() const;

    /// Copy restricted to a subset of nodes (observations, adjacency, coords).
    SpatioTemporalDataset select_nodes(const std::vector<std::size_t>& keep) const;
};

SpatioTemporalDataset load_dataset(const std::string& path);
void save_dataset(const SpatioTemporalDataset& ds, const std::string& path);

/// One (mu, sigma) regime active on an hour range [start,end) or a month
/// range [start,end] depending on SynthConfig::key.
struct RegimeSpec {
    int start = 0;
    int end = 24;
    double mu = 0.0;
    double sigma = 1.0;
};

struct SynthConfig {
    std::size_t n_nodes = 6;
    std::size_t n_steps = 2000;
    std::size_t n_features = 1;
    std::uint64_t seed = 1;
    std::int64_t interval_seconds = 10800;
    std::int64_t start_timestamp = 1704067200;  // 2024-01-01 00:00 UTC, a Monday
    enum class RegimeKey { hour, month } key = RegimeKey::hour;
    std::vector<RegimeSpec> regimes;            // empty -> single N(0,1) regime
    double ar_coeff = 0.0;                      // AR(1) on the noise term
    std::vector<double> node_offsets;           // additive per-node mean
    std::vector<double> dow_mu;                 // additive mean by day of week (7)
    std::vector<double> node_sigma_scale;       // per-node sigma multiplier
    std::vector<int> communities;               // per-node community id
    double base_lat = 31.0;
    double base_long = 120.0;
};

/// Environment-conditioned Gaussian AR(1) generator. Deterministic under a
/// fixed seed; regimes give a controllable covariate shift.
SpatioTemporalDataset synth_generate(const SynthConfig& config);

struct Window {
    std::size_t anchor = 0;  // index t of the last input step
    NDArray x;               // [kappa, N, F]
    NDArray y;               // [horizon, N, F]
};
using WindowSet = std::vector<Window>;

/// Emits every window whose kappa+l steps all lie in allowed_steps.
/// Throws EmptyWindowError when no anchor qualifies.
WindowSet make_windows(const SpatioTemporalDataset& ds, std::size_t kappa,
                       std::size_t horizon, const std::vector<std::size_t>& allowed_steps);

/// Input-only windows (y left empty); used for the adaptation slice where
/// only the window distribution matters.
WindowSet make_input_windows(const SpatioTemporalDataset& ds, std::size_t kappa,
                             const std::vector<std::size_t>& allowed_steps);

/// Per-node-per-feature mean and population std (divisor kappa) of a window.
void window_distribution(const NDArray& window_x, NDArray& mu, NDArray& sigma);

struct NormStats {
    std::vector<double> mean;     // per feature
    std::vector<double> stddev;   // per feature, clamped to 1 when degenerate
    std::vector<bool> clamped;

    static NormStats fit(const SpatioTemporalDataset& ds,
                         const std::vector<std::size_t>& steps);
    void apply(NDArray& x) const;     // last dim = features
    void invert(NDArray& x) const;
};

SpatioTemporalDataset normalize(const SpatioTemporalDataset& ds, const NormStats& stats);

// --- calendar helpers (epoch seconds, UTC) ---

int hour_of_day(std::int64_t ts);
int day_of_week(std::int64_t ts);   // 0 = Sunday
int month_of_year(std::int64_t ts); // 1..12

/// Per-node descriptors, flattened to [N, 2E]:
/// row 1 = [lat, long, 0...], row 2 = seeded random projection of the
/// node-index one-hot to width E.
NDArray build_spatial_env(const SpatioTemporalDataset& ds, std::size_t env_width);

/// Trend scaling fitted on the training steps so descriptors are leak-free.
struct TemporalEnvParams {
    std::size_t env_width = 16;
    std::size_t kappa = 12;
    double trend_min = 0.0;
    double trend_max = 0.0;
};

TemporalEnvParams fit_temporal_env(const SpatioTemporalDataset& ds, std::size_t env_width,
                                   std::size_t kappa, const std::vector<std::size_t>& train_steps);

/// Per-step descriptors, flattened to [T, 2E]:
/// row 1 = [day-of-week one-hot (7), step-of-day one-hot], row 2 = [trend, 0...].
NDArray build_temporal_env(const SpatioTemporalDataset& ds, const TemporalEnvParams& params);

/// Great-circle distance in kilometers.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

}  // namespace coms2t
