#include "coms2t/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace coms2t {

void SpatioTemporalDataset::validate() const {
    std::size_t T = n_steps(), N = n_nodes();
    if (N < 2) throw SchemaError("dataset: need at least 2 nodes");
    if (T < 2) throw SchemaError("dataset: need at least 2 steps");
    if (adjacency.rank() != 2 || adjacency.dim(0) != N || adjacency.dim(1) != N)
        throw SchemaError("dataset: adjacency shape does not match node count");
    if (node_coords.rank() != 2 || node_coords.dim(0) != N || node_coords.dim(1) != 2)
        throw SchemaError("dataset: node_coords shape mismatch");
    if (node_ids.size() != N) throw SchemaError("dataset: node_ids size mismatch");
    if (timestamps.size() != T) throw SchemaError("dataset: timestamps size mismatch");
    if (interval_seconds <= 0) throw SchemaError("dataset: interval_seconds must be positive");
    for (std::size_t t = 1; t < T; ++t)
        if (timestamps[t] - timestamps[t - 1] != interval_seconds)
            throw SchemaError("dataset: timestamps must increase by interval_seconds");
    for (std::size_t i = 0; i < N; ++i) {
        if (!self_loops && adjacency.at(i, i) != 0.0)
            throw SchemaError("dataset: adjacency diagonal must be zero unless self_loops is set");
        for (std::size_t j = 0; j < N; ++j)
            if (adjacency.at(i, j) < 0.0)
                throw SchemaError("dataset: adjacency must be nonnegative");
    }
    for (std::size_t i = 0; i < observations.size(); ++i)
        if (!std::isfinite(observations[i]))
            throw SchemaError("dataset: non-finite observation");
}

SpatioTemporalDataset SpatioTemporalDataset::select_nodes(
    const std::vector<std::size_t>& keep) const {
    std::size_t T = n_steps(), F = n_features(), M = keep.size();
    SpatioTemporalDataset out;
    out.observations = NDArray({T, M, F});
    out.adjacency = NDArray({M, M});
    out.node_coords = NDArray({M, 2});
    out.node_ids.resize(M);
    for (std::size_t a = 0; a < M; ++a) {
        std::size_t i = keep[a];
        if (i >= n_nodes()) throw SchemaError("select_nodes: index out of range");
        out.node_ids[a] = node_ids[i];
        out.node_coords.at(a, 0) = node_coords.at(i, 0);
        out.node_coords.at(a, 1) = node_coords.at(i, 1);
        for (std::size_t b = 0; b < M; ++b)
            out.adjacency.at(a, b) = adjacency.at(i, keep[b]);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f)
                out.observations.at(t, a, f) = observations.at(t, i, f);
    }
    out.timestamps = timestamps;
    out.interval_seconds = interval_seconds;
    out.feature_units = feature_units;
    out.projection_seed = projection_seed;
    out.self_loops = self_loops;
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const char* ctx) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw SchemaError(std::string("bad numeric field in ") + ctx);
        return v;
    } catch (const SchemaError&) {
        throw;
    } catch (...) {
        throw SchemaError(std::string("bad numeric field in ") + ctx + ": '" + s + "'");
    }
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ifstream open_or_throw(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw LoadError("missing file: " + p.string());
    return in;
}

}  // namespace

SpatioTemporalDataset load_dataset(const std::string& path) {
    fs::path dir(path);
    auto manifest_in = open_or_throw(dir / "manifest.json");
    json manifest;
    try {
        manifest_in >> manifest;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest.json: ") + e.what());
    }

    SpatioTemporalDataset ds;
    std::size_t N, T, F;
    try {
        N = manifest.at("n_nodes").get<std::size_t>();
        T = manifest.at("n_steps").get<std::size_t>();
        F = manifest.at("n_features").get<std::size_t>();
        ds.interval_seconds = manifest.at("interval_seconds").get<std::int64_t>();
        ds.feature_units = manifest.at("feature_units").get<std::vector<std::string>>();
        ds.projection_seed = manifest.at("projection_seed").get<std::uint64_t>();
        ds.self_loops = manifest.value("self_loops", false);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest.json: ") + e.what());
    }

    ds.observations = NDArray({T, N, F});
    {
        auto in = open_or_throw(dir / "observations.csv");
        std::string line;
        std::getline(in, line);  // header
        std::vector<char> seen(T * N, 0);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != 2 + F) throw SchemaError("observations.csv: bad column count");
            auto t = static_cast<std::size_t>(parse_double(fields[0], "observations.csv"));
            auto n = static_cast<std::size_t>(parse_double(fields[1], "observations.csv"));
            if (t >= T || n >= N) throw SchemaError("observations.csv: index out of range");
            seen[t * N + n] = 1;
            for (std::size_t f = 0; f < F; ++f)
                ds.observations.at(t, n, f) = parse_double(fields[2 + f], "observations.csv");
        }
        for (char s : seen)
            if (!s) throw SchemaError("observations.csv: missing (step,node) rows");
    }

    {
        auto in = open_or_throw(dir / "adjacency.csv");
        ds.adjacency = NDArray({N, N});
        std::string line;
        std::size_t r = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != N) throw SchemaError("adjacency.csv: row width mismatch");
            if (r >= N) throw SchemaError("adjacency.csv: too many rows");
            for (std::size_t c = 0; c < N; ++c)
                ds.adjacency.at(r, c) = parse_double(fields[c], "adjacency.csv");
            ++r;
        }
        if (r != N) throw SchemaError("adjacency.csv: row count mismatch");
    }

    {
        auto in = open_or_throw(dir / "nodes.csv");
        ds.node_coords = NDArray({N, 2});
        ds.node_ids.resize(N);
        std::string line;
        std::getline(in, line);  // header
        std::size_t r = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split_csv_line(line);
            if (fields.size() != 3) throw SchemaError("nodes.csv: bad column count");
            if (r >= N) throw SchemaError("nodes.csv: too many rows");
            ds.node_ids[r] = static_cast<std::int64_t>(parse_double(fields[0], "nodes.csv"));
            ds.node_coords.at(r, 0) = parse_double(fields[1], "nodes.csv");
            ds.node_coords.at(r, 1) = parse_double(fields[2], "nodes.csv");
            ++r;
        }
        if (r != N) throw SchemaError("nodes.csv: row count mismatch");
    }

    {
        auto in = open_or_throw(dir / "timestamps.csv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ds.timestamps.push_back(
                static_cast<std::int64_t>(parse_double(line, "timestamps.csv")));
        }
        if (ds.timestamps.size() != T) throw SchemaError("timestamps.csv: row count mismatch");
    }

    ds.validate();
    return ds;
}

void save_dataset(const SpatioTemporalDataset& ds, const std::string& path) {
    fs::path dir(path);
    fs::create_directories(dir);
    std::size_t T = ds.n_steps(), N = ds.n_nodes(), F = ds.n_features();

    json manifest = {
        {"n_nodes", N},
        {"n_steps", T},
        {"n_features", F},
        {"interval_seconds", ds.interval_seconds},
        {"feature_units", ds.feature_units},
        {"projection_seed", ds.projection_seed},
        {"self_loops", ds.self_loops},
    };
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";

    {
        std::ofstream out(dir / "observations.csv");
        out << "step,node";
        for (std::size_t f = 0; f < F; ++f) out << ",f" << f;
        out << "\n";
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n) {
                out << t << "," << n;
                for (std::size_t f = 0; f < F; ++f)
                    out << "," << fmt17(ds.observations.at(t, n, f));
                out << "\n";
            }
    }
    {
        std::ofstream out(dir / "adjacency.csv");
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < N; ++c)
                out << (c ? "," : "") << fmt17(ds.adjacency.at(r, c));
            out << "\n";
        }
    }
    {
        std::ofstream out(dir / "nodes.csv");
        out << "node_id,lat,long\n";
        for (std::size_t n = 0; n < N; ++n)
            out << ds.node_ids[n] << "," << fmt17(ds.node_coords.at(n, 0)) << ","
                << fmt17(ds.node_coords.at(n, 1)) << "\n";
    }
    {
        std::ofstream out(dir / "timestamps.csv");
        for (auto ts : ds.timestamps) out << ts << "\n";
    }
}

int hour_of_day(std::int64_t ts) {
    std::int64_t s = ((ts % 86400) + 86400) % 86400;
    return static_cast<int>(s / 3600);
}

namespace {
// Days since epoch -> civil date (Howard Hinnant's algorithm).
void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    std::int64_t doe = z - era * 146097;
    std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t yy = yoe + era * 400;
    std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    std::int64_t mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}
std::int64_t days_from_epoch(std::int64_t ts) {
    return (ts >= 0 ? ts : ts - 86399) / 86400;
}
}  // namespace

int day_of_week(std::int64_t ts) {
    // epoch day 0 (1970-01-01) was a Thursday; 0 = Sunday
    std::int64_t d = days_from_epoch(ts);
    return static_cast<int>(((d + 4) % 7 + 7) % 7);
}

int month_of_year(std::int64_t ts) {
    int y, m, d;
    civil_from_days(days_from_epoch(ts), y, m, d);
    return m;
}

SpatioTemporalDataset synth_generate(const SynthConfig& config) {
    std::size_t N = config.n_nodes, T = config.n_steps, F = config.n_features;
    if (N < 2 || T < 2) throw ConfigError("synth: need n_nodes >= 2 and n_steps >= 2");
    for (const auto& r : config.regimes)
        if (r.sigma <= 0.0) throw ConfigError("synth: regime sigma must be positive");

    std::vector<RegimeSpec> regimes = config.regimes;
    if (regimes.empty()) regimes.push_back({0, 24, 0.0, 1.0});

    auto regime_at = [&](std::int64_t ts) -> const RegimeSpec& {
        if (config.key == SynthConfig::RegimeKey::hour) {
            int h = hour_of_day(ts);
            for (const auto& r : regimes)
                if (h >= r.start && h < r.end) return r;
        } else {
            int m = month_of_year(ts);
            for (const auto& r : regimes)
                if (m >= r.start && m <= r.end) return r;
        }
        return regimes.front();
    };

    SpatioTemporalDataset ds;
    ds.observations = NDArray({T, N, F});
    ds.interval_seconds = config.interval_seconds;
    ds.timestamps.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        ds.timestamps[t] = config.start_timestamp +
                           static_cast<std::int64_t>(t) * config.interval_seconds;
    ds.feature_units.assign(F, "unit");
    ds.projection_seed = config.seed ^ 0x9e3779b97f4a7c15ull;
    ds.node_ids.resize(N);
    for (std::size_t i = 0; i < N; ++i) ds.node_ids[i] = static_cast<std::int64_t>(i);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    // Node coordinates: clustered by community with deterministic jitter.
    ds.node_coords = NDArray({N, 2});
    for (std::size_t i = 0; i < N; ++i) {
        int comm = i < config.communities.size() ? config.communities[i] : 0;
        ds.node_coords.at(i, 0) = config.base_lat + 0.5 * comm + 0.01 * unit(rng);
        ds.node_coords.at(i, 1) = config.base_long + 0.5 * comm + 0.01 * unit(rng);
    }

    // Gaussian kernel adjacency on great-circle distance, zero diagonal.
    ds.adjacency = NDArray({N, N});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            if (i == j) continue;
            double d = haversine_km(ds.node_coords.at(i, 0), ds.node_coords.at(i, 1),
                                    ds.node_coords.at(j, 0), ds.node_coords.at(j, 1));
            ds.adjacency.at(i, j) = std::exp(-(d * d) / (2.0 * 10.0 * 10.0));
        }

    auto node_off = [&](std::size_t i) {
        return i < config.node_offsets.size() ? config.node_offsets[i] : 0.0;
    };
    auto node_ss = [&](std::size_t i) {
        return i < config.node_sigma_scale.size() ? config.node_sigma_scale[i] : 1.0;
    };

    // AR(1) noise per (node, feature) chain; fixed t -> i -> f draw order.
    NDArray prev_noise({N, F});
    for (std::size_t t = 0; t < T; ++t) {
        const RegimeSpec& reg = regime_at(ds.timestamps[t]);
        int dow = day_of_week(ds.timestamps[t]);
        double dow_add = dow < static_cast<int>(config.dow_mu.size()) ? config.dow_mu[dow] : 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double mu = reg.mu + node_off(i) + dow_add;
            double sigma = reg.sigma * node_ss(i);
            if (sigma <= 0.0) throw ConfigError("synth: effective sigma must be positive");
            for (std::size_t f = 0; f < F; ++f) {
                double innov = sigma * unit(rng);
                double e = t == 0 ? innov : config.ar_coeff * prev_noise.at(i, f) + innov;
                prev_noise.at(i, f) = e;
                ds.observations.at(t, i, f) = mu + e;
            }
        }
    }

    ds.validate();
    return ds;
}

WindowSet make_windows(const SpatioTemporalDataset& ds, std::size_t kappa,
                       std::size_t horizon, const std::vector<std::size_t>& allowed_steps) {
    if (kappa < 1 || horizon < 1) throw ConfigError("make_windows: kappa and horizon must be >= 1");
    std::size_t T = ds.n_steps(), N = ds.n_nodes(), F = ds.n_features();
    std::unordered_set<std::size_t> allowed(allowed_steps.begin(), allowed_steps.end());

    WindowSet out;
    if (T >= kappa + horizon) {
        for (std::size_t t = kappa - 1; t + horizon < T; ++t) {
            bool ok = true;
            for (std::size_t s = t + 1 - kappa; s <= t + horizon && ok; ++s)
                if (!allowed.count(s)) ok = false;
            if (!ok) continue;
            Window w;
            w.anchor = t;
            w.x = NDArray({kappa, N, F});
            w.y = NDArray({horizon, N, F});
            for (std::size_t j = 0; j < kappa; ++j)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f)
                        w.x.at(j, n, f) = ds.observations.at(t + 1 - kappa + j, n, f);
            for (std::size_t j = 0; j < horizon; ++j)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f)
                        w.y.at(j, n, f) = ds.observations.at(t + 1 + j, n, f);
            out.push_back(std::move(w));
        }
    }
    if (out.empty()) throw EmptyWindowError("make_windows: no valid window anchor");
    return out;
}

WindowSet make_input_windows(const SpatioTemporalDataset& ds, std::size_t kappa,
                             const std::vector<std::size_t>& allowed_steps) {
    if (kappa < 1) throw ConfigError("make_input_windows: kappa must be >= 1");
    std::size_t T = ds.n_steps(), N = ds.n_nodes(), F = ds.n_features();
    std::unordered_set<std::size_t> allowed(allowed_steps.begin(), allowed_steps.end());

    WindowSet out;
    for (std::size_t t = kappa - 1; t < T; ++t) {
        bool ok = true;
        for (std::size_t s = t + 1 - kappa; s <= t && ok; ++s)
            if (!allowed.count(s)) ok = false;
        if (!ok) continue;
        Window w;
        w.anchor = t;
        w.x = NDArray({kappa, N, F});
        for (std::size_t j = 0; j < kappa; ++j)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t f = 0; f < F; ++f)
                    w.x.at(j, n, f) = ds.observations.at(t + 1 - kappa + j, n, f);
        out.push_back(std::move(w));
    }
    if (out.empty()) throw EmptyWindowError("make_input_windows: no valid window anchor");
    return out;
}

void window_distribution(const NDArray& window_x, NDArray& mu, NDArray& sigma) {
    if (window_x.rank() != 3) throw ShapeError("window_distribution: expects [kappa,N,F]");
    std::size_t K = window_x.dim(0), N = window_x.dim(1), F = window_x.dim(2);
    mu = NDArray({N, F});
    sigma = NDArray({N, F});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f) {
            double m = 0.0;
            for (std::size_t k = 0; k < K; ++k) m += window_x.at(k, n, f);
            m /= static_cast<double>(K);
            double v = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                double d = window_x.at(k, n, f) - m;
                v += d * d;
            }
            // population divisor kappa
            mu.at(n, f) = m;
            sigma.at(n, f) = std::sqrt(v / static_cast<double>(K));
        }
}

NormStats NormStats::fit(const SpatioTemporalDataset& ds,
                         const std::vector<std::size_t>& steps) {
    std::size_t N = ds.n_nodes(), F = ds.n_features();
    if (steps.empty()) throw ConfigError("NormStats::fit: empty step set");
    NormStats st;
    st.mean.assign(F, 0.0);
    st.stddev.assign(F, 0.0);
    st.clamped.assign(F, false);
    double cnt = static_cast<double>(steps.size() * N);
    for (std::size_t f = 0; f < F; ++f) {
        double m = 0.0;
        for (auto t : steps)
            for (std::size_t n = 0; n < N; ++n) m += ds.observations.at(t, n, f);
        m /= cnt;
        double v = 0.0;
        for (auto t : steps)
            for (std::size_t n = 0; n < N; ++n) {
                double d = ds.observations.at(t, n, f) - m;
                v += d * d;
            }
        st.mean[f] = m;
        double sd = std::sqrt(v / cnt);
        if (sd <= 0.0) {
            sd = 1.0;
            st.clamped[f] = true;
        }
        st.stddev[f] = sd;
    }
    return st;
}

void NormStats::apply(NDArray& x) const {
    std::size_t F = mean.size();
    if (x.shape().back() != F) throw ShapeError("NormStats::apply: feature dim mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t f = i % F;
        x[i] = (x[i] - mean[f]) / stddev[f];
    }
}

void NormStats::invert(NDArray& x) const {
    std::size_t F = mean.size();
    if (x.shape().back() != F) throw ShapeError("NormStats::invert: feature dim mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t f = i % F;
        x[i] = x[i] * stddev[f] + mean[f];
    }
}

SpatioTemporalDataset normalize(const SpatioTemporalDataset& ds, const NormStats& stats) {
    SpatioTemporalDataset out = ds;
    stats.apply(out.observations);
    return out;
}

NDArray build_spatial_env(const SpatioTemporalDataset& ds, std::size_t env_width) {
    std::size_t N = ds.n_nodes(), E = env_width;
    if (E < 2) throw ConfigError("build_spatial_env: env width must be >= 2");
    NDArray env({N, 2 * E});
    // loc_no one-hot times a seeded Gaussian projection reduces to one row of
    // the projection matrix; draw rows in node order so any node subset is
    // consistent with the full set.
    std::mt19937_64 rng(ds.projection_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(E));
    // Project by original node id so masked/removed subsets keep their rows.
    std::int64_t max_id = 0;
    for (auto id : ds.node_ids) max_id = std::max(max_id, id);
    NDArray proj({static_cast<std::size_t>(max_id) + 1, E});
    for (std::size_t r = 0; r < proj.dim(0); ++r)
        for (std::size_t e = 0; e < E; ++e) proj.at(r, e) = scale * unit(rng);

    for (std::size_t n = 0; n < N; ++n) {
        env.at(n, 0) = ds.node_coords.at(n, 0);
        env.at(n, 1) = ds.node_coords.at(n, 1);
        auto id = static_cast<std::size_t>(ds.node_ids[n]);
        for (std::size_t e = 0; e < E; ++e) env.at(n, E + e) = proj.at(id, e);
    }
    return env;
}

namespace {
double trend_slope(const SpatioTemporalDataset& ds, std::size_t t, std::size_t kappa) {
    // least-squares slope of the node/feature mean over the previous kappa
    // steps (causal; shorter at the start of the series)
    std::size_t begin = t + 1 >= kappa ? t + 1 - kappa : 0;
    std::size_t n = t - begin + 1;
    if (n < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t NN = ds.n_nodes(), F = ds.n_features();
    for (std::size_t j = 0; j < n; ++j) {
        double m = 0.0;
        for (std::size_t v = 0; v < NN; ++v)
            for (std::size_t f = 0; f < F; ++f) m += ds.observations.at(begin + j, v, f);
        m /= static_cast<double>(NN * F);
        double x = static_cast<double>(j);
        sx += x;
        sy += m;
        sxx += x * x;
        sxy += x * m;
    }
    double dn = static_cast<double>(n);
    double denom = dn * sxx - sx * sx;
    return denom == 0.0 ? 0.0 : (dn * sxy - sx * sy) / denom;
}
}  // namespace

TemporalEnvParams fit_temporal_env(const SpatioTemporalDataset& ds, std::size_t env_width,
                                   std::size_t kappa, const std::vector<std::size_t>& train_steps) {
    TemporalEnvParams p;
    p.env_width = env_width;
    p.kappa = kappa;
    if (train_steps.empty()) throw ConfigError("fit_temporal_env: empty training step set");
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (auto t : train_steps) {
        double s = trend_slope(ds, t, kappa);
        if (first) {
            lo = hi = s;
            first = false;
        } else {
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    }
    p.trend_min = lo;
    p.trend_max = hi;
    return p;
}

NDArray build_temporal_env(const SpatioTemporalDataset& ds, const TemporalEnvParams& params) {
    std::size_t T = ds.n_steps(), E = params.env_width;
    std::size_t steps_per_day =
        static_cast<std::size_t>((86400 + ds.interval_seconds - 1) / ds.interval_seconds);
    if (7 + steps_per_day > E)
        throw ConfigError("build_temporal_env: env width too small for Dw+Ts one-hots");
    NDArray env({T, 2 * E});
    for (std::size_t t = 0; t < T; ++t) {
        std::int64_t ts = ds.timestamps[t];
        int dow = day_of_week(ts);
        auto sod = static_cast<std::size_t>((((ts % 86400) + 86400) % 86400) /
                                            ds.interval_seconds);
        env.at(t, static_cast<std::size_t>(dow)) = 1.0;
        env.at(t, 7 + sod) = 1.0;
        double tr = trend_slope(ds, t, params.kappa);
        double span = params.trend_max - params.trend_min;
        env.at(t, E) = span > 0.0 ? (tr - params.trend_min) / span : 0.0;
    }
    return env;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusKm = 6371.0;
    constexpr double kDeg = 3.14159265358979323846 / 180.0;
    double dlat = (lat2 - lat1) * kDeg;
    double dlon = (lon2 - lon1) * kDeg;
    double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
               std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) *
                   std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

}  // namespace coms2t
