#include "coms2t/ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace coms2t {

void SplitManifest::validate() const {
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto* set : {&train, &val, &test, &adapt}) {
        seen.insert(set->begin(), set->end());
        total += set->size();
    }
    if (seen.size() != total) throw SchemaError("manifest: step sets overlap");
    if (!adapt.empty() && !test.empty()) {
        // Adaptation data must not postdate the test regime it prepares for.
        if (*std::max_element(adapt.begin(), adapt.end()) >
            *std::max_element(test.begin(), test.end()))
            throw SchemaError("manifest: adapt extends past the test regime");
    }
    for (auto n : test_only_nodes)
        if (std::find(train_nodes.begin(), train_nodes.end(), n) != train_nodes.end())
            throw SchemaError("manifest: test-only node also in train_nodes");
}

namespace {
json idx(const std::vector<std::size_t>& v) { return json(v); }
std::vector<std::size_t> unidx(const json& j) { return j.get<std::vector<std::size_t>>(); }
}  // namespace

std::string SplitManifest::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["train"] = idx(train);
    j["val"] = idx(val);
    j["test"] = idx(test);
    j["adapt"] = idx(adapt);
    j["train_nodes"] = idx(train_nodes);
    j["test_only_nodes"] = idx(test_only_nodes);
    j["removed_nodes"] = idx(removed_nodes);
    return j.dump(2);
}

SplitManifest SplitManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    SplitManifest m;
    m.scenario = j.at("scenario").get<std::string>();
    m.train = unidx(j.at("train"));
    m.val = unidx(j.at("val"));
    m.test = unidx(j.at("test"));
    m.adapt = unidx(j.at("adapt"));
    m.train_nodes = unidx(j.at("train_nodes"));
    m.test_only_nodes = unidx(j.at("test_only_nodes"));
    m.removed_nodes = unidx(j.at("removed_nodes"));
    m.validate();
    return m;
}

void SplitManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ReportError("manifest: cannot open " + path);
    out << to_json() << "\n";
}

SplitManifest SplitManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("manifest: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

namespace {
void check_range(const HourRange& r, const char* what) {
    if (r.start < 0 || r.end > 24 || r.start > r.end)
        throw ConfigError(std::string("split_interval: bad ") + what + " range");
}

bool overlap(const HourRange& a, const HourRange& b) {
    return std::max(a.start, b.start) < std::min(a.end, b.end);
}

std::vector<std::size_t> all_node_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}
}  // namespace

SplitManifest split_interval(const SpatioTemporalDataset& ds, HourRange train_hours,
                             HourRange val_hours, HourRange adapt_hours, HourRange test_hours) {
    check_range(train_hours, "train");
    check_range(val_hours, "val");
    check_range(adapt_hours, "adapt");
    check_range(test_hours, "test");
    if (overlap(train_hours, val_hours) || overlap(train_hours, test_hours) ||
        overlap(val_hours, test_hours))
        throw ConfigError("split_interval: overlapping hour ranges");
    if (adapt_hours.start < adapt_hours.end &&
        (adapt_hours.start < test_hours.start || adapt_hours.end > test_hours.end))
        throw ConfigError("split_interval: adapt range must sit inside the test range");

    SplitManifest m;
    m.scenario = "temp_interval";
    m.train_nodes = all_node_indices(ds.n_nodes());
    for (std::size_t t = 0; t < ds.n_steps(); ++t) {
        int h = hour_of_day(ds.timestamps[t]);
        if (adapt_hours.contains(h))
            m.adapt.push_back(t);  // carved out of the test range
        else if (train_hours.contains(h))
            m.train.push_back(t);
        else if (val_hours.contains(h))
            m.val.push_back(t);
        else if (test_hours.contains(h))
            m.test.push_back(t);
    }
    m.validate();
    return m;
}

SplitManifest split_month(const SpatioTemporalDataset& ds, std::vector<int> train_months,
                          std::vector<int> val_months, std::vector<int> adapt_months,
                          std::vector<int> test_months) {
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto* set : {&train_months, &val_months, &adapt_months, &test_months}) {
        for (int mth : *set) {
            if (mth < 1 || mth > 12) throw ConfigError("split_month: month outside 1..12");
            seen.insert(mth);
        }
        total += set->size();
    }
    if (seen.size() != total) throw ConfigError("split_month: overlapping month sets");

    auto has = [](const std::vector<int>& v, int mth) {
        return std::find(v.begin(), v.end(), mth) != v.end();
    };
    SplitManifest m;
    m.scenario = "temp_month";
    m.train_nodes = all_node_indices(ds.n_nodes());
    for (std::size_t t = 0; t < ds.n_steps(); ++t) {
        int mth = month_of_year(ds.timestamps[t]);
        if (has(adapt_months, mth))
            m.adapt.push_back(t);
        else if (has(train_months, mth))
            m.train.push_back(t);
        else if (has(val_months, mth))
            m.val.push_back(t);
        else if (has(test_months, mth))
            m.test.push_back(t);
    }
    m.validate();
    return m;
}

namespace {
void fill_step_fractions(SplitManifest& m, std::size_t n_steps, const StepFractions& f) {
    auto t_end = static_cast<std::size_t>(f.train * static_cast<double>(n_steps));
    auto v_end = t_end + static_cast<std::size_t>(f.val * static_cast<double>(n_steps));
    auto a_end = v_end + static_cast<std::size_t>(f.adapt * static_cast<double>(n_steps));
    for (std::size_t t = 0; t < n_steps; ++t) {
        if (t < t_end)
            m.train.push_back(t);
        else if (t < v_end)
            m.val.push_back(t);
        else if (t < a_end)
            m.adapt.push_back(t);
        else
            m.test.push_back(t);
    }
}

std::vector<std::size_t> pick_nodes(std::size_t n, std::size_t count, std::uint64_t seed) {
    auto order = all_node_indices(n);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}
}  // namespace

SplitManifest node_involvement(const SpatioTemporalDataset& ds, double mask_fraction,
                               std::uint64_t seed, StepFractions fractions) {
    if (mask_fraction < 0.0 || mask_fraction >= 1.0)
        throw ConfigError("node_involvement: mask_fraction in [0,1)");
    std::size_t n = ds.n_nodes();
    auto masked = static_cast<std::size_t>(std::floor(mask_fraction * static_cast<double>(n)));
    if (n - masked < 2) throw ConfigError("node_involvement: fewer than 2 training nodes left");

    SplitManifest m;
    m.scenario = "node_involve";
    m.test_only_nodes = pick_nodes(n, masked, seed);
    for (std::size_t i = 0; i < n; ++i)
        if (std::find(m.test_only_nodes.begin(), m.test_only_nodes.end(), i) ==
            m.test_only_nodes.end())
            m.train_nodes.push_back(i);
    fill_step_fractions(m, ds.n_steps(), fractions);
    m.validate();
    return m;
}

SplitManifest node_removal(const SpatioTemporalDataset& ds, double remove_fraction,
                           std::uint64_t seed, StepFractions fractions) {
    if (remove_fraction < 0.0 || remove_fraction >= 1.0)
        throw ConfigError("node_removal: remove_fraction in [0,1)");
    std::size_t n = ds.n_nodes();
    auto removed = static_cast<std::size_t>(std::floor(remove_fraction * static_cast<double>(n)));
    if (n - removed < 2) throw ConfigError("node_removal: fewer than 2 test nodes left");

    SplitManifest m;
    m.scenario = "node_remove";
    m.train_nodes = all_node_indices(n);
    m.removed_nodes = pick_nodes(n, removed, seed);
    fill_step_fractions(m, ds.n_steps(), fractions);
    m.validate();
    return m;
}

NDArray node_copy_adjacency(const NDArray& a_learned, const NDArray& coords_old,
                            const NDArray& coords_new) {
    if (a_learned.rank() != 2 || a_learned.dim(0) != a_learned.dim(1))
        throw ShapeError("node_copy_adjacency: adjacency must be square");
    std::size_t n = a_learned.dim(0);
    if (n == 0) throw ConfigError("node_copy_adjacency: no existing nodes");
    if (coords_old.rank() != 2 || coords_old.dim(0) != n || coords_old.dim(1) != 2)
        throw ShapeError("node_copy_adjacency: old coords must be [N,2]");
    if (coords_new.size() != 0 && (coords_new.rank() != 2 || coords_new.dim(1) != 2))
        throw ShapeError("node_copy_adjacency: new coords must be [M,2]");
    std::size_t m = coords_new.size() == 0 ? 0 : coords_new.dim(0);

    std::vector<std::size_t> donor(m);
    for (std::size_t k = 0; k < m; ++k) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double dist = haversine_km(coords_new.at(k, std::size_t{0}), coords_new.at(k, 1),
                                       coords_old.at(i, std::size_t{0}), coords_old.at(i, 1));
            if (dist < best) {  // strict: equidistant keeps the smaller index
                best = dist;
                arg = i;
            }
        }
        donor[k] = arg;
    }

    NDArray ext({n + m, n + m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ext.at(i, j) = a_learned.at(i, j);
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
            ext.at(n + k, j) = a_learned.at(donor[k], j);
            ext.at(j, n + k) = a_learned.at(j, donor[k]);
        }
        for (std::size_t k2 = 0; k2 < m; ++k2)
            ext.at(n + k, n + k2) = a_learned.at(donor[k], donor[k2]);
    }
    return ext;
}

}  // namespace coms2t
