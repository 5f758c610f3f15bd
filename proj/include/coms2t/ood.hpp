#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coms2t/dataset.hpp"
#include "coms2t/ndarray.hpp"

namespace coms2t {

/// Half-open local-hour range [start, end), 0 <= start < end <= 24.
struct HourRange {
    int start = 0;
    int end = 0;
    bool contains(int hour) const { return hour >= start && hour < end; }
};

/// Named step-index and node-index sets defining one evaluation scenario.
struct SplitManifest {
    std::string scenario;  // temp_interval | temp_month | node_involve | node_remove
    std::vector<std::size_t> train, val, test, adapt;  // step indices, disjoint
    std::vector<std::size_t> train_nodes, test_only_nodes, removed_nodes;

    void validate() const;  // throws SchemaError on overlap/ordering violations
    std::string to_json() const;
    static SplitManifest from_json(const std::string& text);
    void save(const std::string& path) const;
    static SplitManifest load(const std::string& path);
};

/// Assign steps by local hour of day. The adaptation range must sit inside
/// the test range and its steps are carved out of the test set.
SplitManifest split_interval(const SpatioTemporalDataset& ds, HourRange train_hours,
                             HourRange val_hours, HourRange adapt_hours, HourRange test_hours);

/// Assign steps by calendar month (1..12). adapt_months are their own set.
SplitManifest split_month(const SpatioTemporalDataset& ds, std::vector<int> train_months,
                          std::vector<int> val_months, std::vector<int> adapt_months,
                          std::vector<int> test_months);

/// Contiguous temporal fractions used by the node scenarios; ordered
/// train, val, adapt, test so adaptation leads the test regime.
struct StepFractions {
    double train = 0.6;
    double val = 0.15;
    double adapt = 0.05;
    double test = 0.2;
};

/// Mask floor(mask_fraction * N) nodes out of training; they reappear at
/// test time as new nodes.
SplitManifest node_involvement(const SpatioTemporalDataset& ds, double mask_fraction,
                               std::uint64_t seed, StepFractions fractions = {});

/// Remove floor(remove_fraction * N) nodes at test time.
SplitManifest node_removal(const SpatioTemporalDataset& ds, double remove_fraction,
                           std::uint64_t seed, StepFractions fractions = {});

/// Extend a learned adjacency to new nodes by copying the row/column of
/// the nearest existing node (haversine over lat/long; ties to the
/// smallest node index).
NDArray node_copy_adjacency(const NDArray& a_learned, const NDArray& coords_old,
                            const NDArray& coords_new);

}  // namespace coms2t
