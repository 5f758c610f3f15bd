#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coms2t/backbone.hpp"

namespace coms2t {

/// Per-weight training dynamics: absolute inter-unit deltas and their
/// running sum, mirroring every registered tensor.
class VariationLedger {
public:
    struct Entry {
        std::string name;
        Block block = Block::Head;
        NDArray last_snapshot;
        NDArray delta_abs;
        NDArray accum;  // S_Delta
    };

    static VariationLedger init(const ModelParams& params, bool keep_history = false);

    /// One unit boundary: delta = |W - last|, accum += delta, tb += 1.
    /// Fixed left-to-right element order, no re-association.
    void update(const ModelParams& params);

    std::size_t tb() const { return tb_; }
    const std::vector<Entry>& entries() const { return entries_; }
    const Entry& entry(const std::string& name) const;

    /// Stored per-unit snapshots (index 0 = W^0); only when keep_history.
    const std::vector<std::vector<NDArray>>& history() const { return history_; }

    /// accum values of one block concatenated in registry order.
    std::vector<double> block_accum(Block block) const;

    void export_csv(const std::string& dir) const;
    std::string summary_json() const;  // per-block quantiles

private:
    std::vector<Entry> entries_;
    std::size_t tb_ = 0;
    bool keep_history_ = false;
    std::vector<std::vector<NDArray>> history_;
};

/// Indices of the floor(tau% * size) smallest values; ties break by the
/// earlier flat (row-major) index. Throws BlockError on an empty block.
std::vector<std::size_t> select_stable_indices(const std::vector<double>& accum_block,
                                               double tau_percent);

/// Disjoint neocortex/hippocampus split over the spatial and temporal
/// blocks; head tensors are always hippocampus.
struct ParameterPartition {
    struct TensorPart {
        std::string name;
        Block block = Block::Head;
        std::vector<std::uint8_t> neocortex;  // 1 = frozen
        NDArray frozen_values;                // smoothed values at neocortex indices
    };

    std::vector<TensorPart> parts;
    double tau_percent = 60.0;
    double lambda = 0.0;
    bool empty_layer_warning = false;

    const TensorPart& part(const std::string& name) const;
    std::size_t neocortex_count() const;
    std::size_t hippocampus_count() const;  // over all tensors incl. head

    /// Overwrite neocortex-indexed parameter values with the frozen values.
    void install(ModelParams& params) const;
    /// Hash of the neocortex-indexed values (for bit-exact freeze checks).
    std::uint64_t neocortex_hash(const ModelParams& params) const;
};

ParameterPartition build_partition(const ModelParams& params, const VariationLedger& ledger,
                                   double tau_percent, double lambda);

/// Zero gradient entries at neocortex indices.
void apply_freeze(ModelParams& params, const ParameterPartition& partition);

/// True when the relative validation-error change stayed below 1% for
/// `patience` consecutive units.
bool warmup_stability_check(const std::vector<double>& val_errors, int patience = 3,
                            double eps = 1e-8);

}  // namespace coms2t
