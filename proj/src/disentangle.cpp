#include "coms2t/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

using nlohmann::json;

namespace coms2t {

VariationLedger VariationLedger::init(const ModelParams& params, bool keep_history) {
    VariationLedger ledger;
    ledger.keep_history_ = keep_history;
    for (const auto& p : params.tensors()) {
        Entry e;
        e.name = p.name;
        e.block = p.block;
        e.last_snapshot = p.value;
        e.delta_abs = NDArray(p.value.shape());
        e.accum = NDArray(p.value.shape());
        ledger.entries_.push_back(std::move(e));
    }
    if (keep_history) {
        std::vector<NDArray> snap;
        for (const auto& p : params.tensors()) snap.push_back(p.value);
        ledger.history_.push_back(std::move(snap));
    }
    return ledger;
}

void VariationLedger::update(const ModelParams& params) {
    const auto& tensors = params.tensors();
    if (tensors.size() != entries_.size())
        throw LedgerError("ledger: registry size drift");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        Entry& e = entries_[i];
        const ParamTensor& p = tensors[i];
        if (p.name != e.name || !p.value.same_shape(e.last_snapshot))
            throw LedgerError("ledger: shape drift on " + e.name);
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            e.delta_abs[j] = std::fabs(p.value[j] - e.last_snapshot[j]);
            e.accum[j] += e.delta_abs[j];
        }
        e.last_snapshot = p.value;
    }
    ++tb_;
    if (keep_history_) {
        std::vector<NDArray> snap;
        for (const auto& p : tensors) snap.push_back(p.value);
        history_.push_back(std::move(snap));
    }
}

const VariationLedger::Entry& VariationLedger::entry(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw LedgerError("ledger: unknown tensor " + name);
}

std::vector<double> VariationLedger::block_accum(Block block) const {
    std::vector<double> out;
    for (const auto& e : entries_)
        if (e.block == block)
            out.insert(out.end(), e.accum.raw().begin(), e.accum.raw().end());
    return out;
}

void VariationLedger::export_csv(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& e : entries_) {
        std::ofstream out(std::filesystem::path(dir) / ("ledger_" + e.name + ".csv"));
        out << "index,accum\n";
        for (std::size_t i = 0; i < e.accum.size(); ++i)
            out << i << "," << e.accum[i] << "\n";
    }
    std::ofstream(std::filesystem::path(dir) / "ledger_summary.json") << summary_json() << "\n";
}

namespace {
json quantiles(std::vector<double> v) {
    if (v.empty()) return json::object();
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        double pos = p * static_cast<double>(v.size() - 1);
        auto lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return {{"q0", v.front()}, {"q25", q(0.25)}, {"q50", q(0.5)},
            {"q75", q(0.75)}, {"q100", v.back()}};
}
}  // namespace

std::string VariationLedger::summary_json() const {
    json out;
    out["tb"] = tb_;
    out["spatial"] = quantiles(block_accum(Block::Spatial));
    out["temporal"] = quantiles(block_accum(Block::Temporal));
    out["head"] = quantiles(block_accum(Block::Head));
    return out.dump(2);
}

std::vector<std::size_t> select_stable_indices(const std::vector<double>& accum_block,
                                               double tau_percent) {
    if (accum_block.empty()) throw BlockError("select_stable_indices: empty block");
    if (tau_percent <= 0.0 || tau_percent > 100.0)
        throw ConfigError("select_stable_indices: tau must be in (0,100]");
    auto count = static_cast<std::size_t>(
        std::floor(tau_percent / 100.0 * static_cast<double>(accum_block.size())));
    std::vector<std::size_t> order(accum_block.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (accum_block[a] != accum_block[b]) return accum_block[a] < accum_block[b];
        return a < b;  // tie: earliest row-major index wins
    });
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

ParameterPartition build_partition(const ModelParams& params, const VariationLedger& ledger,
                                   double tau_percent, double lambda) {
    if (ledger.tb() < 1) throw LedgerError("build_partition: ledger has no updates");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("build_partition: lambda in [0,1]");

    ParameterPartition part;
    part.tau_percent = tau_percent;
    part.lambda = lambda;

    for (const auto& p : params.tensors()) {
        ParameterPartition::TensorPart tp;
        tp.name = p.name;
        tp.block = p.block;
        tp.neocortex.assign(p.value.size(), 0);
        tp.frozen_values = NDArray(p.value.shape());
        part.parts.push_back(std::move(tp));
    }

    for (Block block : {Block::Spatial, Block::Temporal}) {
        auto accum = ledger.block_accum(block);
        if (accum.empty()) continue;
        auto selected = select_stable_indices(accum, tau_percent);
        // Map flat block indices back onto per-tensor masks (registry order).
        std::size_t offset = 0, sel_pos = 0;
        for (auto& tp : part.parts) {
            if (tp.block != block) continue;
            std::size_t sz = tp.neocortex.size();
            while (sel_pos < selected.size() && selected[sel_pos] < offset + sz) {
                tp.neocortex[selected[sel_pos] - offset] = 1;
                ++sel_pos;
            }
            offset += sz;
        }
    }

    // Eq.-13 smoothing per layer (per registered tensor).
    for (auto& tp : part.parts) {
        const auto& value = params.find(tp.name).value;
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t j = 0; j < tp.neocortex.size(); ++j)
            if (tp.neocortex[j]) {
                sum += value[j];
                ++cnt;
            }
        if (cnt == 0) {
            if (tp.block != Block::Head) part.empty_layer_warning = true;
            continue;
        }
        double mean = sum / static_cast<double>(cnt);
        for (std::size_t j = 0; j < tp.neocortex.size(); ++j)
            if (tp.neocortex[j])
                tp.frozen_values[j] = (1.0 - lambda) * value[j] + lambda * mean;
    }
    return part;
}

const ParameterPartition::TensorPart& ParameterPartition::part(const std::string& name) const {
    for (const auto& tp : parts)
        if (tp.name == name) return tp;
    throw LedgerError("partition: unknown tensor " + name);
}

std::size_t ParameterPartition::neocortex_count() const {
    std::size_t n = 0;
    for (const auto& tp : parts)
        for (auto b : tp.neocortex) n += b;
    return n;
}

std::size_t ParameterPartition::hippocampus_count() const {
    std::size_t n = 0;
    for (const auto& tp : parts)
        for (auto b : tp.neocortex) n += !b;
    return n;
}

void ParameterPartition::install(ModelParams& params) const {
    for (const auto& tp : parts) {
        auto& value = params.find(tp.name).value;
        for (std::size_t j = 0; j < tp.neocortex.size(); ++j)
            if (tp.neocortex[j]) value[j] = tp.frozen_values[j];
    }
}

std::uint64_t ParameterPartition::neocortex_hash(const ModelParams& params) const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& tp : parts) {
        const auto& value = params.find(tp.name).value;
        for (std::size_t j = 0; j < tp.neocortex.size(); ++j)
            if (tp.neocortex[j]) h = fnv1a64(&value.raw()[j], 1, h);
    }
    return h;
}

void apply_freeze(ModelParams& params, const ParameterPartition& partition) {
    for (const auto& tp : partition.parts) {
        auto& grad = params.find(tp.name).grad;
        for (std::size_t j = 0; j < tp.neocortex.size(); ++j)
            if (tp.neocortex[j]) grad[j] = 0.0;
    }
}

bool warmup_stability_check(const std::vector<double>& val_errors, int patience, double eps) {
    if (val_errors.size() < static_cast<std::size_t>(patience) + 1) return false;
    for (int k = 0; k < patience; ++k) {
        std::size_t i = val_errors.size() - 1 - static_cast<std::size_t>(k);
        double prev = val_errors[i - 1];
        double rel = std::fabs(val_errors[i] - prev) / std::max(prev, eps);
        if (rel >= 0.01) return false;
    }
    return true;
}

}  // namespace coms2t
