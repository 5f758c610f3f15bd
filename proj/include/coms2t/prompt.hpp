#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coms2t/backbone.hpp"
#include "coms2t/dataset.hpp"
#include "coms2t/ndarray.hpp"
#include "coms2t/tape.hpp"

namespace coms2t {

struct PromptConfig {
    std::size_t env_width = 16;           // E; descriptors arrive as [*, 2E]
    std::size_t prompt_dim = 16;          // E_p
    std::size_t out_features = 1;         // F, distribution params per feature
    std::size_t spatial_inject_width = 1; // backbone input feature width
    std::size_t temporal_inject_width = 32;  // backbone hidden width
    int encoder_depth = 2;                // 1 = single linear layer, 2 = MLP with ReLU
};

/// Spatial/temporal prompt encoders, the interaction module regressing
/// window distribution parameters, and the alignment projections that map
/// prompts onto the backbone's injection sites.
class PromptBank {
public:
    PromptBank() = default;
    PromptBank(const PromptConfig& config, std::uint64_t seed);

    const PromptConfig& config() const { return config_; }
    std::vector<ParamTensor>& tensors() { return tensors_; }
    const std::vector<ParamTensor>& tensors() const { return tensors_; }
    ParamTensor& find(const std::string& name);
    const ParamTensor& find(const std::string& name) const;

    /// Encoder + interaction tensors (the ones test-time adaptation may
    /// touch). Order is the registry order.
    std::vector<ParamRef> encoder_stim_refs();
    /// Everything including the alignment projections (fine-tune stage).
    std::vector<ParamRef> all_refs();

    /// Scalar count of encoder + interaction tensors (update accounting).
    std::size_t encoder_stim_size() const;
    std::size_t total_size() const;

    std::uint64_t content_hash() const;
    void zero_grads();

    /// Incremented whenever the bank participates in a forward pass; lets
    /// the ablation harness assert a variant never touched the prompts.
    std::size_t access_count() const { return access_count_; }
    void note_access() { ++access_count_; }

private:
    PromptConfig config_;
    std::vector<ParamTensor> tensors_;
    std::size_t access_count_ = 0;
};

/// Bank tensors bound onto a tape for one training step.
struct BoundBank {
    PromptBank* bank = nullptr;
    std::vector<std::pair<std::string, ad::Tape::Var>> vars;
    ad::Tape::Var at(const std::string& name) const;
};

BoundBank bind_bank(ad::Tape& tape, PromptBank& bank);

// --- tape-building ops (differentiable) ---

/// [M, 2E] descriptor rows -> [M, E_p] prompts.
ad::Tape::Var encode_spatial_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var desc);
ad::Tape::Var encode_temporal_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var desc);

/// Paired prompt rows [M, E_p] -> (mu_hat [M,F], sigma_hat [M,F]).
std::pair<ad::Tape::Var, ad::Tape::Var> stim_forward_t(ad::Tape& tape, const BoundBank& bb,
                                                       ad::Tape::Var ps, ad::Tape::Var pt);

/// Sum over all node-step pairs of (mu_hat-mu)^2 + (sigma_hat-sigma)^2.
ad::Tape::Var ssl_loss_t(ad::Tape& tape, ad::Tape::Var mu_hat, ad::Tape::Var sigma_hat,
                         const NDArray& mu, const NDArray& sigma);

/// [N, E_p] -> [N, spatial_inject_width]; added to the raw input per node.
ad::Tape::Var align_spatial_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var ps);
/// [M, E_p] -> [M, temporal_inject_width]; added after the spatial stack.
ad::Tape::Var align_temporal_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var pt);

// --- tape-free conveniences ---

NDArray encode_spatial(PromptBank& bank, const NDArray& desc_rows);
NDArray encode_temporal(PromptBank& bank, const NDArray& desc_rows);
void stim_forward(PromptBank& bank, const NDArray& ps, const NDArray& pt, NDArray& mu_hat,
                  NDArray& sigma_hat);
double ssl_loss(const NDArray& mu_hat, const NDArray& sigma_hat, const NDArray& mu,
                const NDArray& sigma);
NDArray align_spatial(PromptBank& bank, const NDArray& ps);
NDArray align_temporal(PromptBank& bank, const NDArray& pt);

// --- self-supervised pre-training ---

struct PretrainConfig {
    int epochs = 200;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double holdout_fraction = 0.2;
    std::uint64_t seed = 1;
};

struct PretrainHistory {
    std::vector<double> train_loss;    // per-epoch mean of per-batch sums
    std::vector<double> holdout_loss;  // per-epoch sum on the held-out slice
    double initial_holdout = 0.0;
    double final_holdout = 0.0;
};

/// One (node, anchor) pair per node per window; targets are the window's
/// per-node (mu, sigma). Optimizes encoder + interaction tensors only.
PretrainHistory pretrain_prompts(PromptBank& bank, const NDArray& spatial_env,
                                 const NDArray& temporal_env, const WindowSet& windows,
                                 const PretrainConfig& config);

/// CSV export [entity_id, dim0..dim{E_p-1}] for heatmap plotting.
void export_prompts_csv(const std::string& path, const std::vector<std::int64_t>& ids,
                        const NDArray& prompts);

}  // namespace coms2t
