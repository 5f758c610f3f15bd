#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coms2t/backbone.hpp"
#include "coms2t/dataset.hpp"
#include "coms2t/disentangle.hpp"
#include "coms2t/prompt.hpp"

namespace coms2t {

/// Per-stage budgets and hyperparameters for the four-stage pipeline:
/// warm up -> disentangle -> prompt pre-train -> fine-tune, plus the
/// optional test-time adaptation pass.
struct StagePlan {
    int warmup_epochs = 30;
    int warmup_patience = 3;
    int pretrain_epochs = 200;
    int finetune_epochs = 20;
    int adapt_epochs = 2;
    std::size_t adapt_max_batches = 8;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    double prompt_lr = 1e-3;
    /// Step size for test-time adaptation; far smaller than prompt_lr so a
    /// few adaptation events nudge the prompts instead of re-training them.
    double adapt_lr = 1e-4;
    double tau_percent = 60.0;
    double lambda = 0.0;
    int q_iterations = 1;  // disentangle -> pretrain -> finetune passes
    std::uint64_t seed = 1;
};

/// JSON-lines stage transcript; one entry per unit for the plotting CLI.
struct Transcript {
    std::vector<std::string> lines;
    void add(const std::string& stage, int epoch, double train_loss, double val_mae,
             const std::string& extra_json = "{}");
    void save(const std::string& path) const;
};

// --- batching helpers ---

NDArray stack_x(const WindowSet& windows, std::size_t begin, std::size_t end);
NDArray stack_y(const WindowSet& windows, std::size_t begin, std::size_t end);

/// Per-sample temporal descriptor rows for a batch: row b*kappa+t is the
/// descriptor of input step anchors[b]-kappa+1+t.
NDArray gather_temporal_desc(const NDArray& temporal_env, const std::vector<std::size_t>& anchors,
                             std::size_t kappa);

// --- stages ---

struct WarmupResult {
    int epochs_run = 0;
    bool stabilized = false;
    std::vector<double> train_loss;
    std::vector<double> val_mae;
};

/// Plain supervised training; one ledger unit per epoch. Stops early when
/// the validation error stabilizes.
WarmupResult run_warmup(ModelParams& params, const WindowSet& train, const WindowSet& val,
                        const StagePlan& plan, VariationLedger& ledger,
                        UpdateCounter* counter = nullptr, Transcript* transcript = nullptr);

struct FinetuneResult {
    std::vector<double> train_loss;
    std::vector<double> neo_mean;  // per-epoch mean of frozen values (with a partition)
    std::vector<double> hip_mean;  // per-epoch mean of trainable backbone values
};

/// Prompt-injected fine-tuning with the neocortex frozen bit-exactly.
/// partition == nullptr trains all weights (ablation); bank == nullptr
/// disables injection and prompt updates (ablation).
FinetuneResult run_finetune(ModelParams& params, const ParameterPartition* partition,
                            PromptBank* bank, const WindowSet& train, const NDArray& spatial_env,
                            const NDArray& temporal_env, const StagePlan& plan,
                            UpdateCounter* counter = nullptr, Transcript* transcript = nullptr);

struct AdaptResult {
    int events = 0;  // optimizer steps, i.e. P in the accounting identity
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Self-supervised prompt refresh on the adaptation slice; touches only
/// the encoder and interaction tensors of the bank.
AdaptResult test_time_adapt(PromptBank& bank, const WindowSet& adapt_windows,
                            const NDArray& spatial_env, const NDArray& temporal_env,
                            const StagePlan& plan, UpdateCounter* counter = nullptr,
                            Transcript* transcript = nullptr);

/// Prompt-conditioned batched prediction: [B,horizon,N,F]. bank == nullptr
/// gives the plain backbone forward.
NDArray predict(ModelParams& params, PromptBank* bank, const WindowSet& windows,
                const NDArray& spatial_env, const NDArray& temporal_env);

}  // namespace coms2t
