#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coms2t/backbone.hpp"
#include "coms2t/dataset.hpp"
#include "coms2t/ood.hpp"
#include "coms2t/prompt.hpp"
#include "coms2t/train.hpp"

namespace coms2t {

/// Mean absolute error over every entry (steps, nodes, features).
double mae(const NDArray& pred, const NDArray& target);
/// MAE restricted to a node subset; tensors are [B, horizon, N, F].
double mae_nodes(const NDArray& pred, const NDArray& target,
                 const std::vector<std::size_t>& nodes);

/// Everything needed to reproduce one experiment: data source, scenario,
/// model sizes, stage plan, ablation variant and seeds.
struct ExperimentConfig {
    std::string dataset_path;  // empty -> use the synthetic generator
    SynthConfig synth;
    std::string scenario = "temp_interval";
    double mask_fraction = 0.25;  // node scenarios
    std::string variant = "full";  // full | non_hip | non_ssl | non_prompt | non_ttf
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t env_width = 16;
    std::size_t prompt_dim = 16;
    int encoder_depth = 2;
    BackboneConfig backbone;  // n_nodes / n_features filled from the data
    StagePlan plan;
    HourRange train_hours{8, 16}, val_hours{16, 24}, adapt_hours{0, 1}, test_hours{0, 7};
    std::vector<int> train_months{1, 2, 3, 4, 5, 6}, val_months{7, 8}, adapt_months{9},
        test_months{10, 11, 12};
    StepFractions fractions;

    void validate() const;  // unknown scenario/variant -> ConfigError
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
};

/// Updated-parameter accounting for one run, with the closed-form total
/// it must reproduce. Buckets: "warmup" marks every backbone scalar once;
/// "finetune" marks every unfrozen backbone scalar (heads included) once;
/// "adapt" marks the encoder+interaction prompt scalars once per
/// adaptation event; "prompt_plumbing" (fine-tune prompt updates) is
/// reported but sits outside the identity.
struct AccountingRecord {
    std::size_t L = 0;
    std::size_t warmup = 0, finetune = 0, adapt = 0, prompt_plumbing = 0;
    std::size_t neocortex = 0, E_P = 0, P = 0;
    double gamma_percent = 0.0;
    std::size_t closed_form = 0, instrument_total = 0;
    bool match = false;
};

AccountingRecord make_accounting(const UpdateCounter& counter, std::size_t L,
                                 std::size_t neocortex, std::size_t e_p, std::size_t p_events);
/// L + (L - neocortex) + P * E_P.
std::size_t closed_form_coms2t(std::size_t L, std::size_t neocortex, std::size_t p_events,
                               std::size_t e_p);
/// Comparator row: K*L + L*P*gamma% (context only).
double closed_form_caustg(std::size_t k, std::size_t L, std::size_t p, double gamma_percent);

struct SeedOutcome {
    std::uint64_t seed = 0;
    double val_mae = 0.0;
    double test_mae = 0.0;
    double seen_mae = 0.0;  // node_involve: nodes seen in training
    double new_mae = 0.0;   // node_involve: nodes added at test
    double adapt_initial_loss = 0.0;
    double adapt_final_loss = 0.0;
    AccountingRecord accounting;
    std::size_t prompt_accesses = 0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<SeedOutcome> per_seed;
    double mean_test_mae = 0.0;
    double std_test_mae = 0.0;
    std::vector<std::string> artifacts;
    std::string to_json() const;
};

/// Full pipeline over all configured seeds; when out_dir is non-empty,
/// writes report.json, the split manifest, transcripts and plots there.
ExperimentReport run_experiment(const ExperimentConfig& config, const std::string& out_dir = "");

/// One report per ablation variant (config's own variant replaced).
std::vector<ExperimentReport> run_ablation(const ExperimentConfig& config,
                                           const std::string& out_dir = "");

}  // namespace coms2t
