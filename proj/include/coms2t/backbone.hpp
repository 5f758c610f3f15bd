#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coms2t/ndarray.hpp"
#include "coms2t/tape.hpp"

namespace coms2t {

enum class Block { Spatial, Temporal, Head };

enum class Activation { Relu, Linear };

/// Fixed-stack GraphWaveNet-style learner: K spatial graph-convolution
/// layers with learnable adaptive adjacency, then L dilated causal
/// temporal convolutions, with linear projection heads at both ends.
struct BackboneConfig {
    std::size_t n_nodes = 0;
    std::size_t n_features = 1;
    std::size_t hidden = 32;
    std::size_t kappa = 12;
    std::size_t horizon = 12;
    std::size_t spatial_layers = 2;
    std::vector<std::size_t> kernel_widths = {12, 6, 3};
    std::vector<int> dilations = {1, 2, 4};
    Activation activation = Activation::Relu;
    /// When false, every spatial layer uses fixed_adjacency verbatim (no
    /// softmax, no A_i parameters); used by the node-removal control.
    bool adaptive_adjacency = true;
    NDArray fixed_adjacency;  // [N,N], already normalized; only when !adaptive

    std::size_t receptive_field() const;
    void check() const;  // throws ConfigError
};

struct ParamTensor {
    std::string name;
    Block block = Block::Head;
    NDArray value;
    NDArray grad;
};

struct RegistryEntry {
    std::string name;
    std::vector<std::size_t> shape;
    Block block;
};

/// All learnable tensors of the backbone with a stable flat index space.
class ModelParams {
public:
    ModelParams() = default;
    ModelParams(const BackboneConfig& config, std::uint64_t seed);

    const BackboneConfig& config() const { return config_; }
    std::vector<ParamTensor>& tensors() { return tensors_; }
    const std::vector<ParamTensor>& tensors() const { return tensors_; }
    ParamTensor& find(const std::string& name);
    const ParamTensor& find(const std::string& name) const;

    std::vector<RegistryEntry> registry() const;
    std::size_t total_size() const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    void zero_grads();

    std::uint64_t architecture_hash() const;

    /// Copy with adjacency parameters resized to a new node set: keep_rows
    /// selects surviving indices of the old graph, and extended_adjacency
    /// (optional) supplies extra rows/columns for newly added nodes.
    ModelParams with_adjacency(const std::vector<NDArray>& new_adjacency,
                               std::size_t new_n_nodes) const;

private:
    BackboneConfig config_;
    std::vector<ParamTensor> tensors_;
};

/// Optional additive prompt injections, already aligned to the injection
/// sites and living on the same tape (so they stay differentiable).
struct PromptInjection {
    std::optional<ad::Tape::Var> spatial;   // [N, F], added to the input
    std::optional<ad::Tape::Var> temporal;  // [kappa, hidden], added after the spatial stack
    /// Per-sample variant for batches whose windows have different anchors:
    /// [B*kappa, hidden]. Mutually exclusive with temporal.
    std::optional<ad::Tape::Var> temporal_per_sample;
};

/// Full forward pass: [B,kappa,N,F] -> [B,horizon,N,F].
ad::Tape::Var forward(ad::Tape& tape, ad::Tape::Var x, ModelParams& params,
                      const PromptInjection& prompts = {});

/// Spatial stack only (tape-free convenience): [B,kappa,N,d_in] -> same shape
/// with hidden channels. Uses the registered A_i / omega_i.
NDArray spatial_forward(const NDArray& x_in, ModelParams& params);

/// Temporal stack applied to a spatial output, reduced to the last step:
/// [B,kappa,N,d] -> [B,N,d].
NDArray temporal_forward(const NDArray& x_s, ModelParams& params);

/// Tape-free full forward for evaluation.
NDArray predict_batch(const NDArray& x, ModelParams& params,
                      const NDArray* prompt_spatial = nullptr,   // [N,F]
                      const NDArray* prompt_temporal = nullptr,  // [kappa,hidden]
                      const NDArray* prompt_temporal_per_sample = nullptr);  // [B*kappa,hidden]

/// Mean absolute error with the subgradient at zero taken as 0 (training
/// objective; evaluation MAE lives in eval.hpp).
double loss_mae_train(const NDArray& pred, const NDArray& target);

// --- optimizer ---

/// View over one trainable tensor; frozen (when set) marks entries the
/// optimizer must not touch, bit-exactly.
struct ParamRef {
    std::string name;
    NDArray* value = nullptr;
    NDArray* grad = nullptr;
    const std::vector<std::uint8_t>* frozen = nullptr;
};

/// Marks which scalars the optimizer stepped, per accounting bucket.
/// A bucket holds one or more events; within an event a scalar counts
/// once, and the bucket total sums over events (so P adaptation events of
/// the same prompt tensors count P times).
class UpdateCounter {
public:
    void begin_event(const std::string& bucket);
    void mark(const std::string& bucket, const std::string& tensor, std::size_t index);
    std::size_t count(const std::string& bucket) const;
    std::vector<std::string> buckets() const;

private:
    using Event = std::vector<std::pair<std::string, std::vector<std::uint8_t>>>;
    std::vector<std::pair<std::string, std::vector<Event>>> buckets_;
};

class Adam {
public:
    explicit Adam(std::vector<ParamRef> params, double lr = 1e-4, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    /// One update from the accumulated grads; zeroes them afterwards.
    void step(UpdateCounter* counter = nullptr, const std::string& bucket = "default");

    std::vector<ParamRef>& params() { return params_; }

private:
    std::vector<ParamRef> params_;
    std::vector<NDArray> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

std::vector<ParamRef> backbone_refs(ModelParams& params);

// --- checkpointing ---

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::string& stage, int epoch, std::uint64_t seed);
ModelParams load_checkpoint(const std::string& path, const BackboneConfig& expected_config);

}  // namespace coms2t
