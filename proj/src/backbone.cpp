#include "coms2t/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

using nlohmann::json;

namespace coms2t {

std::size_t BackboneConfig::receptive_field() const {
    std::size_t rf = 1;
    for (std::size_t i = 0; i < kernel_widths.size(); ++i)
        rf += (kernel_widths[i] - 1) * static_cast<std::size_t>(dilations[i]);
    return rf;
}

void BackboneConfig::check() const {
    if (n_nodes < 2) throw ConfigError("backbone: need at least 2 nodes");
    if (kernel_widths.size() != dilations.size())
        throw ConfigError("backbone: kernel/dilation count mismatch");
    if (kernel_widths.empty()) throw ConfigError("backbone: need at least one temporal layer");
    if (receptive_field() < kappa)
        throw ConfigError("backbone: temporal receptive field smaller than kappa");
    if (!adaptive_adjacency) {
        if (fixed_adjacency.rank() != 2 || fixed_adjacency.dim(0) != n_nodes ||
            fixed_adjacency.dim(1) != n_nodes)
            throw ConfigError("backbone: fixed adjacency must be NxN");
    }
}

ModelParams::ModelParams(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
    config_.check();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto glorot = [&](std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out) {
        NDArray a(std::move(shape));
        double s = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = s * unit(rng);
        return a;
    };
    auto push = [&](std::string name, Block block, NDArray value) {
        ParamTensor p;
        p.name = std::move(name);
        p.block = block;
        p.grad = NDArray(value.shape());
        p.value = std::move(value);
        tensors_.push_back(std::move(p));
    };

    std::size_t N = config_.n_nodes, F = config_.n_features, d = config_.hidden;

    push("in_w", Block::Head, glorot({F, d}, F, d));
    push("in_b", Block::Head, NDArray({d}));
    for (std::size_t i = 0; i < config_.spatial_layers; ++i) {
        if (config_.adaptive_adjacency) {
            NDArray a({N, N});
            for (std::size_t k = 0; k < a.size(); ++k) a[k] = 0.1 * unit(rng);
            push("A_" + std::to_string(i), Block::Spatial, std::move(a));
        }
        push("ws_" + std::to_string(i), Block::Spatial, glorot({d, d}, d, d));
        push("bs_" + std::to_string(i), Block::Spatial, NDArray({d}));
    }
    for (std::size_t i = 0; i < config_.kernel_widths.size(); ++i) {
        std::size_t kw = config_.kernel_widths[i];
        push("wt_" + std::to_string(i), Block::Temporal, glorot({kw, d, d}, kw * d, d));
        push("bt_" + std::to_string(i), Block::Temporal, NDArray({d}));
    }
    push("out_w", Block::Head, glorot({d, config_.horizon * F}, d, config_.horizon * F));
    push("out_b", Block::Head, NDArray({config_.horizon * F}));
}

ParamTensor& ModelParams::find(const std::string& name) {
    for (auto& p : tensors_)
        if (p.name == name) return p;
    throw LedgerError("unknown parameter tensor: " + name);
}

const ParamTensor& ModelParams::find(const std::string& name) const {
    for (const auto& p : tensors_)
        if (p.name == name) return p;
    throw LedgerError("unknown parameter tensor: " + name);
}

std::vector<RegistryEntry> ModelParams::registry() const {
    std::vector<RegistryEntry> out;
    for (const auto& p : tensors_) out.push_back({p.name, p.value.shape(), p.block});
    return out;
}

std::size_t ModelParams::total_size() const {
    std::size_t n = 0;
    for (const auto& p : tensors_) n += p.value.size();
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const auto& p : tensors_)
        flat.insert(flat.end(), p.value.raw().begin(), p.value.raw().end());
    return flat;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
    if (flat.size() != total_size()) throw ShapeError("unflatten: length mismatch");
    std::size_t pos = 0;
    for (auto& p : tensors_) {
        std::copy(flat.begin() + pos, flat.begin() + pos + p.value.size(),
                  p.value.raw().begin());
        pos += p.value.size();
    }
}

void ModelParams::zero_grads() {
    for (auto& p : tensors_) p.grad.fill(0.0);
}

std::uint64_t ModelParams::architecture_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : tensors_) {
        for (char c : p.name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        for (auto d : p.value.shape()) mix(d);
        mix(static_cast<std::uint64_t>(p.block));
    }
    mix(config_.kappa);
    mix(config_.horizon);
    mix(config_.hidden);
    return h;
}

ModelParams ModelParams::with_adjacency(const std::vector<NDArray>& new_adjacency,
                                        std::size_t new_n_nodes) const {
    ModelParams out = *this;
    out.config_.n_nodes = new_n_nodes;
    if (config_.adaptive_adjacency) {
        if (new_adjacency.size() != config_.spatial_layers)
            throw ShapeError("with_adjacency: need one matrix per spatial layer");
        for (std::size_t i = 0; i < new_adjacency.size(); ++i) {
            auto& p = out.find("A_" + std::to_string(i));
            if (new_adjacency[i].rank() != 2 || new_adjacency[i].dim(0) != new_n_nodes ||
                new_adjacency[i].dim(1) != new_n_nodes)
                throw ShapeError("with_adjacency: matrix shape mismatch");
            p.value = new_adjacency[i];
            p.grad = NDArray(p.value.shape());
        }
    } else {
        if (new_adjacency.size() != 1)
            throw ShapeError("with_adjacency: fixed mode takes exactly one matrix");
        out.config_.fixed_adjacency = new_adjacency[0];
    }
    out.config_.check();
    return out;
}

namespace {

void check_finite(const NDArray& a, const std::string& where) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) throw NumericsError("non-finite activation in " + where);
}

ad::Tape::Var act(ad::Tape& tape, ad::Tape::Var v, Activation a) {
    return a == Activation::Relu ? tape.relu(v) : v;
}

struct TapeRefs {
    std::map<std::string, ad::Tape::Var> vars;
    ad::Tape::Var operator[](const std::string& n) const { return vars.at(n); }
};

TapeRefs bind_params(ad::Tape& tape, ModelParams& params) {
    TapeRefs refs;
    for (auto& p : params.tensors()) refs.vars[p.name] = tape.param(p.value, &p.grad);
    return refs;
}

ad::Tape::Var spatial_stack(ad::Tape& tape, ad::Tape::Var h, ModelParams& params,
                            const TapeRefs& refs) {
    const auto& cfg = params.config();
    for (std::size_t i = 0; i < cfg.spatial_layers; ++i) {
        ad::Tape::Var ahat;
        if (cfg.adaptive_adjacency)
            ahat = tape.row_softmax(refs["A_" + std::to_string(i)]);
        else
            ahat = tape.input(cfg.fixed_adjacency);
        h = tape.node_mix(h, ahat);
        h = tape.feat_mix(h, refs["ws_" + std::to_string(i)]);
        h = tape.bias_last(h, refs["bs_" + std::to_string(i)]);
        h = act(tape, h, cfg.activation);
        check_finite(tape.val(h), "spatial layer " + std::to_string(i));
    }
    return h;
}

ad::Tape::Var temporal_stack(ad::Tape& tape, ad::Tape::Var h, ModelParams& params,
                             const TapeRefs& refs) {
    const auto& cfg = params.config();
    for (std::size_t i = 0; i < cfg.kernel_widths.size(); ++i) {
        h = tape.causal_conv(h, refs["wt_" + std::to_string(i)], cfg.dilations[i]);
        h = tape.bias_last(h, refs["bt_" + std::to_string(i)]);
        h = act(tape, h, cfg.activation);
        check_finite(tape.val(h), "temporal layer " + std::to_string(i));
    }
    return tape.last_step(h);
}

ad::Tape::Var head_out(ad::Tape& tape, ad::Tape::Var z, ModelParams& params,
                       const TapeRefs& refs) {
    auto h = tape.expand_time(z);
    h = tape.feat_mix(h, refs["out_w"]);
    h = tape.bias_last(h, refs["out_b"]);
    return tape.head_split(h, params.config().horizon);
}

}  // namespace

ad::Tape::Var forward(ad::Tape& tape, ad::Tape::Var x, ModelParams& params,
                      const PromptInjection& prompts) {
    const auto& cfg = params.config();
    const NDArray& vx = tape.val(x);
    if (vx.rank() != 4 || vx.dim(1) != cfg.kappa || vx.dim(2) != cfg.n_nodes ||
        vx.dim(3) != cfg.n_features)
        throw ShapeError("forward: input must be [B,kappa,N,F]");
    auto refs = bind_params(tape, params);
    if (prompts.spatial) x = tape.add_node_broadcast(x, *prompts.spatial);
    auto h = tape.feat_mix(x, refs["in_w"]);
    h = tape.bias_last(h, refs["in_b"]);
    h = spatial_stack(tape, h, params, refs);
    if (prompts.temporal && prompts.temporal_per_sample)
        throw ShapeError("forward: temporal and temporal_per_sample are exclusive");
    if (prompts.temporal) h = tape.add_step_broadcast(h, *prompts.temporal);
    if (prompts.temporal_per_sample)
        h = tape.add_sample_step_broadcast(h, *prompts.temporal_per_sample);
    h = temporal_stack(tape, h, params, refs);
    return head_out(tape, h, params, refs);
}

NDArray apply_input_head(const NDArray& x, ModelParams& params) {
    ad::Tape tape;
    auto refs = bind_params(tape, params);
    auto h = tape.feat_mix(tape.input(x), refs["in_w"]);
    h = tape.bias_last(h, refs["in_b"]);
    return tape.val(h);
}

NDArray spatial_forward(const NDArray& x_in, ModelParams& params) {
    ad::Tape tape;
    auto refs = bind_params(tape, params);
    return tape.val(spatial_stack(tape, tape.input(x_in), params, refs));
}

NDArray temporal_forward(const NDArray& x_s, ModelParams& params) {
    ad::Tape tape;
    auto refs = bind_params(tape, params);
    return tape.val(temporal_stack(tape, tape.input(x_s), params, refs));
}

NDArray apply_output_head(const NDArray& z, ModelParams& params) {
    ad::Tape tape;
    auto refs = bind_params(tape, params);
    return tape.val(head_out(tape, tape.input(z), params, refs));
}

NDArray predict_batch(const NDArray& x, ModelParams& params, const NDArray* prompt_spatial,
                      const NDArray* prompt_temporal,
                      const NDArray* prompt_temporal_per_sample) {
    ad::Tape tape;
    PromptInjection inj;
    if (prompt_spatial) inj.spatial = tape.input(*prompt_spatial);
    if (prompt_temporal) inj.temporal = tape.input(*prompt_temporal);
    if (prompt_temporal_per_sample)
        inj.temporal_per_sample = tape.input(*prompt_temporal_per_sample);
    return tape.val(forward(tape, tape.input(x), params, inj));
}

double loss_mae_train(const NDArray& pred, const NDArray& target) {
    if (!pred.same_shape(target)) throw ShapeError("loss_mae_train: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

// --- optimizer ---

void UpdateCounter::begin_event(const std::string& bucket) {
    for (auto& [name, events] : buckets_)
        if (name == bucket) {
            events.emplace_back();
            return;
        }
    buckets_.push_back({bucket, {Event{}}});
}

void UpdateCounter::mark(const std::string& bucket, const std::string& tensor,
                         std::size_t index) {
    std::vector<Event>* events = nullptr;
    for (auto& [name, evs] : buckets_)
        if (name == bucket) events = &evs;
    if (!events) {
        buckets_.push_back({bucket, {Event{}}});
        events = &buckets_.back().second;
    }
    Event& ev = events->back();
    for (auto& [tname, mask] : ev)
        if (tname == tensor) {
            if (index >= mask.size()) mask.resize(index + 1, 0);
            mask[index] = 1;
            return;
        }
    ev.push_back({tensor, std::vector<std::uint8_t>(index + 1, 0)});
    ev.back().second[index] = 1;
}

std::size_t UpdateCounter::count(const std::string& bucket) const {
    std::size_t total = 0;
    for (const auto& [name, events] : buckets_) {
        if (name != bucket) continue;
        for (const auto& ev : events)
            for (const auto& [tname, mask] : ev)
                for (auto b : mask) total += b;
    }
    return total;
}

std::vector<std::string> UpdateCounter::buckets() const {
    std::vector<std::string> out;
    for (const auto& [name, events] : buckets_) out.push_back(name);
    return out;
}

Adam::Adam(std::vector<ParamRef> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value->shape());
        v_.emplace_back(p.value->shape());
    }
}

void Adam::step(UpdateCounter* counter, const std::string& bucket) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        for (std::size_t j = 0; j < p.value->size(); ++j) {
            if (p.frozen && (*p.frozen)[j]) continue;
            double gj = (*p.grad)[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            (*p.value)[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            if (counter) counter->mark(bucket, p.name, j);
        }
        p.grad->fill(0.0);
    }
}

std::vector<ParamRef> backbone_refs(ModelParams& params) {
    std::vector<ParamRef> refs;
    for (auto& p : params.tensors()) refs.push_back({p.name, &p.value, &p.grad, nullptr});
    return refs;
}

// --- checkpointing ---

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::string& stage, int epoch, std::uint64_t seed) {
    json header;
    header["architecture_hash"] = params.architecture_hash();
    header["stage"] = stage;
    header["epoch"] = epoch;
    header["seed"] = seed;
    json tensors = json::array();
    for (const auto& p : params.tensors())
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ReportError("cannot write checkpoint: " + path);
    out.write("CS2T", 4);
    auto len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : params.tensors())
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
}

ModelParams load_checkpoint(const std::string& path, const BackboneConfig& expected_config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "CS2T", 4) != 0) throw SchemaError("checkpoint: bad magic");
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    json header = json::parse(hs);

    ModelParams params(expected_config, 0);
    if (header.at("architecture_hash").get<std::uint64_t>() != params.architecture_hash())
        throw SchemaError("checkpoint: architecture hash mismatch");
    for (auto& p : params.tensors()) {
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!in) throw SchemaError("checkpoint: truncated tensor data");
    }
    return params;
}

}  // namespace coms2t
