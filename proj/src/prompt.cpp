#include "coms2t/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace coms2t {

PromptBank::PromptBank(const PromptConfig& config, std::uint64_t seed) : config_(config) {
    if (config_.prompt_dim == 0 || config_.env_width == 0 || config_.out_features == 0)
        throw ConfigError("prompt: zero-sized dimension");
    if (config_.encoder_depth != 1 && config_.encoder_depth != 2)
        throw ConfigError("prompt: encoder_depth must be 1 or 2");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto glorot = [&](std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out) {
        NDArray a(std::move(shape));
        double s = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = s * unit(rng);
        return a;
    };
    auto push = [&](std::string name, NDArray value) {
        ParamTensor p;
        p.name = std::move(name);
        p.block = Block::Head;  // prompt tensors never enter the ledger blocks
        p.grad = NDArray(value.shape());
        p.value = std::move(value);
        tensors_.push_back(std::move(p));
    };

    std::size_t E2 = 2 * config_.env_width;
    std::size_t Ep = config_.prompt_dim;
    std::size_t H = 2 * Ep;
    std::size_t F = config_.out_features;

    for (const char* prefix : {"ps", "pt"}) {
        std::string pre(prefix);
        if (config_.encoder_depth == 1) {
            push(pre + "_w0", glorot({E2, Ep}, E2, Ep));
            push(pre + "_b0", NDArray({Ep}));
        } else {
            push(pre + "_w0", glorot({E2, H}, E2, H));
            push(pre + "_b0", NDArray({H}));
            push(pre + "_w1", glorot({H, Ep}, H, Ep));
            push(pre + "_b1", NDArray({Ep}));
        }
    }
    push("stim_cin", glorot({Ep, 2, 2}, 4, Ep));
    push("stim_mlp_w", glorot({Ep, Ep}, Ep, Ep));
    push("stim_mlp_b", NDArray({Ep}));
    push("stim_head_w", glorot({2 * Ep, 2 * F}, 2 * Ep, 2 * F));
    push("stim_head_b", NDArray({2 * F}));
    // Zero-initialized so injection starts as a no-op and fine-tuning begins
    // exactly at the warmed-up function.
    push("al_s", NDArray({Ep, config_.spatial_inject_width}));
    push("al_t", NDArray({Ep, config_.temporal_inject_width}));
}

ParamTensor& PromptBank::find(const std::string& name) {
    for (auto& p : tensors_)
        if (p.name == name) return p;
    throw LedgerError("prompt bank: unknown tensor " + name);
}

const ParamTensor& PromptBank::find(const std::string& name) const {
    for (const auto& p : tensors_)
        if (p.name == name) return p;
    throw LedgerError("prompt bank: unknown tensor " + name);
}

namespace {
bool is_alignment(const std::string& name) { return name == "al_s" || name == "al_t"; }
}  // namespace

std::vector<ParamRef> PromptBank::encoder_stim_refs() {
    std::vector<ParamRef> refs;
    for (auto& p : tensors_)
        if (!is_alignment(p.name)) refs.push_back({p.name, &p.value, &p.grad, nullptr});
    return refs;
}

std::vector<ParamRef> PromptBank::all_refs() {
    std::vector<ParamRef> refs;
    for (auto& p : tensors_) refs.push_back({p.name, &p.value, &p.grad, nullptr});
    return refs;
}

std::size_t PromptBank::encoder_stim_size() const {
    std::size_t n = 0;
    for (const auto& p : tensors_)
        if (!is_alignment(p.name)) n += p.value.size();
    return n;
}

std::size_t PromptBank::total_size() const {
    std::size_t n = 0;
    for (const auto& p : tensors_) n += p.value.size();
    return n;
}

std::uint64_t PromptBank::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : tensors_) h = hash_array(p.value, h);
    return h;
}

void PromptBank::zero_grads() {
    for (auto& p : tensors_) p.grad.fill(0.0);
}

ad::Tape::Var BoundBank::at(const std::string& name) const {
    for (const auto& [n, v] : vars)
        if (n == name) return v;
    throw LedgerError("bound bank: unknown tensor " + name);
}

BoundBank bind_bank(ad::Tape& tape, PromptBank& bank) {
    BoundBank bb;
    bb.bank = &bank;
    for (auto& p : bank.tensors()) bb.vars.push_back({p.name, tape.param(p.value, &p.grad)});
    bank.note_access();
    return bb;
}

namespace {
ad::Tape::Var encode_rows(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var desc,
                          const std::string& pre) {
    const PromptConfig& cfg = bb.bank->config();
    if (tape.val(desc).rank() != 2 || tape.val(desc).dim(1) != 2 * cfg.env_width)
        throw ShapeError("encode: descriptor width mismatch");
    auto h = tape.linear(desc, bb.at(pre + "_w0"), bb.at(pre + "_b0"));
    if (cfg.encoder_depth == 2)
        h = tape.linear(tape.relu(h), bb.at(pre + "_w1"), bb.at(pre + "_b1"));
    return h;
}
}  // namespace

ad::Tape::Var encode_spatial_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var desc) {
    return encode_rows(tape, bb, desc, "ps");
}

ad::Tape::Var encode_temporal_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var desc) {
    return encode_rows(tape, bb, desc, "pt");
}

std::pair<ad::Tape::Var, ad::Tape::Var> stim_forward_t(ad::Tape& tape, const BoundBank& bb,
                                                       ad::Tape::Var ps, ad::Tape::Var pt) {
    const PromptConfig& cfg = bb.bank->config();
    const NDArray& a = tape.val(ps);
    const NDArray& b = tape.val(pt);
    if (!a.same_shape(b) || a.rank() != 2 || a.dim(1) != cfg.prompt_dim)
        throw ShapeError("stim_forward: prompt width mismatch");
    auto prod = tape.mul(ps, pt);
    auto cin = tape.cin_pool(ps, pt, bb.at("stim_cin"));
    auto mlp = tape.relu(tape.linear(prod, bb.at("stim_mlp_w"), bb.at("stim_mlp_b")));
    auto raw = tape.linear(tape.concat_cols(cin, mlp), bb.at("stim_head_w"), bb.at("stim_head_b"));
    std::size_t F = cfg.out_features;
    auto mu_hat = tape.slice_cols(raw, 0, F);
    auto sigma_hat = tape.softplus(tape.slice_cols(raw, F, 2 * F));
    return {mu_hat, sigma_hat};
}

ad::Tape::Var ssl_loss_t(ad::Tape& tape, ad::Tape::Var mu_hat, ad::Tape::Var sigma_hat,
                         const NDArray& mu, const NDArray& sigma) {
    if (!tape.val(mu_hat).same_shape(mu) || !tape.val(sigma_hat).same_shape(sigma))
        throw ShapeError("ssl_loss: shape mismatch");
    return tape.add(tape.sse(mu_hat, mu), tape.sse(sigma_hat, sigma));
}

ad::Tape::Var align_spatial_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var ps) {
    return tape.matmul(ps, bb.at("al_s"));
}

ad::Tape::Var align_temporal_t(ad::Tape& tape, const BoundBank& bb, ad::Tape::Var pt) {
    return tape.matmul(pt, bb.at("al_t"));
}

NDArray encode_spatial(PromptBank& bank, const NDArray& desc_rows) {
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    return tape.val(encode_spatial_t(tape, bb, tape.input(desc_rows)));
}

NDArray encode_temporal(PromptBank& bank, const NDArray& desc_rows) {
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    return tape.val(encode_temporal_t(tape, bb, tape.input(desc_rows)));
}

void stim_forward(PromptBank& bank, const NDArray& ps, const NDArray& pt, NDArray& mu_hat,
                  NDArray& sigma_hat) {
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    auto [m, s] = stim_forward_t(tape, bb, tape.input(ps), tape.input(pt));
    mu_hat = tape.val(m);
    sigma_hat = tape.val(s);
}

double ssl_loss(const NDArray& mu_hat, const NDArray& sigma_hat, const NDArray& mu,
                const NDArray& sigma) {
    if (!mu_hat.same_shape(mu) || !sigma_hat.same_shape(sigma))
        throw ShapeError("ssl_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mu_hat.size(); ++i) {
        double dm = mu_hat[i] - mu[i];
        s += dm * dm;
    }
    for (std::size_t i = 0; i < sigma_hat.size(); ++i) {
        double ds = sigma_hat[i] - sigma[i];
        s += ds * ds;
    }
    return s;
}

NDArray align_spatial(PromptBank& bank, const NDArray& ps) {
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    return tape.val(align_spatial_t(tape, bb, tape.input(ps)));
}

NDArray align_temporal(PromptBank& bank, const NDArray& pt) {
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    return tape.val(align_temporal_t(tape, bb, tape.input(pt)));
}

namespace {
struct Pair {
    std::size_t node;
    std::size_t anchor;
    double mu;
    double sigma;
};

/// Batch forward for the SSL objective; returns the batch loss (sum form)
/// and leaves gradients in the bank when requested.
double ssl_batch(PromptBank& bank, const NDArray& spatial_env, const NDArray& temporal_env,
                 const std::vector<Pair>& pairs, std::size_t begin, std::size_t end,
                 bool with_grad) {
    std::size_t M = end - begin;
    std::size_t E2 = spatial_env.dim(1);
    NDArray sdesc({M, E2}), tdesc({M, E2});
    NDArray mu({M, 1}), sigma({M, 1});
    for (std::size_t m = 0; m < M; ++m) {
        const Pair& p = pairs[begin + m];
        for (std::size_t c = 0; c < E2; ++c) {
            sdesc.at(m, c) = spatial_env.at(p.node, c);
            tdesc.at(m, c) = temporal_env.at(p.anchor, c);
        }
        mu.at(m, 0) = p.mu;
        sigma.at(m, 0) = p.sigma;
    }
    ad::Tape tape;
    auto bb = bind_bank(tape, bank);
    auto ps = encode_spatial_t(tape, bb, tape.input(sdesc));
    auto pt = encode_temporal_t(tape, bb, tape.input(tdesc));
    auto [mh, sh] = stim_forward_t(tape, bb, ps, pt);
    auto loss = ssl_loss_t(tape, mh, sh, mu, sigma);
    if (with_grad) tape.backward(loss);
    return tape.val(loss)[0];
}
}  // namespace

PretrainHistory pretrain_prompts(PromptBank& bank, const NDArray& spatial_env,
                                 const NDArray& temporal_env, const WindowSet& windows,
                                 const PretrainConfig& config) {
    if (windows.empty()) throw EmptyWindowError("pretrain_prompts: no windows");
    if (bank.config().out_features != 1)
        throw ConfigError("pretrain_prompts: one target feature expected");

    std::vector<Pair> pairs;
    NDArray mu, sigma;
    for (const auto& w : windows) {
        window_distribution(w.x, mu, sigma);
        std::size_t N = w.x.dim(1);
        for (std::size_t i = 0; i < N; ++i)
            pairs.push_back({i, w.anchor, mu.at(i, std::size_t{0}), sigma.at(i, std::size_t{0})});
    }

    std::mt19937_64 rng(config.seed);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    auto holdout = static_cast<std::size_t>(
        static_cast<double>(pairs.size()) * config.holdout_fraction);
    holdout = std::min(holdout, pairs.size() - 1);
    std::size_t n_train = pairs.size() - holdout;

    PretrainHistory hist;
    hist.initial_holdout = holdout
        ? ssl_batch(bank, spatial_env, temporal_env, pairs, n_train, pairs.size(), false)
        : 0.0;

    Adam opt(bank.encoder_stim_refs(), config.lr);
    double initial_batch_loss = -1.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < n_train; b += config.batch_size) {
            std::size_t e = std::min(b + config.batch_size, n_train);
            double l = ssl_batch(bank, spatial_env, temporal_env, pairs, b, e, true);
            if (!std::isfinite(l)) throw DivergenceError("pretrain_prompts: non-finite loss");
            if (initial_batch_loss < 0.0) initial_batch_loss = l;
            if (initial_batch_loss > 0.0 && l > 1e3 * initial_batch_loss)
                throw DivergenceError("pretrain_prompts: loss diverged");
            opt.step();
            total += l;
            ++batches;
        }
        hist.train_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
        hist.holdout_loss.push_back(holdout
            ? ssl_batch(bank, spatial_env, temporal_env, pairs, n_train, pairs.size(), false)
            : 0.0);
    }
    hist.final_holdout = hist.holdout_loss.empty() ? hist.initial_holdout
                                                   : hist.holdout_loss.back();
    return hist;
}

void export_prompts_csv(const std::string& path, const std::vector<std::int64_t>& ids,
                        const NDArray& prompts) {
    if (prompts.rank() != 2 || ids.size() != prompts.dim(0))
        throw ShapeError("export_prompts_csv: id/row mismatch");
    std::ofstream out(path);
    if (!out) throw ReportError("export_prompts_csv: cannot open " + path);
    out << "entity_id";
    for (std::size_t c = 0; c < prompts.dim(1); ++c) out << ",dim" << c;
    out << "\n";
    char buf[64];
    for (std::size_t r = 0; r < prompts.dim(0); ++r) {
        out << ids[r];
        for (std::size_t c = 0; c < prompts.dim(1); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", prompts.at(r, c));
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace coms2t
