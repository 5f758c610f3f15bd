#include "coms2t/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include <json.hpp>

using nlohmann::json;

namespace coms2t {

void Transcript::add(const std::string& stage, int epoch, double train_loss, double val_mae,
                     const std::string& extra_json) {
    json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["train_loss"] = train_loss;
    j["val_mae"] = val_mae;
    j["extra"] = json::parse(extra_json);
    lines.push_back(j.dump());
}

void Transcript::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ReportError("transcript: cannot open " + path);
    for (const auto& l : lines) out << l << "\n";
}

NDArray stack_x(const WindowSet& windows, std::size_t begin, std::size_t end) {
    if (begin >= end || end > windows.size()) throw ShapeError("stack_x: bad range");
    const NDArray& first = windows[begin].x;
    NDArray out({end - begin, first.dim(0), first.dim(1), first.dim(2)});
    std::size_t per = first.size();
    for (std::size_t b = begin; b < end; ++b) {
        if (!windows[b].x.same_shape(first)) throw ShapeError("stack_x: ragged windows");
        std::copy(windows[b].x.raw().begin(), windows[b].x.raw().end(),
                  out.raw().begin() + static_cast<std::ptrdiff_t>((b - begin) * per));
    }
    return out;
}

NDArray stack_y(const WindowSet& windows, std::size_t begin, std::size_t end) {
    if (begin >= end || end > windows.size()) throw ShapeError("stack_y: bad range");
    const NDArray& first = windows[begin].y;
    NDArray out({end - begin, first.dim(0), first.dim(1), first.dim(2)});
    std::size_t per = first.size();
    for (std::size_t b = begin; b < end; ++b) {
        if (!windows[b].y.same_shape(first)) throw ShapeError("stack_y: ragged windows");
        std::copy(windows[b].y.raw().begin(), windows[b].y.raw().end(),
                  out.raw().begin() + static_cast<std::ptrdiff_t>((b - begin) * per));
    }
    return out;
}

NDArray gather_temporal_desc(const NDArray& temporal_env, const std::vector<std::size_t>& anchors,
                             std::size_t kappa) {
    std::size_t width = temporal_env.dim(1);
    NDArray out({anchors.size() * kappa, width});
    for (std::size_t b = 0; b < anchors.size(); ++b) {
        if (anchors[b] + 1 < kappa || anchors[b] >= temporal_env.dim(0))
            throw ShapeError("gather_temporal_desc: anchor out of range");
        for (std::size_t t = 0; t < kappa; ++t) {
            std::size_t step = anchors[b] + 1 - kappa + t;
            for (std::size_t c = 0; c < width; ++c)
                out.at(b * kappa + t, c) = temporal_env.at(step, c);
        }
    }
    return out;
}

namespace {
std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Copy of a window subset in a given order (keeps batches contiguous).
WindowSet reorder(const WindowSet& windows, const std::vector<std::size_t>& order) {
    WindowSet out;
    out.reserve(order.size());
    for (auto i : order) out.push_back(windows[i]);
    return out;
}

double val_mae_of(ModelParams& params, const WindowSet& val) {
    if (val.empty()) return 0.0;
    auto x = stack_x(val, 0, val.size());
    auto y = stack_y(val, 0, val.size());
    return loss_mae_train(predict_batch(x, params), y);
}
}  // namespace

WarmupResult run_warmup(ModelParams& params, const WindowSet& train, const WindowSet& val,
                        const StagePlan& plan, VariationLedger& ledger,
                        UpdateCounter* counter, Transcript* transcript) {
    if (train.empty()) throw EmptyWindowError("run_warmup: no training windows");
    WarmupResult res;
    if (plan.warmup_epochs <= 0) return res;

    Adam opt(backbone_refs(params), plan.lr);
    if (counter) counter->begin_event("warmup");
    std::mt19937_64 rng(plan.seed);
    for (int epoch = 0; epoch < plan.warmup_epochs; ++epoch) {
        auto epoch_windows = reorder(train, shuffled_order(train.size(), rng));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < epoch_windows.size(); b += plan.batch_size) {
            std::size_t e = std::min(b + plan.batch_size, epoch_windows.size());
            ad::Tape tape;
            auto pred = forward(tape, tape.input(stack_x(epoch_windows, b, e)), params);
            auto loss = tape.mae(pred, stack_y(epoch_windows, b, e));
            double l = tape.val(loss)[0];
            if (!std::isfinite(l)) throw DivergenceError("run_warmup: non-finite loss");
            tape.backward(loss);
            opt.step(counter, "warmup");
            total += l;
            ++batches;
        }
        ledger.update(params);
        res.train_loss.push_back(total / static_cast<double>(batches));
        res.val_mae.push_back(val_mae_of(params, val));
        ++res.epochs_run;
        if (transcript)
            transcript->add("warmup", epoch, res.train_loss.back(), res.val_mae.back());
        if (!val.empty() && warmup_stability_check(res.val_mae, plan.warmup_patience)) {
            res.stabilized = true;
            break;
        }
    }
    return res;
}

FinetuneResult run_finetune(ModelParams& params, const ParameterPartition* partition,
                            PromptBank* bank, const WindowSet& train, const NDArray& spatial_env,
                            const NDArray& temporal_env, const StagePlan& plan,
                            UpdateCounter* counter, Transcript* transcript) {
    if (train.empty()) throw EmptyWindowError("run_finetune: no training windows");
    if (partition && partition->parts.size() != params.tensors().size())
        throw LedgerError("run_finetune: partition/registry mismatch");
    if (partition) partition->install(params);

    std::vector<ParamRef> refs = backbone_refs(params);
    if (partition)
        for (auto& r : refs) r.frozen = &partition->part(r.name).neocortex;
    Adam opt(refs, plan.lr);
    std::unique_ptr<Adam> prompt_opt;
    if (bank) prompt_opt = std::make_unique<Adam>(bank->all_refs(), plan.prompt_lr);
    if (counter) {
        counter->begin_event("finetune");
        if (bank) counter->begin_event("prompt_plumbing");
    }

    std::size_t kappa = params.config().kappa;
    FinetuneResult res;
    std::mt19937_64 rng(plan.seed + 17);
    for (int epoch = 0; epoch < plan.finetune_epochs; ++epoch) {
        auto epoch_windows = reorder(train, shuffled_order(train.size(), rng));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < epoch_windows.size(); b += plan.batch_size) {
            std::size_t e = std::min(b + plan.batch_size, epoch_windows.size());
            ad::Tape tape;
            PromptInjection inj;
            BoundBank bb;
            if (bank) {
                bb = bind_bank(tape, *bank);
                auto ps = encode_spatial_t(tape, bb, tape.input(spatial_env));
                inj.spatial = align_spatial_t(tape, bb, ps);
                std::vector<std::size_t> anchors;
                for (std::size_t i = b; i < e; ++i) anchors.push_back(epoch_windows[i].anchor);
                auto tdesc = tape.input(gather_temporal_desc(temporal_env, anchors, kappa));
                auto pt = encode_temporal_t(tape, bb, tdesc);
                inj.temporal_per_sample = align_temporal_t(tape, bb, pt);
            }
            auto pred = forward(tape, tape.input(stack_x(epoch_windows, b, e)), params, inj);
            auto loss = tape.mae(pred, stack_y(epoch_windows, b, e));
            double l = tape.val(loss)[0];
            if (!std::isfinite(l)) throw DivergenceError("run_finetune: non-finite loss");
            tape.backward(loss);
            if (partition) apply_freeze(params, *partition);
            opt.step(counter, "finetune");
            if (prompt_opt) prompt_opt->step(counter, "prompt_plumbing");
            total += l;
            ++batches;
        }
        res.train_loss.push_back(total / static_cast<double>(batches));
        if (partition) {
            double neo = 0.0, hip = 0.0;
            std::size_t n_neo = 0, n_hip = 0;
            for (const auto& p : params.tensors()) {
                const auto& mask = partition->part(p.name).neocortex;
                for (std::size_t j = 0; j < p.value.size(); ++j) {
                    if (mask[j]) {
                        neo += p.value[j];
                        ++n_neo;
                    } else {
                        hip += p.value[j];
                        ++n_hip;
                    }
                }
            }
            res.neo_mean.push_back(n_neo ? neo / static_cast<double>(n_neo) : 0.0);
            res.hip_mean.push_back(n_hip ? hip / static_cast<double>(n_hip) : 0.0);
        }
        if (transcript) transcript->add("finetune", epoch, res.train_loss.back(), 0.0);
    }
    return res;
}

AdaptResult test_time_adapt(PromptBank& bank, const WindowSet& adapt_windows,
                            const NDArray& spatial_env, const NDArray& temporal_env,
                            const StagePlan& plan, UpdateCounter* counter,
                            Transcript* transcript) {
    if (adapt_windows.empty()) throw AdaptError("test_time_adapt: empty adaptation slice");

    struct Pair {
        std::size_t node, anchor;
        double mu, sigma;
    };
    std::vector<Pair> pairs;
    NDArray mu, sigma;
    for (const auto& w : adapt_windows) {
        window_distribution(w.x, mu, sigma);
        for (std::size_t i = 0; i < w.x.dim(1); ++i)
            pairs.push_back({i, w.anchor, mu.at(i, std::size_t{0}), sigma.at(i, std::size_t{0})});
    }

    std::size_t E2 = spatial_env.dim(1);
    auto batch_loss = [&](std::size_t begin, std::size_t end, bool with_grad) {
        std::size_t M = end - begin;
        NDArray sdesc({M, E2}), tdesc({M, E2}), mu_t({M, 1}), sigma_t({M, 1});
        for (std::size_t m = 0; m < M; ++m) {
            const Pair& p = pairs[begin + m];
            for (std::size_t c = 0; c < E2; ++c) {
                sdesc.at(m, c) = spatial_env.at(p.node, c);
                tdesc.at(m, c) = temporal_env.at(p.anchor, c);
            }
            mu_t.at(m, std::size_t{0}) = p.mu;
            sigma_t.at(m, std::size_t{0}) = p.sigma;
        }
        ad::Tape tape;
        auto bb = bind_bank(tape, bank);
        auto ps = encode_spatial_t(tape, bb, tape.input(sdesc));
        auto pt = encode_temporal_t(tape, bb, tape.input(tdesc));
        auto [mh, sh] = stim_forward_t(tape, bb, ps, pt);
        auto loss = ssl_loss_t(tape, mh, sh, mu_t, sigma_t);
        if (with_grad) tape.backward(loss);
        return tape.val(loss)[0];
    };

    AdaptResult res;
    res.initial_loss = batch_loss(0, pairs.size(), false);
    Adam opt(bank.encoder_stim_refs(), plan.adapt_lr);
    std::mt19937_64 rng(plan.seed + 43);
    for (int epoch = 0; epoch < plan.adapt_epochs; ++epoch) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        std::size_t batches = 0;
        for (std::size_t b = 0; b < pairs.size() && batches < plan.adapt_max_batches;
             b += plan.batch_size, ++batches) {
            std::size_t e = std::min(b + plan.batch_size, pairs.size());
            double l = batch_loss(b, e, true);
            if (!std::isfinite(l)) throw DivergenceError("test_time_adapt: non-finite loss");
            if (counter) counter->begin_event("adapt");
            opt.step(counter, "adapt");
            ++res.events;
        }
    }
    res.final_loss = batch_loss(0, pairs.size(), false);
    if (transcript)
        transcript->add("adapt", res.events, res.final_loss, 0.0,
                        "{\"initial_loss\":" + std::to_string(res.initial_loss) + "}");
    return res;
}

NDArray predict(ModelParams& params, PromptBank* bank, const WindowSet& windows,
                const NDArray& spatial_env, const NDArray& temporal_env) {
    if (windows.empty()) throw EmptyWindowError("predict: no windows");
    auto x = stack_x(windows, 0, windows.size());
    if (!bank) return predict_batch(x, params);
    NDArray inj_s = align_spatial(*bank, encode_spatial(*bank, spatial_env));
    std::vector<std::size_t> anchors;
    for (const auto& w : windows) anchors.push_back(w.anchor);
    auto tdesc = gather_temporal_desc(temporal_env, anchors, params.config().kappa);
    NDArray inj_t = align_temporal(*bank, encode_temporal(*bank, tdesc));
    return predict_batch(x, params, &inj_s, nullptr, &inj_t);
}

}  // namespace coms2t
