// End-to-end acceptance harness. Each criterion prints a single PASS/FAIL
// line; the process exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coms2t/eval.hpp"
#include "coms2t/theory.hpp"

using namespace coms2t;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("CRITERION %2d [%s] %s%s%s\n", id, pass ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

/// Shift-heavy desk-scale configuration: the test regime (night hours) has a
/// mean far from anything seen in training, so the prompt/adaptation path has
/// signal to exploit.
ExperimentConfig desk_config() {
    ExperimentConfig cfg;
    cfg.scenario = "temp_interval";
    cfg.variant = "full";
    cfg.seeds = {1};
    cfg.env_width = 112;
    cfg.prompt_dim = 8;

    cfg.synth.n_nodes = 6;
    cfg.synth.n_steps = 576;  // six days at 15 minutes
    cfg.synth.seed = 9;
    cfg.synth.interval_seconds = 900;
    cfg.synth.regimes = {{0, 8, -1.5, 0.3}, {8, 16, 1.0, 0.4}, {16, 24, 0.2, 0.4}};
    cfg.synth.ar_coeff = 0.3;
    cfg.synth.node_offsets = {0.0, 0.5, -0.5, 1.0, -1.0, 0.2};

    cfg.backbone.hidden = 8;
    cfg.backbone.kappa = 4;
    cfg.backbone.horizon = 4;
    cfg.backbone.spatial_layers = 1;
    cfg.backbone.kernel_widths = {3, 2};
    cfg.backbone.dilations = {1, 2};

    cfg.plan.warmup_epochs = 4;
    cfg.plan.pretrain_epochs = 20;
    cfg.plan.finetune_epochs = 4;
    cfg.plan.adapt_epochs = 2;
    cfg.plan.adapt_max_batches = 8;
    cfg.plan.batch_size = 64;
    cfg.plan.lr = 1e-3;
    cfg.plan.prompt_lr = 3e-3;
    cfg.plan.tau_percent = 60.0;
    return cfg;
}

std::uint64_t params_hash(const ModelParams& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params.tensors()) h = hash_array(p.value, h);
    return h;
}

struct Pipeline {
    SpatioTemporalDataset ds;
    WindowSet train, val, adapt;
    NDArray senv, tenv;
    BackboneConfig bcfg;
    PromptConfig pcfg;

    explicit Pipeline(std::uint64_t seed) {
        SynthConfig cfg;
        cfg.n_nodes = 4;
        cfg.n_steps = 220;
        cfg.seed = seed;
        cfg.interval_seconds = 3600;
        cfg.regimes = {{0, 12, -0.8, 0.4}, {12, 24, 0.8, 0.4}};
        ds = synth_generate(cfg);

        std::vector<std::size_t> tr, va, ad;
        for (std::size_t t = 0; t < 150; ++t) tr.push_back(t);
        for (std::size_t t = 150; t < 185; ++t) va.push_back(t);
        for (std::size_t t = 185; t < 220; ++t) ad.push_back(t);

        std::size_t E = 32;
        senv = build_spatial_env(ds, E);
        tenv = build_temporal_env(ds, fit_temporal_env(ds, E, 3, tr));
        train = make_windows(ds, 3, 2, tr);
        val = make_windows(ds, 3, 2, va);
        adapt = make_input_windows(ds, 3, ad);

        bcfg.n_nodes = 4;
        bcfg.n_features = 1;
        bcfg.hidden = 4;
        bcfg.kappa = 3;
        bcfg.horizon = 2;
        bcfg.spatial_layers = 1;
        bcfg.kernel_widths = {3};
        bcfg.dilations = {1};

        pcfg.env_width = E;
        pcfg.prompt_dim = 4;
        pcfg.spatial_inject_width = 1;
        pcfg.temporal_inject_width = 4;
    }
};

// --- criterion 1: variation ledger equals a bitwise replay oracle ---

void criterion_ledger() {
    Pipeline fx(101);
    ModelParams params(fx.bcfg, 3);
    auto ledger = VariationLedger::init(params, /*keep_history=*/true);
    StagePlan plan;
    plan.warmup_epochs = 6;
    plan.batch_size = 32;
    plan.lr = 3e-3;
    plan.seed = 7;
    run_warmup(params, fx.train, fx.val, plan, ledger);

    const auto& hist = ledger.history();
    bool ok = hist.size() == ledger.tb() + 1;
    // replay: accumulate |W^u - W^{u-1}| in the same element order
    for (std::size_t t = 0; ok && t < ledger.entries().size(); ++t) {
        NDArray oracle(ledger.entries()[t].accum.shape());
        for (std::size_t u = 1; u < hist.size(); ++u)
            for (std::size_t j = 0; j < oracle.size(); ++j)
                oracle[j] += std::fabs(hist[u][t][j] - hist[u - 1][t][j]);
        for (std::size_t j = 0; j < oracle.size(); ++j)
            if (oracle[j] != ledger.entries()[t].accum[j]) ok = false;
    }
    report(1, "variation ledger matches the bitwise replay oracle", ok,
           "units=" + std::to_string(ledger.tb()));
}

// --- criterion 2: stable-subset selection laws over randomized ledgers ---

void criterion_selection() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    std::uniform_int_distribution<std::size_t> len(3, 200);
    bool ok = true;
    std::string why;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        std::vector<double> accum(len(rng));
        for (auto& a : accum) a = trial % 3 == 0 ? std::floor(u(rng)) : u(rng);  // force ties
        for (int tau = 10; tau <= 90 && ok; tau += 10) {
            auto sel = select_stable_indices(accum, static_cast<double>(tau));
            auto expect = static_cast<std::size_t>(
                std::floor(tau / 100.0 * static_cast<double>(accum.size())));
            if (sel.size() != expect) { ok = false; why = "count"; }
            // sorted, unique, and no unselected value strictly below a selected one
            for (std::size_t i = 1; i < sel.size() && ok; ++i)
                if (sel[i] <= sel[i - 1]) { ok = false; why = "order"; }
            double worst_sel = -1.0;
            for (auto i : sel) worst_sel = std::max(worst_sel, accum[i]);
            std::vector<char> in(accum.size(), 0);
            for (auto i : sel) in[i] = 1;
            for (std::size_t i = 0; i < accum.size() && ok; ++i)
                if (!in[i] && accum[i] < worst_sel) { ok = false; why = "not the smallest set"; }
            // tie determinism: re-running yields the identical index set
            if (ok && select_stable_indices(accum, static_cast<double>(tau)) != sel) {
                ok = false;
                why = "nondeterministic";
            }
        }
    }
    report(2, "stable-subset selection obeys count/order/minimality laws", ok, why);
}

// --- criterion 3: stage isolation is bit-exact ---

void criterion_stage_isolation() {
    Pipeline fx(103);
    ModelParams params(fx.bcfg, 5);
    auto ledger = VariationLedger::init(params);
    StagePlan plan;
    plan.warmup_epochs = 4;
    plan.finetune_epochs = 3;
    plan.adapt_epochs = 2;
    plan.batch_size = 32;
    plan.lr = 3e-3;
    plan.prompt_lr = 1e-3;
    plan.seed = 13;
    run_warmup(params, fx.train, fx.val, plan, ledger);
    auto part = build_partition(params, ledger, 60.0, 0.0);
    part.install(params);
    auto frozen_hash = part.neocortex_hash(params);

    PromptBank bank(fx.pcfg, 77);
    run_finetune(params, &part, &bank, fx.train, fx.senv, fx.tenv, plan);
    bool ok = part.neocortex_hash(params) == frozen_hash;

    auto backbone_hash = params_hash(params);
    auto al_s = hash_array(bank.find("al_s").value);
    auto al_t = hash_array(bank.find("al_t").value);
    auto res = test_time_adapt(bank, fx.adapt, fx.senv, fx.tenv, plan);
    ok = ok && res.events > 0;
    ok = ok && part.neocortex_hash(params) == frozen_hash;  // still frozen
    ok = ok && params_hash(params) == backbone_hash;        // adaptation never touches it
    ok = ok && hash_array(bank.find("al_s").value) == al_s;  // nor the alignment
    ok = ok && hash_array(bank.find("al_t").value) == al_t;
    report(3, "freeze and stage isolation hold bit-exactly", ok);
}

// --- criterion 4: analytic gradients match finite differences ---

void criterion_gradients() {
    double worst = 0.0;

    {  // backbone: full forward, every parameter scalar
        BackboneConfig cfg;
        cfg.n_nodes = 3;
        cfg.n_features = 1;
        cfg.hidden = 2;
        cfg.kappa = 4;
        cfg.horizon = 4;
        cfg.spatial_layers = 1;
        cfg.kernel_widths = {3, 2};
        cfg.dilations = {1, 2};
        ModelParams params(cfg, 21);
        std::mt19937_64 rng(5);
        std::normal_distribution<double> unit(0.0, 1.0);
        NDArray x({2, 4, 3, 1}), target({2, 4, 3, 1});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * unit(rng);
        for (std::size_t i = 0; i < target.size(); ++i) target[i] = 0.5 * unit(rng);
        auto loss_at = [&](const std::vector<double>& flat) {
            ModelParams p(cfg, 21);
            p.unflatten(flat);
            ad::Tape tape;
            return tape.val(tape.sse(forward(tape, tape.input(x), p), target))[0];
        };
        params.zero_grads();
        {
            ad::Tape tape;
            tape.backward(tape.sse(forward(tape, tape.input(x), params), target));
        }
        std::vector<double> analytic;
        for (const auto& p : params.tensors())
            analytic.insert(analytic.end(), p.grad.raw().begin(), p.grad.raw().end());
        auto flat = params.flatten();
        double h = 1e-5;
        for (std::size_t i = 0; i < flat.size(); ++i) {
            auto up = flat, dn = flat;
            up[i] += h;
            dn[i] -= h;
            double fd = (loss_at(up) - loss_at(dn)) / (2 * h);
            double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-6});
            worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
        }
    }

    {  // prompt path: encoders + interaction through the SSL objective
        PromptConfig cfg;
        cfg.env_width = 2;
        cfg.prompt_dim = 2;
        cfg.temporal_inject_width = 3;
        PromptBank bank(cfg, 11);
        std::mt19937_64 rng(2);
        std::normal_distribution<double> unit(0.0, 1.0);
        NDArray sdesc({3, 4}), tdesc({3, 4});
        for (std::size_t i = 0; i < sdesc.size(); ++i) sdesc[i] = unit(rng);
        for (std::size_t i = 0; i < tdesc.size(); ++i) tdesc[i] = unit(rng);
        NDArray mu({3, 1}, {0.5, -0.5, 1.0}), sigma({3, 1}, {1.0, 0.5, 2.0});
        auto loss_now = [&]() {
            ad::Tape tape;
            auto bb = bind_bank(tape, bank);
            auto ps = encode_spatial_t(tape, bb, tape.input(sdesc));
            auto pt = encode_temporal_t(tape, bb, tape.input(tdesc));
            auto [mh, sh] = stim_forward_t(tape, bb, ps, pt);
            return tape.val(ssl_loss_t(tape, mh, sh, mu, sigma))[0];
        };
        bank.zero_grads();
        {
            ad::Tape tape;
            auto bb = bind_bank(tape, bank);
            auto ps = encode_spatial_t(tape, bb, tape.input(sdesc));
            auto pt = encode_temporal_t(tape, bb, tape.input(tdesc));
            auto [mh, sh] = stim_forward_t(tape, bb, ps, pt);
            tape.backward(ssl_loss_t(tape, mh, sh, mu, sigma));
        }
        double h = 1e-5;
        for (auto& p : bank.tensors()) {
            if (p.name == "al_s" || p.name == "al_t") continue;
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                double keep = p.value[j];
                p.value[j] = keep + h;
                double up = loss_now();
                p.value[j] = keep - h;
                double dn = loss_now();
                p.value[j] = keep;
                double fd = (up - dn) / (2 * h);
                double denom = std::max({std::fabs(fd), std::fabs(p.grad[j]), 1e-6});
                worst = std::max(worst, std::fabs(fd - p.grad[j]) / denom);
            }
        }
    }
    report(4, "analytic gradients match finite differences", worst < 1e-4,
           "worst rel err " + fmt(worst));
}

// --- criterion 5: error-analysis closed forms and Monte-Carlo agreement ---

void criterion_theory() {
    bool ok = true;
    std::string why;

    CausalNeighborhoodSpec hand;
    hand.d = 2;
    hand.p = 0.5;
    hand.mu0_t = 0.0;
    hand.mu0_next = 1.0;
    hand.mu0_c = 1.0;
    hand.mu0_s = 2.0;
    if (std::fabs(expected_aggregation(hand) - 1.0) > 1e-15) { ok = false; why = "aggregation"; }
    CausalNeighborhoodSpec e0 = hand;
    e0.w_s = 0.5;
    if (std::fabs(epsilon0(e0) - 2.0 / 3.0) > 1e-15) { ok = false; why = "epsilon0"; }

    CausalNeighborhoodSpec amp;
    amp.d = 4;
    amp.p = 0.25;
    amp.q = 3;
    if (std::fabs(amplification_ratio(amp) - 3.0) > 1e-12) { ok = false; why = "ratio"; }

    auto mc = mc_error_ratio(amp, 200000, 11);
    if (!(mc.ratio > 2.4 && mc.ratio < 3.6)) { ok = false; why = "mc ratio " + fmt(mc.ratio); }

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    double worst_root = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        CausalNeighborhoodSpec s;
        s.d = 2 + static_cast<int>(rng() % 5);
        s.p = u(rng);
        s.mu0_t = u(rng);
        s.mu0_next = u(rng) + 0.5;
        s.mu0_c = u(rng);
        s.mu0_s = u(rng) + 0.5;
        s.w_c = u(rng);
        worst_root = std::max(worst_root, std::fabs(aggregation_residual(s, optimal_ws(s))));
    }
    if (worst_root >= 1e-12) { ok = false; why = "root check " + fmt(worst_root); }
    report(5, "error-analysis closed forms verified numerically", ok, why);
}

// --- criterion 6: prompt identifiability ---

void criterion_prompts() {
    SynthConfig cfg;
    cfg.n_nodes = 4;
    cfg.n_steps = 240;
    cfg.seed = 21;
    cfg.interval_seconds = 3600;
    cfg.regimes = {{0, 12, -1.0, 0.3}, {12, 24, 1.0, 0.3}};
    cfg.node_offsets = {0.0, 0.6, -0.6, 1.2};
    auto raw = synth_generate(cfg);
    std::vector<std::size_t> steps(raw.n_steps());
    std::iota(steps.begin(), steps.end(), 0);
    auto ds = normalize(raw, NormStats::fit(raw, steps));
    std::size_t E = 32;
    auto senv = build_spatial_env(ds, E);
    auto tenv = build_temporal_env(ds, fit_temporal_env(ds, E, 4, steps));
    auto windows = make_windows(ds, 4, 1, steps);

    PromptConfig pc;
    pc.env_width = E;
    pc.prompt_dim = 8;
    PromptBank bank(pc, 31);
    PretrainConfig ptc;
    ptc.epochs = 200;
    ptc.lr = 3e-3;
    ptc.seed = 2;
    pretrain_prompts(bank, senv, tenv, windows, ptc);

    double sse = 0.0, sst = 0.0, mean_mu = 0.0;
    std::size_t count = 0;
    NDArray mu, sigma;
    for (const auto& w : windows) {
        window_distribution(w.x, mu, sigma);
        for (std::size_t i = 0; i < mu.size(); ++i) mean_mu += mu[i];
        count += mu.size();
    }
    mean_mu /= static_cast<double>(count);
    for (const auto& w : windows) {
        window_distribution(w.x, mu, sigma);
        std::size_t N = w.x.dim(1);
        NDArray sdesc({N, 2 * E}), tdesc({N, 2 * E});
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < 2 * E; ++c) {
                sdesc.at(n, c) = senv.at(n, c);
                tdesc.at(n, c) = tenv.at(w.anchor, c);
            }
        NDArray mh, sh;
        auto ps = encode_spatial(bank, sdesc);
        auto pt = encode_temporal(bank, tdesc);
        stim_forward(bank, ps, pt, mh, sh);
        for (std::size_t n = 0; n < N; ++n) {
            double err = mh.at(n, std::size_t{0}) - mu.at(n, std::size_t{0});
            double dev = mu.at(n, std::size_t{0}) - mean_mu;
            sse += err * err;
            sst += dev * dev;
        }
    }
    double r2 = 1.0 - sse / sst;

    // regime separation in prompt space
    std::vector<NDArray> low, high;
    for (std::size_t t = 24; t < ds.n_steps(); t += 3) {
        NDArray d({1, 2 * E});
        for (std::size_t c = 0; c < 2 * E; ++c) d.at(std::size_t{0}, c) = tenv.at(t, c);
        (hour_of_day(ds.timestamps[t]) < 12 ? low : high).push_back(encode_temporal(bank, d));
    }
    auto dist = [](const NDArray& a, const NDArray& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    double intra = 0.0, inter = 0.0;
    std::size_t ni = 0, nx = 0;
    for (std::size_t i = 0; i < low.size(); ++i)
        for (std::size_t j = i + 1; j < low.size(); ++j) intra += dist(low[i], low[j]), ++ni;
    for (std::size_t i = 0; i < high.size(); ++i)
        for (std::size_t j = i + 1; j < high.size(); ++j) intra += dist(high[i], high[j]), ++ni;
    for (const auto& a : low)
        for (const auto& b : high) inter += dist(a, b), ++nx;
    intra /= static_cast<double>(ni);
    inter /= static_cast<double>(nx);

    bool ok = r2 > 0.9 && inter > intra;
    report(6, "prompts identify the generating regimes", ok,
           "R2=" + fmt(r2) + " inter/intra=" + fmt(inter / intra));
}

// --- criterion 7: directional ablation ordering over five seeds ---

void criterion_ablation() {
    // Month-shift scenario: a strong day-of-week pattern makes prompts
    // essential (a one-hour input window cannot see the calendar), and the
    // mean shift in the held-out months gives adaptation something real to
    // correct.
    ExperimentConfig cfg;
    cfg.scenario = "temp_month";
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.env_width = 16;
    cfg.prompt_dim = 8;

    cfg.synth.n_nodes = 6;
    cfg.synth.n_steps = 2928;  // one leap year at 3-hour sampling
    cfg.synth.seed = 9;
    cfg.synth.interval_seconds = 10800;
    cfg.synth.key = SynthConfig::RegimeKey::month;
    cfg.synth.regimes = {{1, 8, 0.3, 0.5}, {9, 12, -0.7, 0.5}};
    cfg.synth.ar_coeff = 0.2;
    cfg.synth.dow_mu = {1.2, -1.2, 1.2, -1.2, 1.2, -1.2, 0.0};
    cfg.synth.node_offsets = {0.0, 0.3, -0.3, 0.6, -0.6, 0.1};

    cfg.backbone.hidden = 8;
    cfg.backbone.kappa = 4;
    cfg.backbone.horizon = 4;
    cfg.backbone.spatial_layers = 1;
    cfg.backbone.kernel_widths = {3, 2};
    cfg.backbone.dilations = {1, 2};

    cfg.plan.warmup_epochs = 20;
    cfg.plan.pretrain_epochs = 120;
    cfg.plan.finetune_epochs = 30;
    cfg.plan.adapt_epochs = 4;
    cfg.plan.adapt_max_batches = 16;
    cfg.plan.batch_size = 64;
    cfg.plan.lr = 3e-3;
    cfg.plan.prompt_lr = 3e-3;
    cfg.plan.adapt_lr = 3e-4;
    cfg.plan.tau_percent = 60.0;

    cfg.train_months = {1, 2, 3, 4, 5, 6, 7, 8};
    cfg.val_months = {9};
    cfg.adapt_months = {10};
    cfg.test_months = {11, 12};

    auto reports = run_ablation(cfg);
    auto find = [&](const std::string& v) -> const ExperimentReport& {
        for (const auto& r : reports)
            if (r.config.variant == v) return r;
        throw ConfigError("missing variant " + v);
    };
    const auto& full = find("full");
    const auto& non_hip = find("non_hip");
    const auto& non_ssl = find("non_ssl");
    const auto& non_prompt = find("non_prompt");
    const auto& non_ttf = find("non_ttf");

    bool mean_prompt = full.mean_test_mae < non_prompt.mean_test_mae;
    bool mean_ttf = full.mean_test_mae < non_ttf.mean_test_mae;
    int hip_or_ssl_wins = 0;
    for (std::size_t i = 0; i < full.per_seed.size(); ++i) {
        double f = full.per_seed[i].test_mae;
        if (f <= non_hip.per_seed[i].test_mae || f <= non_ssl.per_seed[i].test_mae)
            ++hip_or_ssl_wins;
    }
    bool ok = mean_prompt && mean_ttf && hip_or_ssl_wins >= 4;
    report(7, "ablations degrade the full pipeline directionally", ok,
           "full=" + fmt(full.mean_test_mae) + " non_prompt=" + fmt(non_prompt.mean_test_mae) +
               " non_ttf=" + fmt(non_ttf.mean_test_mae) + " non_hip=" +
               fmt(non_hip.mean_test_mae) + " non_ssl=" + fmt(non_ssl.mean_test_mae) +
               " hip_or_ssl_wins=" + std::to_string(hip_or_ssl_wins) + "/5");
}

// --- criterion 8: node scenarios (new-node generalization, removal control) ---

void criterion_node_scenarios() {
    bool ok = true;
    std::string why;

    ExperimentConfig cfg = desk_config();
    cfg.scenario = "node_involve";
    cfg.synth.n_nodes = 8;
    cfg.synth.node_offsets = {0.0, 0.5, -0.5, 1.0, -1.0, 0.2, 0.7, -0.3};
    cfg.mask_fraction = 0.25;
    cfg.seeds = {1, 2, 3};
    auto inv = run_experiment(cfg);
    double seen = 0.0, fresh = 0.0;
    for (const auto& o : inv.per_seed) {
        seen += o.seen_mae;
        fresh += o.new_mae;
    }
    seen /= static_cast<double>(inv.per_seed.size());
    fresh /= static_cast<double>(inv.per_seed.size());
    if (!(fresh <= 2.0 * seen)) {
        ok = false;
        why = "new " + fmt(fresh) + " vs seen " + fmt(seen);
    }

    // removal control: with a diagonal fixed adjacency there is no cross-node
    // flow, so deleting nodes must leave the kept nodes' predictions
    // bit-identical
    {
        SynthConfig scfg;
        scfg.n_nodes = 5;
        scfg.n_steps = 60;
        scfg.seed = 3;
        scfg.interval_seconds = 3600;
        auto ds = synth_generate(scfg);
        std::vector<std::size_t> steps(ds.n_steps());
        std::iota(steps.begin(), steps.end(), 0);

        BackboneConfig bc;
        bc.n_nodes = 5;
        bc.n_features = 1;
        bc.hidden = 3;
        bc.kappa = 3;
        bc.horizon = 2;
        bc.spatial_layers = 1;
        bc.kernel_widths = {3};
        bc.dilations = {1};
        bc.adaptive_adjacency = false;
        NDArray eye({5, 5});
        for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
        bc.fixed_adjacency = eye;
        ModelParams params(bc, 4);

        std::vector<std::size_t> kept = {0, 2, 4};
        auto full_w = make_windows(ds, 3, 2, steps);
        auto full_pred = predict_batch(stack_x(full_w, 0, full_w.size()), params);

        auto sub = ds.select_nodes(kept);
        NDArray eye3({3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye3.at(i, i) = 1.0;
        auto small = params.with_adjacency({eye3}, 3);
        auto sub_w = make_windows(sub, 3, 2, steps);
        auto sub_pred = predict_batch(stack_x(sub_w, 0, sub_w.size()), small);

        for (std::size_t b = 0; b < sub_pred.dim(0) && ok; ++b)
            for (std::size_t t = 0; t < sub_pred.dim(1) && ok; ++t)
                for (std::size_t n = 0; n < kept.size() && ok; ++n)
                    if (sub_pred.at(b, t, n, std::size_t{0}) !=
                        full_pred.at(b, t, kept[n], std::size_t{0})) {
                        ok = false;
                        why = "removal control not bit-identical";
                    }
    }
    report(8, "node scenarios generalize and the removal control is exact", ok, why);
}

// --- criterion 9: update accounting identity across settings ---

void criterion_accounting() {
    bool ok = true;
    std::string why;
    const double taus[3] = {30.0, 60.0, 90.0};
    const int adapt_epochs[3] = {1, 2, 3};
    for (int i = 0; i < 3 && ok; ++i) {
        ExperimentConfig cfg = desk_config();
        cfg.plan.tau_percent = taus[i];
        cfg.plan.adapt_epochs = adapt_epochs[i];
        cfg.plan.adapt_max_batches = static_cast<std::size_t>(2 + i);
        auto r = run_experiment(cfg);
        const auto& a = r.per_seed[0].accounting;
        if (!a.match) {
            ok = false;
            why = "tau " + fmt(taus[i]) + ": " + std::to_string(a.instrument_total) + " != " +
                  std::to_string(a.closed_form);
        }
        if (ok && a.adapt != a.P * a.E_P) { ok = false; why = "adapt bucket off"; }
        if (ok && a.warmup != a.L) { ok = false; why = "warmup bucket off"; }
        if (ok && a.finetune != a.L - a.neocortex) { ok = false; why = "finetune bucket off"; }
    }
    report(9, "instrumented update counts equal the closed form", ok, why);
}

// --- criterion 10: end-to-end determinism ---

void criterion_determinism() {
    ExperimentConfig cfg = desk_config();
    cfg.seeds = {1, 2};
    auto a = run_experiment(cfg);
    auto b = run_experiment(cfg);
    bool ok = a.per_seed.size() == b.per_seed.size();
    double worst = 0.0;
    for (std::size_t i = 0; ok && i < a.per_seed.size(); ++i) {
        worst = std::max(worst, std::fabs(a.per_seed[i].test_mae - b.per_seed[i].test_mae));
        worst = std::max(worst, std::fabs(a.per_seed[i].val_mae - b.per_seed[i].val_mae));
        worst = std::max(worst,
                         std::fabs(a.per_seed[i].adapt_final_loss - b.per_seed[i].adapt_final_loss));
    }
    ok = ok && worst <= 1e-9;
    report(10, "repeated runs agree to 1e-9", ok, "worst diff " + fmt(worst));
}

}  // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();
    criterion_ledger();
    criterion_selection();
    criterion_stage_isolation();
    criterion_gradients();
    criterion_theory();
    criterion_prompts();
    criterion_ablation();
    criterion_node_scenarios();
    criterion_accounting();
    criterion_determinism();
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d/10 criteria passed in %.1f s\n", 10 - g_failures, secs);
    return g_failures == 0 ? 0 : 1;
}
