#include "coms2t/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "coms2t/plot.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace coms2t {

double mae(const NDArray& pred, const NDArray& target) {
    if (!pred.same_shape(target)) throw ShapeError("mae: shape mismatch");
    if (pred.size() == 0) throw ShapeError("mae: empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

double mae_nodes(const NDArray& pred, const NDArray& target,
                 const std::vector<std::size_t>& nodes) {
    if (!pred.same_shape(target) || pred.rank() != 4)
        throw ShapeError("mae_nodes: expects matching [B,l,N,F]");
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t b = 0; b < pred.dim(0); ++b)
        for (std::size_t t = 0; t < pred.dim(1); ++t)
            for (auto n : nodes)
                for (std::size_t f = 0; f < pred.dim(3); ++f) {
                    s += std::fabs(pred.at(b, t, n, f) - target.at(b, t, n, f));
                    ++cnt;
                }
    if (cnt == 0) throw ShapeError("mae_nodes: empty node set");
    return s / static_cast<double>(cnt);
}

// --- config (de)serialization ---

namespace {
json hours_json(const HourRange& h) { return json::array({h.start, h.end}); }
HourRange hours_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

json synth_to_json(const SynthConfig& s) {
    json j;
    j["n_nodes"] = s.n_nodes;
    j["n_steps"] = s.n_steps;
    j["n_features"] = s.n_features;
    j["seed"] = s.seed;
    j["interval_seconds"] = s.interval_seconds;
    j["start_timestamp"] = s.start_timestamp;
    j["regime_key"] = s.key == SynthConfig::RegimeKey::hour ? "hour" : "month";
    json regimes = json::array();
    for (const auto& r : s.regimes)
        regimes.push_back({{"start", r.start}, {"end", r.end}, {"mu", r.mu}, {"sigma", r.sigma}});
    j["regimes"] = regimes;
    j["ar_coeff"] = s.ar_coeff;
    j["node_offsets"] = s.node_offsets;
    j["dow_mu"] = s.dow_mu;
    j["node_sigma_scale"] = s.node_sigma_scale;
    j["communities"] = s.communities;
    j["base_lat"] = s.base_lat;
    j["base_long"] = s.base_long;
    return j;
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig s;
    if (j.contains("n_nodes")) s.n_nodes = j["n_nodes"].get<std::size_t>();
    if (j.contains("n_steps")) s.n_steps = j["n_steps"].get<std::size_t>();
    if (j.contains("n_features")) s.n_features = j["n_features"].get<std::size_t>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("interval_seconds")) s.interval_seconds = j["interval_seconds"].get<std::int64_t>();
    if (j.contains("start_timestamp")) s.start_timestamp = j["start_timestamp"].get<std::int64_t>();
    if (j.contains("regime_key"))
        s.key = j["regime_key"].get<std::string>() == "month" ? SynthConfig::RegimeKey::month
                                                              : SynthConfig::RegimeKey::hour;
    if (j.contains("regimes"))
        for (const auto& r : j["regimes"])
            s.regimes.push_back({r.at("start").get<int>(), r.at("end").get<int>(),
                                 r.at("mu").get<double>(), r.at("sigma").get<double>()});
    if (j.contains("ar_coeff")) s.ar_coeff = j["ar_coeff"].get<double>();
    if (j.contains("node_offsets")) s.node_offsets = j["node_offsets"].get<std::vector<double>>();
    if (j.contains("dow_mu")) s.dow_mu = j["dow_mu"].get<std::vector<double>>();
    if (j.contains("node_sigma_scale"))
        s.node_sigma_scale = j["node_sigma_scale"].get<std::vector<double>>();
    if (j.contains("communities")) s.communities = j["communities"].get<std::vector<int>>();
    if (j.contains("base_lat")) s.base_lat = j["base_lat"].get<double>();
    if (j.contains("base_long")) s.base_long = j["base_long"].get<double>();
    return s;
}

json backbone_to_json(const BackboneConfig& b) {
    json j;
    j["hidden"] = b.hidden;
    j["kappa"] = b.kappa;
    j["horizon"] = b.horizon;
    j["spatial_layers"] = b.spatial_layers;
    j["kernel_widths"] = b.kernel_widths;
    j["dilations"] = b.dilations;
    j["activation"] = b.activation == Activation::Relu ? "relu" : "linear";
    j["adaptive_adjacency"] = b.adaptive_adjacency;
    return j;
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig b;
    if (j.contains("hidden")) b.hidden = j["hidden"].get<std::size_t>();
    if (j.contains("kappa")) b.kappa = j["kappa"].get<std::size_t>();
    if (j.contains("horizon")) b.horizon = j["horizon"].get<std::size_t>();
    if (j.contains("spatial_layers")) b.spatial_layers = j["spatial_layers"].get<std::size_t>();
    if (j.contains("kernel_widths"))
        b.kernel_widths = j["kernel_widths"].get<std::vector<std::size_t>>();
    if (j.contains("dilations")) b.dilations = j["dilations"].get<std::vector<int>>();
    if (j.contains("activation"))
        b.activation = j["activation"].get<std::string>() == "linear" ? Activation::Linear
                                                                      : Activation::Relu;
    if (j.contains("adaptive_adjacency")) b.adaptive_adjacency = j["adaptive_adjacency"].get<bool>();
    return b;
}

json plan_to_json(const StagePlan& p) {
    json j;
    j["warmup_epochs"] = p.warmup_epochs;
    j["warmup_patience"] = p.warmup_patience;
    j["pretrain_epochs"] = p.pretrain_epochs;
    j["finetune_epochs"] = p.finetune_epochs;
    j["adapt_epochs"] = p.adapt_epochs;
    j["adapt_max_batches"] = p.adapt_max_batches;
    j["batch_size"] = p.batch_size;
    j["lr"] = p.lr;
    j["prompt_lr"] = p.prompt_lr;
    j["adapt_lr"] = p.adapt_lr;
    j["tau_percent"] = p.tau_percent;
    j["lambda"] = p.lambda;
    j["q_iterations"] = p.q_iterations;
    return j;
}

StagePlan plan_from_json(const json& j) {
    StagePlan p;
    if (j.contains("warmup_epochs")) p.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("warmup_patience")) p.warmup_patience = j["warmup_patience"].get<int>();
    if (j.contains("pretrain_epochs")) p.pretrain_epochs = j["pretrain_epochs"].get<int>();
    if (j.contains("finetune_epochs")) p.finetune_epochs = j["finetune_epochs"].get<int>();
    if (j.contains("adapt_epochs")) p.adapt_epochs = j["adapt_epochs"].get<int>();
    if (j.contains("adapt_max_batches"))
        p.adapt_max_batches = j["adapt_max_batches"].get<std::size_t>();
    if (j.contains("batch_size")) p.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("lr")) p.lr = j["lr"].get<double>();
    if (j.contains("prompt_lr")) p.prompt_lr = j["prompt_lr"].get<double>();
    if (j.contains("adapt_lr")) p.adapt_lr = j["adapt_lr"].get<double>();
    if (j.contains("tau_percent")) p.tau_percent = j["tau_percent"].get<double>();
    if (j.contains("lambda")) p.lambda = j["lambda"].get<double>();
    if (j.contains("q_iterations")) p.q_iterations = j["q_iterations"].get<int>();
    return p;
}
}  // namespace

void ExperimentConfig::validate() const {
    static const std::set<std::string> scenarios = {"temp_interval", "temp_month", "node_involve",
                                                    "node_remove"};
    static const std::set<std::string> variants = {"full", "non_hip", "non_ssl", "non_prompt",
                                                   "non_ttf"};
    if (!scenarios.count(scenario)) throw ConfigError("config: unknown scenario " + scenario);
    if (!variants.count(variant)) throw ConfigError("config: unknown variant " + variant);
    if (seeds.empty()) throw ConfigError("config: need at least one seed");
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["dataset_path"] = dataset_path;
    j["synth"] = synth_to_json(synth);
    j["scenario"] = scenario;
    j["mask_fraction"] = mask_fraction;
    j["variant"] = variant;
    j["seeds"] = seeds;
    j["env_width"] = env_width;
    j["prompt_dim"] = prompt_dim;
    j["encoder_depth"] = encoder_depth;
    j["backbone"] = backbone_to_json(backbone);
    j["plan"] = plan_to_json(plan);
    j["interval"] = {{"train", hours_json(train_hours)}, {"val", hours_json(val_hours)},
                     {"adapt", hours_json(adapt_hours)}, {"test", hours_json(test_hours)}};
    j["months"] = {{"train", train_months}, {"val", val_months}, {"adapt", adapt_months},
                   {"test", test_months}};
    j["fractions"] = {{"train", fractions.train}, {"val", fractions.val},
                      {"adapt", fractions.adapt}, {"test", fractions.test}};
    return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    if (j.contains("dataset_path")) c.dataset_path = j["dataset_path"].get<std::string>();
    if (j.contains("synth")) c.synth = synth_from_json(j["synth"]);
    if (j.contains("scenario")) c.scenario = j["scenario"].get<std::string>();
    if (j.contains("mask_fraction")) c.mask_fraction = j["mask_fraction"].get<double>();
    if (j.contains("variant")) c.variant = j["variant"].get<std::string>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("env_width")) c.env_width = j["env_width"].get<std::size_t>();
    if (j.contains("prompt_dim")) c.prompt_dim = j["prompt_dim"].get<std::size_t>();
    if (j.contains("encoder_depth")) c.encoder_depth = j["encoder_depth"].get<int>();
    if (j.contains("backbone")) c.backbone = backbone_from_json(j["backbone"]);
    if (j.contains("plan")) c.plan = plan_from_json(j["plan"]);
    if (j.contains("interval")) {
        const auto& iv = j["interval"];
        if (iv.contains("train")) c.train_hours = hours_from(iv["train"]);
        if (iv.contains("val")) c.val_hours = hours_from(iv["val"]);
        if (iv.contains("adapt")) c.adapt_hours = hours_from(iv["adapt"]);
        if (iv.contains("test")) c.test_hours = hours_from(iv["test"]);
    }
    if (j.contains("months")) {
        const auto& mo = j["months"];
        if (mo.contains("train")) c.train_months = mo["train"].get<std::vector<int>>();
        if (mo.contains("val")) c.val_months = mo["val"].get<std::vector<int>>();
        if (mo.contains("adapt")) c.adapt_months = mo["adapt"].get<std::vector<int>>();
        if (mo.contains("test")) c.test_months = mo["test"].get<std::vector<int>>();
    }
    if (j.contains("fractions")) {
        const auto& fr = j["fractions"];
        if (fr.contains("train")) c.fractions.train = fr["train"].get<double>();
        if (fr.contains("val")) c.fractions.val = fr["val"].get<double>();
        if (fr.contains("adapt")) c.fractions.adapt = fr["adapt"].get<double>();
        if (fr.contains("test")) c.fractions.test = fr["test"].get<double>();
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

// --- accounting ---

std::size_t closed_form_coms2t(std::size_t L, std::size_t neocortex, std::size_t p_events,
                               std::size_t e_p) {
    return L + (L - neocortex) + p_events * e_p;
}

double closed_form_caustg(std::size_t k, std::size_t L, std::size_t p, double gamma_percent) {
    return static_cast<double>(k * L) +
           static_cast<double>(L * p) * gamma_percent / 100.0;
}

AccountingRecord make_accounting(const UpdateCounter& counter, std::size_t L,
                                 std::size_t neocortex, std::size_t e_p, std::size_t p_events) {
    AccountingRecord r;
    r.L = L;
    r.neocortex = neocortex;
    r.E_P = e_p;
    r.P = p_events;
    r.warmup = counter.count("warmup");
    r.finetune = counter.count("finetune");
    r.adapt = counter.count("adapt");
    r.prompt_plumbing = counter.count("prompt_plumbing");
    r.gamma_percent = L ? 100.0 * static_cast<double>(L - neocortex) / static_cast<double>(L) : 0.0;
    r.closed_form = closed_form_coms2t(L, neocortex, p_events, e_p);
    r.instrument_total = r.warmup + r.finetune + r.adapt;
    r.match = r.instrument_total == r.closed_form;
    return r;
}

// --- experiment pipeline ---

namespace {

NDArray row_normalized(const NDArray& a) {
    NDArray out = a;
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.dim(1); ++j) s += a.at(i, j);
        if (s > 0.0)
            for (std::size_t j = 0; j < a.dim(1); ++j) out.at(i, j) = a.at(i, j) / s;
    }
    return out;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& drop) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (std::find(drop.begin(), drop.end(), i) == drop.end()) out.push_back(i);
    return out;
}

struct ScenarioSetup {
    SplitManifest manifest;
    SpatioTemporalDataset train_ds, test_ds;  // normalized, test in evaluation node order
    NormStats norm;
    std::vector<std::size_t> seen_in_test, new_in_test;  // indices into test_ds order
    bool node_set_changed = false;
};

ScenarioSetup build_scenario(const ExperimentConfig& cfg, const SpatioTemporalDataset& raw) {
    ScenarioSetup s;
    if (cfg.scenario == "temp_interval")
        s.manifest = split_interval(raw, cfg.train_hours, cfg.val_hours, cfg.adapt_hours,
                                    cfg.test_hours);
    else if (cfg.scenario == "temp_month")
        s.manifest = split_month(raw, cfg.train_months, cfg.val_months, cfg.adapt_months,
                                 cfg.test_months);
    else if (cfg.scenario == "node_involve")
        s.manifest = node_involvement(raw, cfg.mask_fraction, cfg.synth.seed, cfg.fractions);
    else
        s.manifest = node_removal(raw, cfg.mask_fraction, cfg.synth.seed, cfg.fractions);

    SpatioTemporalDataset train_raw = raw, test_raw = raw;
    if (cfg.scenario == "node_involve" && !s.manifest.test_only_nodes.empty()) {
        train_raw = raw.select_nodes(s.manifest.train_nodes);
        auto order = s.manifest.train_nodes;
        order.insert(order.end(), s.manifest.test_only_nodes.begin(),
                     s.manifest.test_only_nodes.end());
        test_raw = raw.select_nodes(order);
        for (std::size_t i = 0; i < s.manifest.train_nodes.size(); ++i) s.seen_in_test.push_back(i);
        for (std::size_t i = s.manifest.train_nodes.size(); i < order.size(); ++i)
            s.new_in_test.push_back(i);
        s.node_set_changed = true;
    } else if (cfg.scenario == "node_remove" && !s.manifest.removed_nodes.empty()) {
        auto kept = complement(raw.n_nodes(), s.manifest.removed_nodes);
        test_raw = raw.select_nodes(kept);
        for (std::size_t i = 0; i < kept.size(); ++i) s.seen_in_test.push_back(i);
        s.node_set_changed = true;
    }

    s.norm = NormStats::fit(train_raw, s.manifest.train);
    s.train_ds = normalize(train_raw, s.norm);
    s.test_ds = normalize(test_raw, s.norm);
    return s;
}

/// Test-side parameters: adjacency extended (involvement) or shrunk
/// (removal) to the evaluation node set.
ModelParams test_side_params(const ExperimentConfig& cfg, const ScenarioSetup& s,
                             const ModelParams& params) {
    if (!s.node_set_changed) return params;
    const auto& bc = params.config();
    std::size_t new_n = s.test_ds.n_nodes();
    std::vector<NDArray> mats;
    if (cfg.scenario == "node_involve") {
        std::size_t n_old = s.train_ds.n_nodes();
        NDArray coords_new({new_n - n_old, 2});
        for (std::size_t k = 0; k < new_n - n_old; ++k) {
            coords_new.at(k, std::size_t{0}) = s.test_ds.node_coords.at(n_old + k, std::size_t{0});
            coords_new.at(k, 1) = s.test_ds.node_coords.at(n_old + k, 1);
        }
        if (bc.adaptive_adjacency) {
            for (std::size_t i = 0; i < bc.spatial_layers; ++i)
                mats.push_back(node_copy_adjacency(
                    params.find("A_" + std::to_string(i)).value, s.train_ds.node_coords,
                    coords_new));
        } else {
            mats.push_back(row_normalized(node_copy_adjacency(bc.fixed_adjacency,
                                                              s.train_ds.node_coords,
                                                              coords_new)));
        }
    } else {  // node_remove: delete rows/columns of the removed nodes
        auto kept = complement(params.config().n_nodes, s.manifest.removed_nodes);
        auto shrink = [&](const NDArray& a) {
            NDArray out({kept.size(), kept.size()});
            for (std::size_t i = 0; i < kept.size(); ++i)
                for (std::size_t j = 0; j < kept.size(); ++j)
                    out.at(i, j) = a.at(kept[i], kept[j]);
            return out;
        };
        if (bc.adaptive_adjacency) {
            for (std::size_t i = 0; i < bc.spatial_layers; ++i)
                mats.push_back(shrink(params.find("A_" + std::to_string(i)).value));
        } else {
            mats.push_back(row_normalized(shrink(bc.fixed_adjacency)));
        }
    }
    return params.with_adjacency(mats, new_n);
}

struct SeedArtifacts {
    Transcript transcript;
    std::vector<double> train_loss, val_mae, neo_mean, hip_mean;
    std::vector<double> ledger_q25, ledger_q50, ledger_q75;
    std::size_t finetune_start = 0;
    NDArray prompts_pretrain, prompts_final;  // [N, E_p]
    std::vector<std::int64_t> prompt_ids;
    bool have_prompts = false;
};

double masked_mean(const std::vector<NDArray>& snapshot, const ParameterPartition& part,
                   bool neocortex) {
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t t = 0; t < snapshot.size(); ++t) {
        const auto& mask = part.parts[t].neocortex;
        for (std::size_t j = 0; j < snapshot[t].size(); ++j)
            if (static_cast<bool>(mask[j]) == neocortex) {
                s += snapshot[t][j];
                ++cnt;
            }
    }
    return cnt ? s / static_cast<double>(cnt) : 0.0;
}

SeedOutcome run_single(const ExperimentConfig& cfg, std::uint64_t seed, const ScenarioSetup& s,
                       SeedArtifacts* art) {
    SeedOutcome out;
    out.seed = seed;

    BackboneConfig bc = cfg.backbone;
    bc.n_nodes = s.train_ds.n_nodes();
    bc.n_features = s.train_ds.n_features();
    if (!bc.adaptive_adjacency) bc.fixed_adjacency = row_normalized(s.train_ds.adjacency);
    ModelParams params(bc, seed);

    StagePlan plan = cfg.plan;
    plan.seed = seed;

    NDArray spatial_env = build_spatial_env(s.train_ds, cfg.env_width);
    auto tep = fit_temporal_env(s.train_ds, cfg.env_width, bc.kappa, s.manifest.train);
    NDArray temporal_env = build_temporal_env(s.train_ds, tep);

    auto train_w = make_windows(s.train_ds, bc.kappa, bc.horizon, s.manifest.train);
    WindowSet val_w;
    try {
        val_w = make_windows(s.train_ds, bc.kappa, bc.horizon, s.manifest.val);
    } catch (const EmptyWindowError&) {
    }

    UpdateCounter counter;
    auto ledger = VariationLedger::init(params, art != nullptr);
    Transcript transcript;
    auto warmup = run_warmup(params, train_w, val_w, plan, ledger, &counter, &transcript);

    std::unique_ptr<ParameterPartition> partition;
    if (cfg.variant != "non_hip" && ledger.tb() > 0)
        partition = std::make_unique<ParameterPartition>(
            build_partition(params, ledger, plan.tau_percent, plan.lambda));

    std::unique_ptr<PromptBank> bank;
    if (cfg.variant != "non_prompt") {
        PromptConfig pc;
        pc.env_width = cfg.env_width;
        pc.prompt_dim = cfg.prompt_dim;
        pc.out_features = 1;
        pc.spatial_inject_width = bc.n_features;
        pc.temporal_inject_width = bc.hidden;
        pc.encoder_depth = cfg.encoder_depth;
        bank = std::make_unique<PromptBank>(pc, seed + 1000);
        if (cfg.variant != "non_ssl" && plan.pretrain_epochs > 0) {
            PretrainConfig ptc;
            ptc.epochs = plan.pretrain_epochs;
            ptc.batch_size = plan.batch_size;
            ptc.lr = plan.prompt_lr;
            ptc.seed = seed + 2000;
            pretrain_prompts(*bank, spatial_env, temporal_env, train_w, ptc);
        }
        if (art) {
            art->prompts_pretrain = encode_spatial(*bank, spatial_env);
            art->prompt_ids = s.train_ds.node_ids;
            art->have_prompts = true;
        }
    }

    auto finetune = run_finetune(params, partition.get(), bank.get(), train_w, spatial_env,
                                 temporal_env, plan, &counter, &transcript);

    // Test side: extended/shrunk graph, full-node environments.
    ModelParams test_params = test_side_params(cfg, s, params);
    NDArray spatial_env_test =
        s.node_set_changed ? build_spatial_env(s.test_ds, cfg.env_width) : spatial_env;
    NDArray temporal_env_test =
        s.node_set_changed ? build_temporal_env(s.test_ds, tep) : temporal_env;

    AdaptResult adapt;
    if (bank && cfg.variant != "non_ttf" && plan.adapt_epochs > 0 && !s.manifest.adapt.empty()) {
        auto adapt_w = make_input_windows(s.test_ds, bc.kappa, s.manifest.adapt);
        adapt = test_time_adapt(*bank, adapt_w, spatial_env_test, temporal_env_test, plan,
                                &counter, &transcript);
        out.adapt_initial_loss = adapt.initial_loss;
        out.adapt_final_loss = adapt.final_loss;
    }

    auto test_w = make_windows(s.test_ds, bc.kappa, bc.horizon, s.manifest.test);
    NDArray pred = predict(test_params, bank.get(), test_w, spatial_env_test, temporal_env_test);
    NDArray truth = stack_y(test_w, 0, test_w.size());
    s.norm.invert(pred);
    s.norm.invert(truth);
    out.test_mae = mae(pred, truth);
    if (!s.seen_in_test.empty()) out.seen_mae = mae_nodes(pred, truth, s.seen_in_test);
    if (!s.new_in_test.empty()) out.new_mae = mae_nodes(pred, truth, s.new_in_test);

    if (!val_w.empty()) {
        NDArray vp = predict(params, bank.get(), val_w, spatial_env, temporal_env);
        NDArray vt = stack_y(val_w, 0, val_w.size());
        s.norm.invert(vp);
        s.norm.invert(vt);
        out.val_mae = mae(vp, vt);
    }

    out.accounting = make_accounting(counter, params.total_size(),
                                     partition ? partition->neocortex_count() : 0,
                                     bank ? bank->encoder_stim_size() : 0,
                                     static_cast<std::size_t>(adapt.events));
    out.prompt_accesses = bank ? bank->access_count() : 0;

    if (art) {
        art->transcript = transcript;
        art->train_loss = warmup.train_loss;
        art->train_loss.insert(art->train_loss.end(), finetune.train_loss.begin(),
                               finetune.train_loss.end());
        art->val_mae = warmup.val_mae;
        art->finetune_start = warmup.train_loss.size();
        if (partition) {
            for (const auto& snap : ledger.history()) {
                art->neo_mean.push_back(masked_mean(snap, *partition, true));
                art->hip_mean.push_back(masked_mean(snap, *partition, false));
            }
            art->neo_mean.insert(art->neo_mean.end(), finetune.neo_mean.begin(),
                                 finetune.neo_mean.end());
            art->hip_mean.insert(art->hip_mean.end(), finetune.hip_mean.begin(),
                                 finetune.hip_mean.end());
        }
        // Running ledger quantiles over the spatial+temporal blocks.
        const auto& hist = ledger.history();
        if (hist.size() > 1) {
            std::vector<double> accum;
            for (std::size_t u = 1; u < hist.size(); ++u) {
                std::vector<double> deltas;
                std::size_t pos = 0;
                for (std::size_t t = 0; t < hist[u].size(); ++t) {
                    if (ledger.entries()[t].block == Block::Head) continue;
                    for (std::size_t j = 0; j < hist[u][t].size(); ++j)
                        deltas.push_back(std::fabs(hist[u][t][j] - hist[u - 1][t][j]));
                }
                if (accum.empty()) accum.assign(deltas.size(), 0.0);
                for (pos = 0; pos < deltas.size(); ++pos) accum[pos] += deltas[pos];
                std::vector<double> sorted = accum;
                std::sort(sorted.begin(), sorted.end());
                auto q = [&](double p) {
                    return sorted[static_cast<std::size_t>(p * static_cast<double>(sorted.size() - 1))];
                };
                art->ledger_q25.push_back(q(0.25));
                art->ledger_q50.push_back(q(0.5));
                art->ledger_q75.push_back(q(0.75));
            }
        }
        if (bank && art->have_prompts) art->prompts_final = encode_spatial(*bank, spatial_env);
    }
    return out;
}

std::vector<std::string> emit_plots(const SeedArtifacts& art, const std::string& out_dir) {
    std::vector<std::string> paths;
    fs::create_directories(out_dir);

    std::vector<Series> learn;
    learn.push_back({"train_loss", art.train_loss, 0x1f77b4});
    if (!art.val_mae.empty()) learn.push_back({"val_mae", art.val_mae, 0xff7f0e});
    if (!art.neo_mean.empty()) learn.push_back({"neocortex_mean", art.neo_mean, 0x2ca02c});
    if (!art.hip_mean.empty()) learn.push_back({"hippocampus_mean", art.hip_mean, 0xd62728});
    std::string learning = (fs::path(out_dir) / "learning.png").string();
    plot_lines(learning, learn, {art.finetune_start});
    paths.push_back(learning);

    if (!art.ledger_q50.empty()) {
        std::string ledger_png = (fs::path(out_dir) / "ledger.png").string();
        plot_lines(ledger_png,
                   {{"q25", art.ledger_q25, 0x9467bd},
                    {"q50", art.ledger_q50, 0x1f77b4},
                    {"q75", art.ledger_q75, 0x8c564b}});
        paths.push_back(ledger_png);
    }

    if (art.have_prompts) {
        std::string pre = (fs::path(out_dir) / "prompts_pretrain.png").string();
        plot_heatmap(pre, art.prompts_pretrain);
        paths.push_back(pre);
        std::string fin = (fs::path(out_dir) / "prompts_final.png").string();
        plot_heatmap(fin, art.prompts_final);
        paths.push_back(fin);
        std::string csv = (fs::path(out_dir) / "prompts_final_export.csv").string();
        export_prompts_csv(csv, art.prompt_ids, art.prompts_final);
        paths.push_back(csv);
    }
    return paths;
}

json outcome_json(const SeedOutcome& o) {
    json j;
    j["seed"] = o.seed;
    j["val_mae"] = o.val_mae;
    j["test_mae"] = o.test_mae;
    j["seen_mae"] = o.seen_mae;
    j["new_mae"] = o.new_mae;
    j["adapt_initial_loss"] = o.adapt_initial_loss;
    j["adapt_final_loss"] = o.adapt_final_loss;
    j["prompt_accesses"] = o.prompt_accesses;
    j["accounting"] = {{"L", o.accounting.L},
                       {"warmup", o.accounting.warmup},
                       {"finetune", o.accounting.finetune},
                       {"adapt", o.accounting.adapt},
                       {"prompt_plumbing", o.accounting.prompt_plumbing},
                       {"neocortex", o.accounting.neocortex},
                       {"E_P", o.accounting.E_P},
                       {"P", o.accounting.P},
                       {"gamma_percent", o.accounting.gamma_percent},
                       {"closed_form", o.accounting.closed_form},
                       {"instrument_total", o.accounting.instrument_total},
                       {"match", o.accounting.match}};
    return j;
}
}  // namespace

std::string ExperimentReport::to_json() const {
    json j;
    j["config"] = json::parse(config.to_json());
    json seeds = json::array();
    for (const auto& o : per_seed) seeds.push_back(outcome_json(o));
    j["per_seed"] = seeds;
    j["mean_test_mae"] = mean_test_mae;
    j["std_test_mae"] = std_test_mae;
    j["artifacts"] = artifacts;
    return j.dump(2);
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    ExperimentReport report;
    report.config = config;

    SpatioTemporalDataset raw = config.dataset_path.empty() ? synth_generate(config.synth)
                                                            : load_dataset(config.dataset_path);
    raw.validate();
    ScenarioSetup setup = build_scenario(config, raw);

    bool emit = !out_dir.empty();
    if (emit) {
        fs::create_directories(out_dir);
        setup.manifest.save((fs::path(out_dir) / "manifest.json").string());
        report.artifacts.push_back((fs::path(out_dir) / "manifest.json").string());
    }

    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        SeedArtifacts art;
        bool want_art = emit && i == 0;
        report.per_seed.push_back(
            run_single(config, config.seeds[i], setup, want_art ? &art : nullptr));
        if (want_art) {
            std::string tpath = (fs::path(out_dir) / "transcript_seed0.jsonl").string();
            art.transcript.save(tpath);
            report.artifacts.push_back(tpath);
            auto plots = emit_plots(art, out_dir);
            report.artifacts.insert(report.artifacts.end(), plots.begin(), plots.end());
        }
    }

    double mean = 0.0;
    for (const auto& o : report.per_seed) mean += o.test_mae;
    mean /= static_cast<double>(report.per_seed.size());
    double var = 0.0;
    for (const auto& o : report.per_seed) var += (o.test_mae - mean) * (o.test_mae - mean);
    var /= static_cast<double>(report.per_seed.size());
    report.mean_test_mae = mean;
    report.std_test_mae = std::sqrt(var);

    if (emit) {
        std::ofstream out(fs::path(out_dir) / "report.json");
        if (!out) throw ReportError("run_experiment: cannot write report.json");
        out << report.to_json() << "\n";
    }
    return report;
}

std::vector<ExperimentReport> run_ablation(const ExperimentConfig& config,
                                           const std::string& out_dir) {
    std::vector<ExperimentReport> reports;
    for (const char* variant : {"full", "non_hip", "non_ssl", "non_prompt", "non_ttf"}) {
        ExperimentConfig c = config;
        c.variant = variant;
        std::string dir = out_dir.empty() ? "" : (fs::path(out_dir) / variant).string();
        reports.push_back(run_experiment(c, dir));
    }
    return reports;
}

}  // namespace coms2t
