#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "coms2t/errors.hpp"
#include "coms2t/train.hpp"

using namespace coms2t;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    SpatioTemporalDataset ds;
    WindowSet train, val, adapt;
    NDArray senv, tenv;
    BackboneConfig bcfg;
    PromptConfig pcfg;
    std::size_t E = 32;

    explicit Fixture(std::uint64_t seed, bool constant = false) {
        SynthConfig cfg;
        cfg.n_nodes = 4;
        cfg.n_steps = 200;
        cfg.seed = seed;
        cfg.interval_seconds = 3600;
        cfg.regimes = {{0, 12, -0.5, 0.4}, {12, 24, 0.5, 0.4}};
        ds = synth_generate(cfg);
        if (constant) ds.observations.fill(0.0);

        std::vector<std::size_t> train_steps, val_steps, adapt_steps;
        for (std::size_t t = 0; t < 140; ++t) train_steps.push_back(t);
        for (std::size_t t = 140; t < 170; ++t) val_steps.push_back(t);
        for (std::size_t t = 170; t < 200; ++t) adapt_steps.push_back(t);

        senv = build_spatial_env(ds, E);
        tenv = build_temporal_env(ds, fit_temporal_env(ds, E, 3, train_steps));
        train = make_windows(ds, 3, 2, train_steps);
        val = make_windows(ds, 3, 2, val_steps);
        adapt = make_input_windows(ds, 3, adapt_steps);

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

StagePlan quick_plan() {
    StagePlan plan;
    plan.warmup_epochs = 8;
    plan.finetune_epochs = 3;
    plan.adapt_epochs = 2;
    plan.batch_size = 32;
    plan.lr = 3e-3;
    plan.prompt_lr = 1e-3;
    plan.seed = 5;
    return plan;
}

std::uint64_t params_hash(const ModelParams& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params.tensors()) h = hash_array(p.value, h);
    return h;
}

}  // namespace

TEST_CASE("transcript lines are valid JSON objects") {
    Transcript tr;
    tr.add("warmup", 0, 1.25, 0.9);
    tr.add("adapt", 3, 0.5, 0.0, "{\"initial_loss\":2.0}");
    auto path = (fs::temp_directory_path() / "coms2t_test_transcript.jsonl").string();
    tr.save(path);
    std::ifstream in(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("stage"));
        CHECK(j.contains("train_loss"));
        ++rows;
    }
    CHECK(rows == 2);
    auto last = nlohmann::json::parse(tr.lines.back());
    CHECK(last.at("extra").at("initial_loss").get<double>() == doctest::Approx(2.0));
}

TEST_CASE("stacking helpers preserve window contents") {
    Fixture fx(31);
    auto x = stack_x(fx.train, 2, 5);
    auto y = stack_y(fx.train, 2, 5);
    REQUIRE(x.dim(0) == 3);
    CHECK(x.dim(1) == 3);
    CHECK(y.dim(1) == 2);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < fx.train[2 + b].x.size(); ++i)
            CHECK(x.raw()[b * fx.train[2].x.size() + i] == fx.train[2 + b].x.raw()[i]);
    CHECK_THROWS_AS(stack_x(fx.train, 3, 3), ShapeError);
    CHECK_THROWS_AS(stack_x(fx.train, 0, fx.train.size() + 1), ShapeError);
}

TEST_CASE("temporal descriptor gathering follows the window layout") {
    Fixture fx(32);
    std::vector<std::size_t> anchors = {5, 9};
    auto rows = gather_temporal_desc(fx.tenv, anchors, 3);
    REQUIRE(rows.dim(0) == 6);
    // row b*kappa + t is the descriptor of step anchor+1-kappa+t
    for (std::size_t b = 0; b < anchors.size(); ++b)
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t c = 0; c < rows.dim(1); ++c)
                CHECK(rows.at(b * 3 + t, c) == fx.tenv.at(anchors[b] + 1 - 3 + t, c));
    CHECK_THROWS_AS(gather_temporal_desc(fx.tenv, {1}, 3), ShapeError);   // anchor too early
    CHECK_THROWS_AS(gather_temporal_desc(fx.tenv, {999}, 3), ShapeError);  // out of range
}

TEST_CASE("zero-epoch warm-up is a no-op") {
    Fixture fx(33);
    ModelParams params(fx.bcfg, 1);
    auto before = params_hash(params);
    auto ledger = VariationLedger::init(params);
    StagePlan plan = quick_plan();
    plan.warmup_epochs = 0;
    auto res = run_warmup(params, fx.train, fx.val, plan, ledger);
    CHECK(res.epochs_run == 0);
    CHECK_FALSE(res.stabilized);
    CHECK(ledger.tb() == 0);
    CHECK(params_hash(params) == before);
    CHECK_THROWS_AS(run_warmup(params, {}, fx.val, plan, ledger), EmptyWindowError);
}

TEST_CASE("warm-up under a fixed seed is bit-deterministic") {
    Fixture fx(34);
    StagePlan plan = quick_plan();
    plan.warmup_epochs = 3;

    ModelParams a(fx.bcfg, 2), b(fx.bcfg, 2);
    auto la = VariationLedger::init(a), lb = VariationLedger::init(b);
    run_warmup(a, fx.train, fx.val, plan, la);
    run_warmup(b, fx.train, fx.val, plan, lb);
    CHECK(params_hash(a) == params_hash(b));
    for (std::size_t i = 0; i < la.entries().size(); ++i)
        CHECK(hash_array(la.entries()[i].accum) == hash_array(lb.entries()[i].accum));
}

TEST_CASE("warm-up fits a constant target to near-zero error") {
    Fixture fx(35, /*constant=*/true);
    ModelParams params(fx.bcfg, 3);
    auto ledger = VariationLedger::init(params);
    StagePlan plan = quick_plan();
    plan.warmup_epochs = 40;
    auto res = run_warmup(params, fx.train, fx.val, plan, ledger);
    CHECK(res.train_loss.back() < 0.05);
    CHECK(res.stabilized);  // validation error flatlines once the fit is done
    CHECK(res.epochs_run <= 40);
    CHECK(ledger.tb() == static_cast<std::size_t>(res.epochs_run));
}

TEST_CASE("fresh prompt bank leaves the fine-tune starting point unchanged") {
    Fixture fx(36);
    ModelParams params(fx.bcfg, 4);
    auto ledger = VariationLedger::init(params);
    StagePlan plan = quick_plan();
    plan.warmup_epochs = 3;
    run_warmup(params, fx.train, fx.val, plan, ledger);

    PromptBank bank(fx.pcfg, 10);  // alignment zero-initialized
    auto bare = predict(params, nullptr, fx.val, fx.senv, fx.tenv);
    auto prompted = predict(params, &bank, fx.val, fx.senv, fx.tenv);
    REQUIRE(bare.same_shape(prompted));
    for (std::size_t i = 0; i < bare.size(); ++i) CHECK(prompted[i] == bare[i]);
}

TEST_CASE("fine-tuning keeps the neocortex bit-exact while training the rest") {
    Fixture fx(37);
    ModelParams params(fx.bcfg, 5);
    auto ledger = VariationLedger::init(params);
    StagePlan plan = quick_plan();
    plan.warmup_epochs = 3;
    run_warmup(params, fx.train, fx.val, plan, ledger);
    auto part = build_partition(params, ledger, 60.0, 0.0);
    part.install(params);
    auto frozen_before = part.neocortex_hash(params);

    PromptBank bank(fx.pcfg, 11);
    auto bank_before = bank.content_hash();
    UpdateCounter counter;
    auto res = run_finetune(params, &part, &bank, fx.train, fx.senv, fx.tenv, plan, &counter);
    REQUIRE(res.train_loss.size() == 3);
    CHECK(part.neocortex_hash(params) == frozen_before);
    CHECK(bank.content_hash() != bank_before);  // prompts and alignment moved
    CHECK(counter.count("finetune") == part.hippocampus_count());
    CHECK(counter.count("prompt_plumbing") == bank.total_size());
    CHECK(res.neo_mean.size() == 3);  // partition statistics reported

    // without a partition every backbone scalar trains
    ModelParams all(fx.bcfg, 5);
    UpdateCounter c2;
    auto res2 = run_finetune(all, nullptr, nullptr, fx.train, fx.senv, fx.tenv, plan, &c2);
    CHECK(c2.count("finetune") == all.total_size());
    CHECK(res2.neo_mean.empty());
}

TEST_CASE("test-time adaptation touches only the encoder and interaction tensors") {
    Fixture fx(38);
    ModelParams params(fx.bcfg, 6);
    PromptBank bank(fx.pcfg, 12);
    auto backbone_before = params_hash(params);
    auto al_s_before = hash_array(bank.find("al_s").value);
    auto al_t_before = hash_array(bank.find("al_t").value);
    auto bank_before = bank.content_hash();

    StagePlan plan = quick_plan();
    UpdateCounter counter;
    auto res = test_time_adapt(bank, fx.adapt, fx.senv, fx.tenv, plan, &counter);
    CHECK(res.events > 0);
    CHECK(params_hash(params) == backbone_before);
    CHECK(hash_array(bank.find("al_s").value) == al_s_before);
    CHECK(hash_array(bank.find("al_t").value) == al_t_before);
    CHECK(bank.content_hash() != bank_before);
    CHECK(counter.count("adapt") ==
          static_cast<std::size_t>(res.events) * bank.encoder_stim_size());
    CHECK(res.final_loss < res.initial_loss);

    // zero-epoch adaptation is a strict no-op
    PromptBank untouched(fx.pcfg, 12);
    StagePlan none = quick_plan();
    none.adapt_epochs = 0;
    auto res0 = test_time_adapt(untouched, fx.adapt, fx.senv, fx.tenv, none);
    CHECK(res0.events == 0);
    CHECK(untouched.content_hash() == PromptBank(fx.pcfg, 12).content_hash());

    CHECK_THROWS_AS(test_time_adapt(bank, {}, fx.senv, fx.tenv, plan), AdaptError);
}

TEST_CASE("prediction is independent of batch composition") {
    Fixture fx(39);
    ModelParams params(fx.bcfg, 7);
    PromptBank bank(fx.pcfg, 13);
    // give the alignment nonzero weights so prompts actually matter
    for (auto& p : bank.tensors())
        if (p.name == "al_s" || p.name == "al_t")
            for (std::size_t j = 0; j < p.value.size(); ++j)
                p.value[j] = 0.01 * static_cast<double>(j % 7);

    auto full = predict(params, &bank, fx.val, fx.senv, fx.tenv);
    WindowSet head(fx.val.begin(), fx.val.begin() + 3);
    auto part = predict(params, &bank, head, fx.senv, fx.tenv);
    for (std::size_t i = 0; i < part.size(); ++i)
        CHECK(part[i] == doctest::Approx(full[i]).epsilon(1e-12));

    CHECK_THROWS_AS(predict(params, &bank, {}, fx.senv, fx.tenv), EmptyWindowError);
}
