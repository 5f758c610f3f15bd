#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "coms2t/eval.hpp"
#include "coms2t/plot.hpp"
#include "coms2t/theory.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace coms2t;

namespace {

ExperimentConfig load_config(const std::string& path, long long seed_override) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
    if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
    cfg.validate();
    return cfg;
}

int cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
    auto ds = synth_generate(cfg.synth);
    ds.validate();
    fs::create_directories(out_dir);
    save_dataset(ds, (fs::path(out_dir) / "dataset").string());
    json report;
    report["command"] = "synth";
    report["n_steps"] = ds.n_steps();
    report["n_nodes"] = ds.n_nodes();
    report["dataset"] = (fs::path(out_dir) / "dataset").string();
    std::ofstream(fs::path(out_dir) / "report.json") << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_experiment(ExperimentConfig cfg, const std::string& out_dir, bool with_adaptation) {
    if (!with_adaptation) cfg.plan.adapt_epochs = 0;
    auto report = run_experiment(cfg, out_dir);
    std::cout << "test MAE " << report.mean_test_mae << " +/- " << report.std_test_mae << "\n";
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& out_dir) {
    auto reports = run_ablation(cfg, out_dir);
    json index;
    for (const auto& r : reports) {
        index[r.config.variant] = {{"mean_test_mae", r.mean_test_mae},
                                   {"std_test_mae", r.std_test_mae}};
        std::cout << r.config.variant << ": " << r.mean_test_mae << " +/- " << r.std_test_mae
                  << "\n";
    }
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "report.json") << index.dump(2) << "\n";
    return 0;
}

int cmd_theory(const std::string& out_dir, std::uint64_t seed) {
    std::string doc = theory_check_json(100000, seed);
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "theory_check.json") << doc << "\n";
    std::ofstream(fs::path(out_dir) / "report.json") << doc << "\n";
    std::cout << doc << "\n";
    bool pass = json::parse(doc).at("pass").get<bool>();
    if (!pass) throw NumericsError("theory-check: tolerance violation");
    return 0;
}

int cmd_report(const std::string& out_dir) {
    std::ifstream in(fs::path(out_dir) / "report.json");
    if (!in) throw ReportError("report: no report.json under " + out_dir);
    std::stringstream ss;
    ss << in.rdbuf();
    std::cout << ss.str();
    return 0;
}

int cmd_plot(const std::string& out_dir) {
    std::ifstream in(fs::path(out_dir) / "transcript_seed0.jsonl");
    if (!in) throw ReportError("plot: no transcript_seed0.jsonl under " + out_dir);
    Series train{"train_loss", {}, 0x1f77b4}, val{"val_mae", {}, 0xff7f0e};
    std::vector<std::size_t> markers;
    std::string line;
    std::size_t idx = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        std::string stage = j.at("stage").get<std::string>();
        if (stage == "adapt") continue;
        if (stage == "finetune" && markers.empty()) markers.push_back(idx);
        train.values.push_back(j.at("train_loss").get<double>());
        val.values.push_back(j.at("val_mae").get<double>());
        ++idx;
    }
    std::string path = (fs::path(out_dir) / "transcript_plot.png").string();
    plot_lines(path, {train, val}, markers);
    std::cout << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Complementary spatiotemporal learning pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    long long seed = -1;
    app.add_option("--config", config_path, "JSON experiment config");
    app.add_option("--seed", seed, "override the seed list with one seed");
    app.add_option("--out-dir", out_dir, "artifact directory");

    auto* sub_synth = app.add_subcommand("synth", "generate a synthetic dataset bundle");
    auto* sub_train = app.add_subcommand("train", "run the pipeline without test-time adaptation");
    auto* sub_adapt = app.add_subcommand("adapt", "run the full pipeline incl. adaptation");
    auto* sub_ablate = app.add_subcommand("ablate", "run every ablation variant");
    auto* sub_theory = app.add_subcommand("theory-check", "verify the error analysis numerically");
    auto* sub_report = app.add_subcommand("report", "print the report.json of a finished run");
    auto* sub_plot = app.add_subcommand("plot", "re-render plots from a run transcript");
    for (auto* sub : {sub_synth, sub_train, sub_adapt, sub_ablate, sub_theory, sub_report,
                      sub_plot})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sub_theory->parsed())
            return cmd_theory(out_dir, seed >= 0 ? static_cast<std::uint64_t>(seed) : 7);
        if (sub_report->parsed()) return cmd_report(out_dir);
        if (sub_plot->parsed()) return cmd_plot(out_dir);

        ExperimentConfig cfg = load_config(config_path, seed);
        if (sub_synth->parsed()) return cmd_synth(cfg, out_dir);
        if (sub_train->parsed()) return cmd_experiment(cfg, out_dir, false);
        if (sub_adapt->parsed()) return cmd_experiment(cfg, out_dir, true);
        if (sub_ablate->parsed()) return cmd_ablate(cfg, out_dir);
    } catch (const NumericsError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 3;
    } catch (const SingularityError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
