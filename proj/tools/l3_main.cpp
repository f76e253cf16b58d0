// Command-line front end: dataset export, stage-by-stage training, metric
// evaluation, the full ablation suite and report regeneration.

#include <cmath>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "l3/checkpoint.hpp"
#include "l3/experiment.hpp"
#include "l3/synth.hpp"

namespace fs = std::filesystem;
using namespace l3;

namespace {

std::string resolve_out(const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    if (const char* env = std::getenv("L3_OUT_ROOT")) return env;
    return "out";
}

ExperimentConfig load_config(const std::string& path, const std::string& variant,
                             const std::string& seed_flag) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : parse_config_file(path);
    if (!variant.empty()) cfg.variant = variant_from_name(variant);
    if (!seed_flag.empty()) cfg.seeds = {std::stoull(seed_flag)};
    cfg.validate();
    return cfg;
}

int cmd_gen(const ExperimentConfig& cfg, const std::string& out) {
    for (auto domain : {cfg.source_domain, cfg.target_domain}) {
        synth::DatasetSpec spec{domain, cfg.eval_samples, cfg.seeds.front(), false};
        const std::string dir = out + "/dataset_" + synth::domain_name(domain);
        synth::export_split(dir, spec);
        std::cout << "wrote " << spec.n << " samples to " << dir << "\n";
    }
    return 0;
}

int cmd_train_source(const ExperimentConfig& cfg, const std::string& out) {
    for (std::uint64_t seed : cfg.seeds) {
        const std::string dir = harness::variant_seed_dir(out, variant_name(cfg.variant), seed);
        fs::create_directories(dir);
        CheckpointMeta meta{seed, cfg.sha(), "source-train", ""};
        if (cfg.variant == Variant::Baseline || cfg.variant == Variant::Ut) {
            auto r = train::baseline_train(cfg, seed);
            r.curve.write_csv(dir + "/losses_source.csv");
            save_checkpoint(r.net->params(), dir + "/source", meta);
        } else {
            auto r = train::source_train(cfg, seed);
            r.curve.write_csv(dir + "/losses_source.csv");
            save_checkpoint(r.net->params(), dir + "/source", meta);
        }
        std::cout << "seed " << seed << ": source checkpoint in " << dir << "\n";
    }
    return 0;
}

int cmd_adapt_target(const ExperimentConfig& cfg, const std::string& out) {
    for (std::uint64_t seed : cfg.seeds) {
        const std::string dir = harness::variant_seed_dir(out, variant_name(cfg.variant), seed);
        std::vector<std::string> warnings;
        CheckpointMeta meta;
        if (cfg.variant == Variant::Ut) {
            BaselineNet<float> net(cfg.dims, 0);
            net.load_from(load_checkpoint(dir + "/source", &meta, &warnings, cfg.sha()));
            auto curve = train::ut_finetune(net, cfg, seed);
            curve.write_csv(dir + "/losses_target.csv");
            CheckpointMeta ameta{seed, cfg.sha(), "target-adapt", checkpoint_payload_sha(dir + "/source")};
            save_checkpoint(net.params(), dir + "/adapted", ameta);
        } else if (cfg.variant == Variant::Baseline || cfg.variant == Variant::NoRawvis) {
            std::cout << variant_name(cfg.variant) << " has no target-adapt stage\n";
            return 0;
        } else {
            L3Net<float> net(cfg.dims, wiring_for(cfg.variant), 0);
            net.load_from(load_checkpoint(dir + "/source", &meta, &warnings, cfg.sha()));
            auto curve = train::target_adapt(net, cfg, seed);
            curve.write_csv(dir + "/losses_target.csv");
            CheckpointMeta ameta{seed, cfg.sha(), "target-adapt", checkpoint_payload_sha(dir + "/source")};
            save_checkpoint(net.params(), dir + "/adapted", ameta);
        }
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "seed " << seed << ": adapted checkpoint in " << dir << "\n";
    }
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& out) {
    std::vector<harness::ScoreRow> rows;
    for (std::uint64_t seed : cfg.seeds) {
        const std::string dir = harness::variant_seed_dir(out, variant_name(cfg.variant), seed);
        std::vector<std::string> warnings;
        const bool adapted = fs::exists(dir + "/adapted.manifest");
        const std::string base = dir + (adapted ? "/adapted" : "/source");
        std::map<std::string, double> src_scores, tgt_scores;
        if (cfg.variant == Variant::Baseline || cfg.variant == Variant::Ut) {
            BaselineNet<float> source_net(cfg.dims, 0);
            source_net.load_from(load_checkpoint(dir + "/source", nullptr, &warnings, cfg.sha()));
            BaselineNet<float> target_net(cfg.dims, 0);
            target_net.load_from(load_checkpoint(base, nullptr, &warnings, cfg.sha()));
            src_scores = harness::evaluate_encoder(harness::make_baseline_encoder_factory(source_net),
                                                   cfg.source_domain, cfg, seed, &warnings);
            tgt_scores = harness::evaluate_encoder(harness::make_baseline_encoder_factory(target_net),
                                                   cfg.target_domain, cfg, seed, &warnings);
        } else {
            L3Net<float> source_net(cfg.dims, wiring_for(cfg.variant), 0);
            source_net.load_from(load_checkpoint(dir + "/source", nullptr, &warnings, cfg.sha()));
            L3Net<float> target_net(cfg.dims, wiring_for(cfg.variant), 0);
            target_net.load_from(load_checkpoint(base, nullptr, &warnings, cfg.sha()));
            src_scores = harness::evaluate_encoder(harness::make_l3_encoder_factory(source_net),
                                                   cfg.source_domain, cfg, seed, &warnings);
            tgt_scores = harness::evaluate_encoder(harness::make_l3_encoder_factory(target_net),
                                                   cfg.target_domain, cfg, seed, &warnings);
        }
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        for (const auto& metric : harness::metric_names())
            for (const auto& group : harness::group_names()) {
                const std::string key = metric + "/" + group;
                const double s = src_scores.at(key), t = tgt_scores.at(key);
                rows.push_back({variant_name(cfg.variant), seed, synth::domain_name(cfg.source_domain),
                                metric, group, s, s > 1e-6 ? 1.0 : std::nan("")});
                rows.push_back({variant_name(cfg.variant), seed, synth::domain_name(cfg.target_domain),
                                metric, group, t, s > 1e-6 ? t / s : std::nan("")});
            }
    }
    harness::write_report_csv(out + "/report.csv", rows);
    harness::write_summary(out, rows, cfg);
    std::cout << "report written to " << out << "/report.csv\n";
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& out, bool single_variant) {
    if (single_variant) {
        harness::run_experiment(cfg, out);
    } else {
        const auto result = harness::ablation_suite(cfg, out);
        std::cout << "suite wall " << result.wall_seconds << " s, cpu " << result.cpu_seconds
                  << " s\n";
        for (const auto& c : harness::ordering_checks(result.rows, cfg))
            std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << c.detail << ")\n";
    }
    std::cout << "artifacts in " << out << "\n";
    return 0;
}

int cmd_report(const ExperimentConfig& cfg, const std::string& out) {
    const auto rows = harness::read_report_csv(out + "/report.csv");
    harness::write_summary(out, rows, cfg);
    for (const auto& c : harness::ordering_checks(rows, cfg))
        std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << c.detail << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-domain relations-discovery training and evaluation harness"};
    app.require_subcommand(1);

    std::string config_path, out_flag, variant_flag, seed_flag;
    app.add_option("--config", config_path, "configuration file");
    app.add_option("--out", out_flag, "output directory (default $L3_OUT_ROOT or ./out)");
    app.add_option("--variant", variant_flag, "model variant override");
    app.add_option("--seed", seed_flag, "single seed override");

    auto* gen = app.add_subcommand("gen", "export synthetic dataset splits");
    auto* train_source = app.add_subcommand("train-source", "run the source-train stage");
    auto* adapt_target = app.add_subcommand("adapt-target", "run the target-adapt stage");
    auto* eval = app.add_subcommand("eval", "evaluate checkpoints and write a score report");
    auto* ablate = app.add_subcommand("ablate", "run the full ablation suite (or one variant)");
    auto* report = app.add_subcommand("report", "regenerate summary and plots from report.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = load_config(config_path, variant_flag, seed_flag);
        const std::string out = resolve_out(out_flag);
        fs::create_directories(out);
        if (gen->parsed()) return cmd_gen(cfg, out);
        if (train_source->parsed()) return cmd_train_source(cfg, out);
        if (adapt_target->parsed()) return cmd_adapt_target(cfg, out);
        if (eval->parsed()) return cmd_eval(cfg, out);
        if (ablate->parsed()) return cmd_ablate(cfg, out, !variant_flag.empty());
        if (report->parsed()) return cmd_report(cfg, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
