#pragma once

#include <map>
#include <string>
#include <vector>

#include "l3/config.hpp"
#include "l3/metrics.hpp"
#include "l3/train.hpp"

namespace l3::harness {

// One CSV row of the score report: model,seed,domain,metric,group,raw,normalized.
struct ScoreRow {
    std::string model;
    std::uint64_t seed = 0;
    std::string domain;
    std::string metric;  // dci | mig | fvae
    std::string group;   // all | segmask_presented | auxiliary_expanded
    double raw = 0;
    double normalized = 0;
};

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> m = {"dci", "mig", "fvae"};
    return m;
}
inline const std::vector<std::string>& group_names() {
    static const std::vector<std::string> g = {"all", "segmask_presented", "auxiliary_expanded"};
    return g;
}
std::vector<int> group_factors(const std::string& group);

// Stateful per-thread encoder: maps a sample to its z code.
using Encoder = std::function<void(const synth::Sample&, double*)>;
// Creates one encoder instance per worker slot.
using EncoderFactory = std::function<Encoder()>;

EncoderFactory make_l3_encoder_factory(const L3Net<float>& net);
EncoderFactory make_baseline_encoder_factory(const BaselineNet<float>& net);

metrics::RepresentationTable build_table(const EncoderFactory& factory, synth::Domain domain,
                                         int n, std::uint64_t data_seed, int z_dim);

// All metric/group scores for one model on one domain. Keys "metric/group".
std::map<std::string, double> evaluate_encoder(const EncoderFactory& factory, synth::Domain domain,
                                               const ExperimentConfig& cfg, std::uint64_t seed,
                                               std::vector<std::string>* warnings = nullptr);

// Full pipeline for cfg.variant over cfg.seeds: train, evaluate source, adapt
// (when the variant has a target stage), evaluate target, write artifacts.
std::vector<ScoreRow> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct SuiteResult {
    std::vector<ScoreRow> rows;
    double wall_seconds = 0;
    double cpu_seconds = 0;
};

// Runs every model variant over shared seeds and datasets, with the
// source-train stage shared between variants whose source stage is identical
// (full/no_alignment and baseline/ut).
SuiteResult ablation_suite(const ExperimentConfig& cfg, const std::string& out_dir);

void write_report_csv(const std::string& path, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_report_csv(const std::string& path);

struct OrderingCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

// The comparative claims the ablation study is expected to reproduce,
// evaluated from a score report (means over seeds unless stated per-seed).
std::vector<OrderingCheck> ordering_checks(const std::vector<ScoreRow>& rows,
                                           const ExperimentConfig& cfg);

// summary.txt (mean +- std table plus ordering lines) and SVG plots.
void write_summary(const std::string& out_dir, const std::vector<ScoreRow>& rows,
                   const ExperimentConfig& cfg);
void write_metric_bar_chart(const std::string& path, const std::string& title,
                            const std::vector<std::pair<std::string, double>>& bars);
void write_loss_curve_svg(const std::string& path, const train::LossCurve& curve,
                          const std::string& title);

// Directory layout helpers.
std::string variant_seed_dir(const std::string& out_dir, const std::string& variant,
                             std::uint64_t seed);

// Mean over seeds of one (model, domain, metric, group) cell; `normalized`
// picks the normalized column instead of the raw one.
double report_mean(const std::vector<ScoreRow>& rows, const std::string& model,
                   const std::string& domain, const std::string& metric, const std::string& group,
                   bool normalized);

}  // namespace l3::harness
