#include "l3/experiment.hpp"

#include <algorithm>
#include <chrono>
#ifdef _OPENMP
#include <omp.h>
#endif
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "l3/checkpoint.hpp"

namespace l3::harness {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616cull;
constexpr std::uint64_t kFvaeStream = 0x66766165ull;
constexpr std::uint64_t kDciStream = 0x64636900ull;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

EncoderFactory make_l3_encoder_factory(const L3Net<float>& net) {
    return [&net]() -> Encoder {
        auto cache = std::make_shared<SampleCache<float>>();
        net.resize_cache(*cache);
        return [&net, cache](const synth::Sample& s, double* out) {
            const std::vector<float> z = net.infer_z(s, *cache);
            for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j];
        };
    };
}

EncoderFactory make_baseline_encoder_factory(const BaselineNet<float>& net) {
    return [&net]() -> Encoder {
        auto cache = std::make_shared<typename BaselineNet<float>::Cache>();
        net.resize_cache(*cache);
        return [&net, cache](const synth::Sample& s, double* out) {
            const std::vector<float> z = net.infer_z(s, *cache);
            for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j];
        };
    };
}

namespace {

synth::FactorVector random_factors_with(Rng& rng, int fixed_factor, int fixed_value) {
    synth::FactorVector f;
    for (int i = 0; i < synth::kFactorCount; ++i)
        synth::factor_set(f, i, static_cast<int>(rng.below(synth::kFactorRanges[i])));
    if (fixed_factor >= 0) synth::factor_set(f, fixed_factor, fixed_value);
    return f;
}

metrics::FvaeSampler make_fvae_sampler(const EncoderFactory& factory, synth::Domain domain,
                                        int z_dim) {
    // one encoder (with its activation workspace) per worker thread
    auto encoders = std::make_shared<std::vector<Encoder>>();
#ifdef _OPENMP
    const int workers = omp_get_max_threads();
#else
    const int workers = 1;
#endif
    for (int t = 0; t < workers; ++t) encoders->push_back(factory());
    return [encoders, domain, z_dim](int factor, int value, int count, Rng& rng, double* out_z) {
#ifdef _OPENMP
        Encoder& enc = (*encoders)[omp_get_thread_num() % encoders->size()];
#else
        Encoder& enc = (*encoders)[0];
#endif
        for (int i = 0; i < count; ++i) {
            const synth::FactorVector f = random_factors_with(rng, factor, value);
            const synth::Sample s = synth::make_sample(f, domain, rng.next());
            enc(s, out_z + std::size_t(i) * z_dim);
        }
    };
}

}  // namespace

std::vector<int> group_factors(const std::string& group) {
    if (group == "all") return {0, 1, 2, 3, 4, 5};
    if (group == "segmask_presented")
        return {synth::kSegmaskPresentedFactors.begin(), synth::kSegmaskPresentedFactors.end()};
    if (group == "auxiliary_expanded")
        return {synth::kAuxiliaryExpandedFactors.begin(), synth::kAuxiliaryExpandedFactors.end()};
    throw std::invalid_argument("unknown factor group: " + group);
}

metrics::RepresentationTable build_table(const EncoderFactory& factory, synth::Domain domain,
                                         int n, std::uint64_t data_seed, int z_dim) {
    metrics::RepresentationTable table;
    table.z_dim = z_dim;
    table.f_dim = synth::kFactorCount;
    table.z.assign(std::size_t(n) * z_dim, 0.0);
    table.f.assign(std::size_t(n) * synth::kFactorCount, 0);
    synth::DatasetSpec data{domain, n, data_seed, false};
    const int R = train::kReductionSlots;
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
    for (int s = 0; s < R; ++s) {
        Encoder enc = factory();
        for (int i = s; i < n; i += R) {
            const synth::Sample sample = data.at(i);
            enc(sample, table.z.data() + std::size_t(i) * z_dim);
            for (int k = 0; k < synth::kFactorCount; ++k)
                table.f[std::size_t(i) * synth::kFactorCount + k] =
                    synth::factor_get(sample.factors, k);
        }
    }
    return table;
}

std::map<std::string, double> evaluate_encoder(const EncoderFactory& factory, synth::Domain domain,
                                               const ExperimentConfig& cfg, std::uint64_t seed,
                                               std::vector<std::string>* warnings) {
    std::map<std::string, double> scores;
    const metrics::RepresentationTable table =
        build_table(factory, domain, cfg.eval_samples, hash_combine(kEvalStream, seed), cfg.dims.z_dim);
    metrics::DciConfig dci_cfg{cfg.dci_trees, cfg.dci_depth, 5, hash_combine(kDciStream, seed)};
    metrics::FvaeConfig fvae_cfg;
    fvae_cfg.votes = cfg.fvae_votes;
    fvae_cfg.batch = cfg.fvae_batch;
    fvae_cfg.std_samples = cfg.fvae_std_samples;
    fvae_cfg.z_dim = cfg.dims.z_dim;
    fvae_cfg.seed = hash_combine(kFvaeStream, seed, std::uint64_t(domain));

    // The per-factor pieces (MI matrix, per-factor tree importances, votes)
    // do not depend on the grouping; compute them once and aggregate per group.
    const std::vector<double> mi = metrics::mutual_info_matrix(table, cfg.mi_bins, warnings);
    const std::vector<double> importance =
        metrics::dci_importance_matrix(table, dci_cfg, group_factors("all"));
    const metrics::FvaeSampler sampler = make_fvae_sampler(factory, domain, cfg.dims.z_dim);
    std::vector<std::vector<int>> groups;
    for (const auto& g : group_names()) groups.push_back(group_factors(g));
    const std::vector<double> fvae = metrics::fvae_group_scores(sampler, fvae_cfg, groups, warnings);

    for (std::size_t gi = 0; gi < group_names().size(); ++gi) {
        const std::string& group = group_names()[gi];
        const std::vector<int>& factors = groups[gi];
        std::vector<double> sub(std::size_t(cfg.dims.z_dim) * factors.size());
        for (int j = 0; j < cfg.dims.z_dim; ++j)
            for (std::size_t k = 0; k < factors.size(); ++k)
                sub[std::size_t(j) * factors.size() + k] =
                    importance[std::size_t(j) * synth::kFactorCount + factors[k]];
        scores["dci/" + group] =
            metrics::dci_from_importance(sub, cfg.dims.z_dim, static_cast<int>(factors.size()), warnings);
        scores["mig/" + group] = metrics::mig_from_mi(mi, table, factors);
        scores["fvae/" + group] = fvae[gi];
    }
    return scores;
}

std::string variant_seed_dir(const std::string& out_dir, const std::string& variant,
                             std::uint64_t seed) {
    return out_dir + "/" + variant + "/seed" + std::to_string(seed);
}

namespace {

// Per-seed caches shared between variants whose source stage coincides.
struct SuiteCache {
    std::map<std::uint64_t, L3Net<float>> full_source;           // full == no_alignment source
    std::map<std::uint64_t, train::LossCurve> full_source_curve;
    std::map<std::uint64_t, BaselineNet<float>> baseline_source;  // baseline == ut source
    std::map<std::uint64_t, train::LossCurve> baseline_curve;
    std::map<std::uint64_t, std::map<std::string, double>> baseline_source_scores;
};

bool variant_adapts(Variant v) {
    switch (v) {
        case Variant::Full:
        case Variant::NoAlignment:
        case Variant::NoMsf:
        case Variant::NoMmcfConcat:
        case Variant::RevMmcf: return true;
        default: return false;
    }
}

void append_rows(std::vector<ScoreRow>& rows, const ExperimentConfig& cfg, std::uint64_t seed,
                 const std::map<std::string, double>& source_scores,
                 const std::map<std::string, double>& target_scores) {
    const std::string model = variant_name(cfg.variant);
    const std::string source_name = synth::domain_name(cfg.source_domain);
    const std::string target_name = synth::domain_name(cfg.target_domain);
    for (const auto& metric : metric_names()) {
        for (const auto& group : group_names()) {
            const std::string key = metric + "/" + group;
            const double src = source_scores.at(key);
            const double tgt = target_scores.at(key);
            const double norm_src = src > 1e-6 ? 1.0 : std::nan("");
            const double norm_tgt = src > 1e-6 ? tgt / src : std::nan("");
            rows.push_back({model, seed, source_name, metric, group, src, norm_src});
            rows.push_back({model, seed, target_name, metric, group, tgt, norm_tgt});
        }
    }
}

// Runs one (variant, seed) pipeline; uses/fills the cache when stages are
// shared with a sibling variant.
void run_variant_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                      SuiteCache* cache, std::vector<ScoreRow>& rows) {
    const std::string dir = variant_seed_dir(out_dir, variant_name(cfg.variant), seed);
    fs::create_directories(dir);
    fs::create_directories(out_dir + "/plots");
    const std::string plot_dir = out_dir + "/plots";
    const std::string tag = std::string(variant_name(cfg.variant)) + "_seed" + std::to_string(seed);
    CheckpointMeta meta;
    meta.seed = seed;
    meta.config_sha = cfg.sha();

    std::map<std::string, double> source_scores, target_scores;

    if (cfg.variant == Variant::Baseline || cfg.variant == Variant::Ut) {
        BaselineNet<float>* source_net = nullptr;
        std::unique_ptr<BaselineNet<float>> local_net;
        train::LossCurve curve;
        if (cache && cache->baseline_source.count(seed)) {
            source_net = &cache->baseline_source.at(seed);
            curve = cache->baseline_curve.at(seed);
        } else {
            auto trained = train::baseline_train(cfg, seed);
            curve = trained.curve;
            if (cache) {
                cache->baseline_source.emplace(seed, *trained.net);
                cache->baseline_curve.emplace(seed, curve);
                source_net = &cache->baseline_source.at(seed);
            } else {
                local_net = std::move(trained.net);
                source_net = local_net.get();
            }
        }
        curve.write_csv(dir + "/losses_source.csv");
        write_loss_curve_svg(plot_dir + "/loss_" + tag + "_source.svg", curve, tag + " source");
        meta.stage = "source-train";
        save_checkpoint(source_net->params().template cast<float>(), dir + "/source", meta);

        if (cache && cache->baseline_source_scores.count(seed)) {
            source_scores = cache->baseline_source_scores.at(seed);
        } else {
            source_scores =
                evaluate_encoder(make_baseline_encoder_factory(*source_net), cfg.source_domain, cfg, seed);
            if (cache) cache->baseline_source_scores.emplace(seed, source_scores);
        }

        if (cfg.variant == Variant::Ut) {
            BaselineNet<float> finetuned = *source_net;
            const train::LossCurve tcurve = train::ut_finetune(finetuned, cfg, seed);
            tcurve.write_csv(dir + "/losses_target.csv");
            write_loss_curve_svg(plot_dir + "/loss_" + tag + "_target.svg", tcurve, tag + " target");
            CheckpointMeta ameta = meta;
            ameta.stage = "target-adapt";
            ameta.source_sha = checkpoint_payload_sha(dir + "/source");
            save_checkpoint(finetuned.params().template cast<float>(), dir + "/adapted", ameta);
            target_scores =
                evaluate_encoder(make_baseline_encoder_factory(finetuned), cfg.target_domain, cfg, seed);
        } else {
            target_scores =
                evaluate_encoder(make_baseline_encoder_factory(*source_net), cfg.target_domain, cfg, seed);
        }
        append_rows(rows, cfg, seed, source_scores, target_scores);
        return;
    }

    // L3 family
    std::unique_ptr<L3Net<float>> net;
    train::LossCurve curve;
    const bool shares_full_source =
        (cfg.variant == Variant::Full || cfg.variant == Variant::NoAlignment);
    if (shares_full_source && cache && cache->full_source.count(seed)) {
        net = std::make_unique<L3Net<float>>(cache->full_source.at(seed));
        curve = cache->full_source_curve.at(seed);
    } else {
        ExperimentConfig source_cfg = cfg;
        if (cfg.variant == Variant::NoAlignment) source_cfg.variant = Variant::Full;
        auto trained = train::source_train(source_cfg, seed);
        net = std::move(trained.net);
        curve = trained.curve;
        if (shares_full_source && cache) {
            cache->full_source.emplace(seed, *net);
            cache->full_source_curve.emplace(seed, curve);
        }
    }
    curve.write_csv(dir + "/losses_source.csv");
    write_loss_curve_svg(plot_dir + "/loss_" + tag + "_source.svg", curve, tag + " source");
    meta.stage = "source-train";
    save_checkpoint(net->params().template cast<float>(), dir + "/source", meta);

    source_scores = evaluate_encoder(make_l3_encoder_factory(*net), cfg.source_domain, cfg, seed);

    if (variant_adapts(cfg.variant)) {
        const train::LossCurve tcurve = train::target_adapt(*net, cfg, seed);
        tcurve.write_csv(dir + "/losses_target.csv");
        write_loss_curve_svg(plot_dir + "/loss_" + tag + "_target.svg", tcurve, tag + " target");
        CheckpointMeta ameta = meta;
        ameta.stage = "target-adapt";
        ameta.source_sha = checkpoint_payload_sha(dir + "/source");
        save_checkpoint(net->params().template cast<float>(), dir + "/adapted", ameta);
    }
    target_scores = evaluate_encoder(make_l3_encoder_factory(*net), cfg.target_domain, cfg, seed);
    append_rows(rows, cfg, seed, source_scores, target_scores);
}

void write_manifest(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream mf(out_dir + "/manifest.txt");
    mf << "# config sha " << cfg.sha() << "\n";
    mf << cfg.echo();
}

}  // namespace

std::vector<ScoreRow> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    write_manifest(cfg, out_dir);
    std::vector<ScoreRow> rows;
    for (std::uint64_t seed : cfg.seeds) run_variant_seed(cfg, seed, out_dir, nullptr, rows);
    write_report_csv(out_dir + "/report.csv", rows);
    write_summary(out_dir, rows, cfg);
    return rows;
}

SuiteResult ablation_suite(const ExperimentConfig& cfg, const std::string& out_dir) {
    const auto wall0 = std::chrono::steady_clock::now();
    const std::clock_t cpu0 = std::clock();
    write_manifest(cfg, out_dir);
    SuiteCache cache;
    std::vector<ScoreRow> rows;
    const Variant order[] = {Variant::Full,    Variant::NoAlignment, Variant::NoMsf,
                             Variant::NoMmcfConcat, Variant::RevMmcf, Variant::NoRawvis,
                             Variant::Baseline, Variant::Ut};
    for (Variant v : order) {
        ExperimentConfig vcfg = cfg;
        vcfg.variant = v;
        for (std::uint64_t seed : cfg.seeds) run_variant_seed(vcfg, seed, out_dir, &cache, rows);
    }
    write_report_csv(out_dir + "/report.csv", rows);
    write_summary(out_dir, rows, cfg);
    SuiteResult result;
    result.rows = std::move(rows);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    result.cpu_seconds = double(std::clock() - cpu0) / CLOCKS_PER_SEC;
    std::ofstream rt(out_dir + "/runtime.txt");
    rt << "wall_seconds=" << fmt(result.wall_seconds) << "\n";
    rt << "cpu_seconds=" << fmt(result.cpu_seconds) << "\n";
    return result;
}

void write_report_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "model,seed,domain,metric,group,raw,normalized\n";
    for (const auto& r : rows)
        out << r.model << ',' << r.seed << ',' << r.domain << ',' << r.metric << ',' << r.group
            << ',' << fmt(r.raw) << ',' << fmt(r.normalized) << "\n";
}

std::vector<ScoreRow> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<ScoreRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        ScoreRow r;
        std::string field;
        std::getline(ss, r.model, ',');
        std::getline(ss, field, ',');
        r.seed = std::stoull(field);
        std::getline(ss, r.domain, ',');
        std::getline(ss, r.metric, ',');
        std::getline(ss, r.group, ',');
        std::getline(ss, field, ',');
        r.raw = std::stod(field);
        std::getline(ss, field, ',');
        r.normalized = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

std::vector<double> report_values(const std::vector<ScoreRow>& rows, const std::string& model,
                                  const std::string& domain, const std::string& metric,
                                  const std::string& group, bool normalized) {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.model == model && r.domain == domain && r.metric == metric && r.group == group)
            out.push_back(normalized ? r.normalized : r.raw);
    return out;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

}  // namespace

double report_mean(const std::vector<ScoreRow>& rows, const std::string& model,
                   const std::string& domain, const std::string& metric, const std::string& group,
                   bool normalized) {
    return mean_of(report_values(rows, model, domain, metric, group, normalized));
}

std::vector<OrderingCheck> ordering_checks(const std::vector<ScoreRow>& rows,
                                           const ExperimentConfig& cfg) {
    std::vector<OrderingCheck> checks;
    const std::string tgt = synth::domain_name(cfg.target_domain);
    const std::string src = synth::domain_name(cfg.source_domain);
    auto have = [&](const std::string& model) {
        for (const auto& r : rows)
            if (r.model == model) return true;
        return false;
    };
    auto add = [&](const std::string& name, bool pass, const std::string& detail) {
        checks.push_back({name, pass, detail});
    };

    if (have("full")) {
        for (const auto& metric : metric_names()) {
            const double v = report_mean(rows, "full", tgt, metric, "all", true);
            add("full normalized " + metric + " >= 0.75", v >= 0.75, "value " + fmt(v));
        }
        for (const std::string other :
             {"baseline", "ut", "no_msf", "no_mmcf_concat", "rev_mmcf", "no_alignment"}) {
            if (!have(other)) continue;
            const double a = report_mean(rows, "full", tgt, "dci", "all", true);
            const double b = report_mean(rows, other, tgt, "dci", "all", true);
            add("full exceeds " + other + " by >= 0.1 on normalized dci", a - b >= 0.1,
                fmt(a) + " vs " + fmt(b));
        }
    }
    if (have("no_rawvis")) {
        const double seg = report_mean(rows, "no_rawvis", tgt, "dci", "segmask_presented", true);
        add("no_rawvis normalized segmask_presented dci >= 0.7", seg >= 0.7, "value " + fmt(seg));
        const double aux = report_mean(rows, "no_rawvis", tgt, "dci", "auxiliary_expanded", false);
        add("no_rawvis target auxiliary_expanded dci <= 0.5", aux <= 0.5, "value " + fmt(aux));
    }
    if (have("full") && have("no_alignment")) {
        const auto a = report_values(rows, "full", tgt, "dci", "all", true);
        const auto b = report_values(rows, "no_alignment", tgt, "dci", "all", true);
        bool all_seeds = a.size() == b.size() && !a.empty();
        std::string detail;
        for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
            all_seeds = all_seeds && a[i] > b[i];
            detail += (i ? " " : "") + fmt(a[i]) + ">" + fmt(b[i]);
        }
        add("with-alignment beats no_alignment on normalized dci in every seed", all_seeds, detail);
    }
    if (have("full") && have("baseline")) {
        const double a = report_mean(rows, "full", src, "dci", "all", false);
        const double b = report_mean(rows, "baseline", src, "dci", "all", false);
        add("source dci parity |full - baseline| <= 0.1", std::fabs(a - b) <= 0.1,
            fmt(a) + " vs " + fmt(b));
    }
    return checks;
}

void write_summary(const std::string& out_dir, const std::vector<ScoreRow>& rows,
                   const ExperimentConfig& cfg) {
    std::ofstream out(out_dir + "/summary.txt");
    if (!out) throw std::runtime_error("cannot write summary");
    const std::string tgt = synth::domain_name(cfg.target_domain);
    const std::string src = synth::domain_name(cfg.source_domain);

    std::vector<std::string> models;
    for (const auto& r : rows)
        if (std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);

    out << "normalized target scores (mean +- std over seeds)\n";
    char buf[256];
    for (const auto& group : group_names()) {
        out << "\n[" << group << "]\n";
        std::snprintf(buf, sizeof(buf), "%-16s", "model");
        out << buf;
        for (const auto& metric : metric_names()) {
            std::snprintf(buf, sizeof(buf), " %18s", metric.c_str());
            out << buf;
        }
        out << "\n";
        for (const auto& model : models) {
            std::snprintf(buf, sizeof(buf), "%-16s", model.c_str());
            out << buf;
            for (const auto& metric : metric_names()) {
                const auto v = report_values(rows, model, tgt, metric, group, true);
                std::snprintf(buf, sizeof(buf), "    %.3f +- %.3f", mean_of(v), std_of(v));
                out << buf;
            }
            out << "\n";
        }
    }
    out << "\nraw scores (mean over seeds, source | target)\n";
    for (const auto& model : models) {
        std::snprintf(buf, sizeof(buf), "%-16s", model.c_str());
        out << buf;
        for (const auto& metric : metric_names()) {
            const double s = report_mean(rows, model, src, metric, "all", false);
            const double t = report_mean(rows, model, tgt, metric, "all", false);
            std::snprintf(buf, sizeof(buf), "  %s %.3f|%.3f", metric.c_str(), s, t);
            out << buf;
        }
        out << "\n";
    }
    out << "\nordering checks\n";
    for (const auto& c : ordering_checks(rows, cfg))
        out << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << c.detail << ")\n";

    // bar charts of the mean normalized scores
    for (const auto& metric : metric_names()) {
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& model : models)
            bars.emplace_back(model, report_mean(rows, model, tgt, metric, "all", true));
        write_metric_bar_chart(out_dir + "/plots/normalized_" + metric + ".svg",
                               "normalized " + metric + " (" + src + "->" + tgt + ")", bars);
    }
}

void write_metric_bar_chart(const std::string& path, const std::string& title,
                            const std::vector<std::pair<std::string, double>>& bars) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const int width = 720, height = 360, margin = 60;
    const int plot_w = width - 2 * margin, plot_h = height - 2 * margin;
    double maxv = 1.0;
    for (const auto& [_, v] : bars)
        if (std::isfinite(v)) maxv = std::max(maxv, v);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\">\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    const double bw = bars.empty() ? 0 : double(plot_w) / bars.size();
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double v = std::isfinite(bars[i].second) ? std::max(0.0, bars[i].second) : 0.0;
        const double h = plot_h * v / maxv;
        const double x = margin + i * bw + bw * 0.15;
        out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(height - margin - h) << "\" width=\""
            << fmt(bw * 0.7) << "\" height=\"" << fmt(h) << "\" fill=\"#4878a8\"/>\n";
        out << "<text x=\"" << fmt(x + bw * 0.35) << "\" y=\"" << height - margin + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << bars[i].first << "</text>\n";
        out << "<text x=\"" << fmt(x + bw * 0.35) << "\" y=\"" << fmt(height - margin - h - 4)
            << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(bars[i].second) << "</text>\n";
    }
    out << "</svg>\n";
}

void write_loss_curve_svg(const std::string& path, const train::LossCurve& curve,
                          const std::string& title) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const int width = 720, height = 360, margin = 50;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\">\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << title << "</text>\n";
    if (curve.rows.empty() || curve.columns.size() < 2) {
        out << "</svg>\n";
        return;
    }
    double maxv = 1e-12, minv = 0.0;
    for (const auto& row : curve.rows)
        for (std::size_t c = 1; c < row.size(); ++c) maxv = std::max(maxv, row[c]);
    const char* colors[] = {"#4878a8", "#a85048", "#48a878", "#a8a030", "#7848a8"};
    const double n = static_cast<double>(curve.rows.size());
    for (std::size_t c = 1; c < curve.columns.size(); ++c) {
        out << "<polyline fill=\"none\" stroke=\"" << colors[(c - 1) % 5] << "\" points=\"";
        for (std::size_t i = 0; i < curve.rows.size(); ++i) {
            const double x = margin + (width - 2.0 * margin) * (n > 1 ? i / (n - 1) : 0.5);
            const double y = height - margin -
                             (height - 2.0 * margin) * (curve.rows[i][c] - minv) / (maxv - minv);
            out << fmt(x) << ',' << fmt(y) << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << width - margin + 2 << "\" y=\"" << 40 + 14 * c
            << "\" font-size=\"10\" fill=\"" << colors[(c - 1) % 5] << "\">" << curve.columns[c]
            << "</text>\n";
    }
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    out << "</svg>\n";
}

}  // namespace l3::harness
