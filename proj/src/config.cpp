#include "l3/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "l3/sha256.hpp"

namespace l3 {
namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

int parse_int(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) fail(line, "expected integer, got '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        fail(line, "expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) fail(line, "expected number, got '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        fail(line, "expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v, int line) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    fail(line, "expected on/off, got '" + v + "'");
}

std::string direction_string(const ExperimentConfig& c) {
    return std::string(synth::domain_name(c.source_domain)) + "->" +
           synth::domain_name(c.target_domain);
}

void parse_direction(ExperimentConfig& c, const std::string& v, int line) {
    const auto arrow = v.find("->");
    if (arrow == std::string::npos) fail(line, "direction must look like 'flat->textured'");
    const std::string a = trim(v.substr(0, arrow));
    const std::string b = trim(v.substr(arrow + 2));
    auto dom = [&](const std::string& s) {
        if (s == "flat") return synth::Domain::Flat;
        if (s == "textured") return synth::Domain::Textured;
        fail(line, "unknown domain '" + s + "'");
    };
    c.source_domain = dom(a);
    c.target_domain = dom(b);
    if (c.source_domain == c.target_domain) fail(line, "source and target domain must differ");
}

std::string seeds_string(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(seeds[i]);
    }
    return out;
}

void parse_seeds(ExperimentConfig& c, const std::string& v, int line) {
    c.seeds.clear();
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) fail(line, "empty seed entry");
        try {
            c.seeds.push_back(std::stoull(part));
        } catch (...) {
            fail(line, "expected seed integer, got '" + part + "'");
        }
    }
    if (c.seeds.empty()) fail(line, "seed list is empty");
}

}  // namespace

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    require(source_pairs >= 1, "data.source_pairs must be >= 1");
    require(target_images >= 1, "data.target_images must be >= 1");
    require(eval_samples >= 1, "data.eval_samples must be >= 1");
    require(source_domain != target_domain, "direction must use two distinct domains");
    require(k >= 1 && k <= synth::kFactorCount, "train.k must be in [1,6]");
    require(k < dims.z_dim, "train.k must be smaller than arch.z_dim");
    require(batch >= 1, "train.batch must be >= 1");
    require(epochs_source >= 0 && epochs_target >= 0, "epochs must be >= 0");
    require(lr_source >= 0 && lr_target >= 0, "learning rates must be >= 0");
    require(beta_kl >= 0 && beta_ut >= 0, "beta values must be >= 0");
    require(fvae_votes >= 1 && fvae_batch >= 2, "eval.fvae_votes/fvae_batch too small");
    require(fvae_std_samples >= 16, "eval.fvae_std_samples must be >= 16");
    require(mi_bins >= 2, "eval.mi_bins must be >= 2");
    require(dci_trees >= 1 && dci_depth >= 1, "eval.dci_trees/dci_depth must be >= 1");
    dims.validate();
}

std::string ExperimentConfig::echo() const {
    std::ostringstream out;
    out << "data.source_pairs = " << source_pairs << "\n";
    out << "data.target_images = " << target_images << "\n";
    out << "data.eval_samples = " << eval_samples << "\n";
    out << "data.direction = " << direction_string(*this) << "\n";
    out << "train.k = " << k << "\n";
    out << "train.batch = " << batch << "\n";
    out << "train.epochs_source = " << epochs_source << "\n";
    out << "train.epochs_target = " << epochs_target << "\n";
    out << "train.lr_source = " << fmt_double(lr_source) << "\n";
    out << "train.lr_target = " << fmt_double(lr_target) << "\n";
    out << "train.beta_kl = " << fmt_double(beta_kl) << "\n";
    out << "train.beta_ut = " << fmt_double(beta_ut) << "\n";
    out << "loss.look_seg = " << fmt_double(weights.look_seg) << "\n";
    out << "loss.look_vis = " << fmt_double(weights.look_vis) << "\n";
    out << "loss.look_mp = " << fmt_double(weights.look_mp) << "\n";
    out << "loss.task = " << fmt_double(weights.task) << "\n";
    out << "loss.cross_seg = " << fmt_double(weights.cross_seg) << "\n";
    out << "loss.cross_vis = " << fmt_double(weights.cross_vis) << "\n";
    out << "loss.lev_align = " << fmt_double(weights.lev_align) << "\n";
    out << "loss.lev_rec = " << fmt_double(weights.lev_rec) << "\n";
    out << "loss.lev_zkl = " << fmt_double(weights.lev_zkl) << "\n";
    out << "arch.mask_channels = " << dims.mask_channels << "\n";
    out << "arch.feat_hw = " << dims.feat_hw << "\n";
    out << "arch.z_dim = " << dims.z_dim << "\n";
    out << "arch.vae_hidden = " << dims.vae_hidden << "\n";
    out << "arch.mp_hidden = " << dims.mp_hidden << "\n";
    out << "arch.conv_width = " << dims.conv_width << "\n";
    out << "variant = " << variant_name(variant) << "\n";
    out << "leverage.z_align = " << (z_align ? "on" : "off") << "\n";
    out << "seeds = " << seeds_string(seeds) << "\n";
    out << "eval.fvae_votes = " << fvae_votes << "\n";
    out << "eval.fvae_batch = " << fvae_batch << "\n";
    out << "eval.fvae_std_samples = " << fvae_std_samples << "\n";
    out << "eval.mi_bins = " << mi_bins << "\n";
    out << "eval.dci_trees = " << dci_trees << "\n";
    out << "eval.dci_depth = " << dci_depth << "\n";
    return out.str();
}

std::string ExperimentConfig::sha() const { return sha256_hex(echo()); }

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream lines(text);
    std::string raw;
    int line_no = 0;
    using Setter = std::function<void(ExperimentConfig&, const std::string&, int)>;
    static const std::map<std::string, Setter> setters = {
        {"data.source_pairs", [](auto& c, const auto& v, int l) { c.source_pairs = parse_int(v, l); }},
        {"data.target_images", [](auto& c, const auto& v, int l) { c.target_images = parse_int(v, l); }},
        {"data.eval_samples", [](auto& c, const auto& v, int l) { c.eval_samples = parse_int(v, l); }},
        {"data.direction", [](auto& c, const auto& v, int l) { parse_direction(c, v, l); }},
        {"train.k",
         [](auto& c, const auto& v, int l) {
             c.k = parse_int(v, l);
             if (c.k < 1 || c.k > synth::kFactorCount) fail(l, "train.k must be in [1,6]");
         }},
        {"train.batch", [](auto& c, const auto& v, int l) { c.batch = parse_int(v, l); }},
        {"train.epochs_source", [](auto& c, const auto& v, int l) { c.epochs_source = parse_int(v, l); }},
        {"train.epochs_target", [](auto& c, const auto& v, int l) { c.epochs_target = parse_int(v, l); }},
        {"train.lr_source", [](auto& c, const auto& v, int l) { c.lr_source = parse_double(v, l); }},
        {"train.lr_target", [](auto& c, const auto& v, int l) { c.lr_target = parse_double(v, l); }},
        {"train.beta_kl", [](auto& c, const auto& v, int l) { c.beta_kl = parse_double(v, l); }},
        {"train.beta_ut", [](auto& c, const auto& v, int l) { c.beta_ut = parse_double(v, l); }},
        {"loss.look_seg", [](auto& c, const auto& v, int l) { c.weights.look_seg = parse_double(v, l); }},
        {"loss.look_vis", [](auto& c, const auto& v, int l) { c.weights.look_vis = parse_double(v, l); }},
        {"loss.look_mp", [](auto& c, const auto& v, int l) { c.weights.look_mp = parse_double(v, l); }},
        {"loss.task", [](auto& c, const auto& v, int l) { c.weights.task = parse_double(v, l); }},
        {"loss.cross_seg", [](auto& c, const auto& v, int l) { c.weights.cross_seg = parse_double(v, l); }},
        {"loss.cross_vis", [](auto& c, const auto& v, int l) { c.weights.cross_vis = parse_double(v, l); }},
        {"loss.lev_align", [](auto& c, const auto& v, int l) { c.weights.lev_align = parse_double(v, l); }},
        {"loss.lev_rec", [](auto& c, const auto& v, int l) { c.weights.lev_rec = parse_double(v, l); }},
        {"loss.lev_zkl", [](auto& c, const auto& v, int l) { c.weights.lev_zkl = parse_double(v, l); }},
        {"arch.mask_channels", [](auto& c, const auto& v, int l) { c.dims.mask_channels = parse_int(v, l); }},
        {"arch.feat_hw", [](auto& c, const auto& v, int l) { c.dims.feat_hw = parse_int(v, l); }},
        {"arch.z_dim", [](auto& c, const auto& v, int l) { c.dims.z_dim = parse_int(v, l); }},
        {"arch.vae_hidden", [](auto& c, const auto& v, int l) { c.dims.vae_hidden = parse_int(v, l); }},
        {"arch.mp_hidden", [](auto& c, const auto& v, int l) { c.dims.mp_hidden = parse_int(v, l); }},
        {"arch.conv_width", [](auto& c, const auto& v, int l) { c.dims.conv_width = parse_int(v, l); }},
        {"variant",
         [](auto& c, const auto& v, int l) {
             try {
                 c.variant = variant_from_name(v);
             } catch (const std::exception& e) {
                 fail(l, e.what());
             }
         }},
        {"leverage.z_align", [](auto& c, const auto& v, int l) { c.z_align = parse_bool(v, l); }},
        {"seeds", [](auto& c, const auto& v, int l) { parse_seeds(c, v, l); }},
        {"eval.fvae_votes", [](auto& c, const auto& v, int l) { c.fvae_votes = parse_int(v, l); }},
        {"eval.fvae_batch", [](auto& c, const auto& v, int l) { c.fvae_batch = parse_int(v, l); }},
        {"eval.fvae_std_samples", [](auto& c, const auto& v, int l) { c.fvae_std_samples = parse_int(v, l); }},
        {"eval.mi_bins", [](auto& c, const auto& v, int l) { c.mi_bins = parse_int(v, l); }},
        {"eval.dci_trees", [](auto& c, const auto& v, int l) { c.dci_trees = parse_int(v, l); }},
        {"eval.dci_depth", [](auto& c, const auto& v, int l) { c.dci_depth = parse_int(v, l); }},
    };

    while (std::getline(lines, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) fail(line_no, "unknown key '" + key + "'");
        if (value.empty()) fail(line_no, "empty value for '" + key + "'");
        it->second(cfg, value, line_no);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace l3
