#include "l3/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "l3/sha256.hpp"

namespace l3 {
namespace {

std::vector<int> parse_shape(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) out.push_back(std::stoi(part));
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& store, const std::string& base,
                     const CheckpointMeta& meta) {
    std::ostringstream manifest;
    manifest << "seed=" << meta.seed << "\n";
    manifest << "config_sha=" << meta.config_sha << "\n";
    if (!meta.stage.empty()) manifest << "stage=" << meta.stage << "\n";
    if (!meta.source_sha.empty()) manifest << "source_sha=" << meta.source_sha << "\n";
    for (std::size_t i = 0; i < store.entry_count(); ++i) {
        const auto& e = store.entry(i);
        manifest << e.name << ' ' << shape_to_string(e.shape) << ' ' << e.offset << "\n";
    }
    {
        std::ofstream mf(base + ".manifest", std::ios::binary);
        if (!mf) throw CheckpointError("cannot write " + base + ".manifest");
        mf << manifest.str();
    }
    {
        std::ofstream bf(base + ".bin", std::ios::binary);
        if (!bf) throw CheckpointError("cannot write " + base + ".bin");
        bf.write(reinterpret_cast<const char*>(store.flat().data()),
                 static_cast<std::streamsize>(store.total_size() * sizeof(float)));
    }
}

ParameterStore<float> load_checkpoint(const std::string& base, CheckpointMeta* meta_out,
                                      std::vector<std::string>* warnings,
                                      const std::optional<std::string>& expected_config_sha) {
    const std::string manifest = read_file(base + ".manifest");
    CheckpointMeta meta;
    ParameterStore<float> store;
    std::size_t expected_offset = 0;

    std::stringstream lines(manifest);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        if (line.rfind("seed=", 0) == 0) {
            meta.seed = std::stoull(line.substr(5));
        } else if (line.rfind("config_sha=", 0) == 0) {
            meta.config_sha = line.substr(11);
        } else if (line.rfind("stage=", 0) == 0) {
            meta.stage = line.substr(6);
        } else if (line.rfind("source_sha=", 0) == 0) {
            meta.source_sha = line.substr(11);
        } else {
            std::stringstream ls(line);
            std::string name, shape_str;
            std::size_t offset = 0;
            if (!(ls >> name >> shape_str >> offset))
                throw CheckpointError("malformed manifest line: " + line);
            if (offset != expected_offset)
                throw CheckpointError("manifest offsets not contiguous at " + name);
            store.add(name, parse_shape(shape_str), true);
            expected_offset = store.total_size();
        }
    }

    const std::string payload = read_file(base + ".bin");
    if (payload.size() != store.total_size() * sizeof(float))
        throw CheckpointError("payload length mismatch: manifest expects " +
                              std::to_string(store.total_size() * sizeof(float)) + " bytes, file has " +
                              std::to_string(payload.size()));
    std::memcpy(store.flat().data(), payload.data(), payload.size());

    if (expected_config_sha && *expected_config_sha != meta.config_sha && warnings)
        warnings->push_back("checkpoint config hash " + meta.config_sha +
                            " differs from current config " + *expected_config_sha);
    if (meta_out) *meta_out = meta;
    return store;
}

std::string checkpoint_payload_sha(const std::string& base) {
    const std::string payload = read_file(base + ".bin");
    return sha256_hex(payload);
}

}  // namespace l3
