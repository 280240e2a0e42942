// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Test fixtures: scratch directories, on-disk datasets and random instances.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "branchplan/arch.hpp"
#include "branchplan/datamodel.hpp"
#include "branchplan/rsa.hpp"
#include "oracles.hpp"

namespace fixtures {

namespace fs = std::filesystem;
using namespace branchplan;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() / fmt::format("branchplan-test-{}-{}", rd(), counter++);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// features[t][d] is a row-major K x F block.
using FeatureSet = std::vector<std::vector<std::vector<double>>>;

inline std::vector<LocationSpec> locations(const std::vector<std::size_t>& feature_dims,
                                           const std::vector<std::uint64_t>& layer_params,
                                           std::vector<bool> branchable = {}) {
    if (branchable.empty()) {
        branchable.assign(feature_dims.size(), true);
        branchable[0] = false;
    }
    std::vector<LocationSpec> out;
    for (std::size_t d = 0; d < feature_dims.size(); ++d)
        out.push_back({d, fmt::format("block{}", d + 1), feature_dims[d], layer_params[d], branchable[d]});
    return out;
}

inline std::vector<std::string> task_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t t = 0; t < n; ++t) out.push_back(fmt::format("task{}", t));
    return out;
}

/// Writes manifest.json and every feature file, then reloads the manifest.
inline Manifest write_dataset(const fs::path& dir, std::vector<std::string> names, std::vector<LocationSpec> locs,
                              std::vector<std::uint64_t> decoders, std::size_t images, const FeatureSet& features) {
    Manifest m = make_manifest(std::move(names), std::move(locs), std::move(decoders), images);
    m.root = dir;
    save_manifest(m, dir);
    for (std::size_t t = 0; t < m.num_tasks(); ++t)
        for (std::size_t d = 0; d < m.num_locations(); ++d) {
            const auto& src = features[t][d];
            std::vector<float> values(src.begin(), src.end());
            fs::create_directories(m.feature_path(t, d).parent_path());
            write_f32_file(m.feature_path(t, d), values);
        }
    return load_manifest(dir);
}

inline FeatureSet random_features(std::size_t tasks, const std::vector<std::size_t>& dims, std::size_t images,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    FeatureSet out(tasks);
    for (auto& per_task : out)
        for (std::size_t f : dims) {
            std::vector<double> block(images * f);
            for (double& v : block) v = normal(rng);
            per_task.push_back(std::move(block));
        }
    return out;
}

/// Tasks in latent groups. At depth d each task sees
///   common_weight[d] * C_d + G_{group, d} + noise[d] * E_{task, d}
/// with standard normal components, so tasks agree less as depth grows and
/// tasks of one group agree more than tasks of different groups.
struct SyntheticConfig {
    std::vector<std::size_t> groups{0, 0, 1, 1};
    std::size_t images = 40;
    std::size_t features = 32;
    std::vector<double> common_weight{1.5, 1.0, 0.5, 0.0};
    std::vector<double> noise{0.05, 0.15, 0.3, 0.6};
};

inline FeatureSet synthetic_features(const SyntheticConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const std::size_t depths = cfg.noise.size();
    const std::size_t cells = cfg.images * cfg.features;
    std::size_t num_groups = 0;
    for (std::size_t g : cfg.groups) num_groups = std::max(num_groups, g + 1);
    auto draw = [&] {
        std::vector<double> v(cells);
        for (double& x : v) x = normal(rng);
        return v;
    };
    FeatureSet out(cfg.groups.size(), std::vector<std::vector<double>>(depths));
    for (std::size_t d = 0; d < depths; ++d) {
        const auto common = draw();
        std::vector<std::vector<double>> group(num_groups);
        for (auto& g : group) g = draw();
        for (std::size_t t = 0; t < cfg.groups.size(); ++t) {
            const auto own = draw();
            auto& block = out[t][d];
            block.resize(cells);
            for (std::size_t c = 0; c < cells; ++c)
                block[c] = cfg.common_weight[d] * common[c] + group[cfg.groups[t]][c] + cfg.noise[d] * own[c];
        }
    }
    return out;
}

/// Random symmetric dissimilarity slices with zero diagonal, entries in [0, 2].
inline DissimilarityTensor random_dissimilarity(std::size_t depths, std::size_t tasks, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 2.0);
    DissimilarityTensor dis(depths, tasks);
    for (std::size_t d = 0; d < depths; ++d)
        for (std::size_t i = 0; i < tasks; ++i)
            for (std::size_t j = i + 1; j < tasks; ++j) dis(d, i, j) = dis(d, j, i) = u(rng);
    return dis;
}

inline AffinityTensor affinity_of(const DissimilarityTensor& dis) {
    AffinityTensor a(dis.depths(), dis.tasks());
    for (std::size_t d = 0; d < dis.depths(); ++d)
        for (std::size_t i = 0; i < dis.tasks(); ++i)
            for (std::size_t j = 0; j < dis.tasks(); ++j) a(d, i, j) = 1.0 - dis(d, i, j);
    return a;
}

inline std::vector<std::vector<std::vector<double>>> nested(const TaskTensor& t) {
    std::vector<std::vector<std::vector<double>>> out(t.depths(),
                                                      std::vector<std::vector<double>>(t.tasks(), std::vector<double>(t.tasks())));
    for (std::size_t d = 0; d < t.depths(); ++d)
        for (std::size_t i = 0; i < t.tasks(); ++i)
            for (std::size_t j = 0; j < t.tasks(); ++j) out[d][i][j] = t(d, i, j);
    return out;
}

inline oracle::Chain to_oracle(const BranchTree& tree) {
    oracle::Chain out;
    for (const auto& p : tree.chain) out.emplace_back(p.labels().begin(), p.labels().end());
    return out;
}

/// A random search instance: dissimilarities, positive layer sizes, decoder
/// sizes and a random mask.
struct SearchInstance {
    Manifest manifest;
    DissimilarityTensor dis;
    std::vector<bool> mask;
    std::vector<std::uint64_t> layer_params;
    std::vector<std::uint64_t> decoders;
};

inline SearchInstance random_instance(std::size_t tasks, std::size_t depths, std::mt19937_64& rng) {
    SearchInstance inst;
    std::uniform_int_distribution<std::uint64_t> layer(1, 50), decoder(0, 20);
    std::bernoulli_distribution branch(0.8);
    for (std::size_t d = 0; d < depths; ++d) {
        inst.layer_params.push_back(layer(rng));
        inst.mask.push_back(branch(rng));
    }
    for (std::size_t t = 0; t < tasks; ++t) inst.decoders.push_back(decoder(rng));
    inst.manifest = make_manifest(task_names(tasks),
                                  locations(std::vector<std::size_t>(depths, 1), inst.layer_params, inst.mask),
                                  inst.decoders, 3);
    inst.dis = random_dissimilarity(depths, tasks, rng);
    return inst;
}

}  // namespace fixtures
