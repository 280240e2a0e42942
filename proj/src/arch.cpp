// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/arch.hpp"

#include <algorithm>
#include <map>

#include <fmt/core.h>

#include "branchplan/error.hpp"

using nlohmann::json;

namespace branchplan {
namespace {

constexpr const char* kModule = "arch";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

}  // namespace

Partition Partition::from_labels(std::span<const int> labels) {
    Partition p;
    p.labels_.resize(labels.size());
    std::map<int, Label> remap;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        auto [it, inserted] = remap.try_emplace(labels[t], static_cast<Label>(remap.size()));
        p.labels_[t] = it->second;
    }
    p.num_blocks_ = remap.size();
    return p;
}

Partition Partition::from_blocks(const std::vector<std::vector<std::size_t>>& blocks, std::size_t n) {
    std::vector<int> labels(n, -1);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].empty()) fail("partition has an empty block");
        for (std::size_t t : blocks[b]) {
            if (t >= n) fail(fmt::format("partition references task {} but only {} tasks exist", t, n));
            if (labels[t] != -1) fail(fmt::format("task {} appears in more than one block", t));
            labels[t] = static_cast<int>(b);
        }
    }
    for (std::size_t t = 0; t < n; ++t)
        if (labels[t] == -1) fail(fmt::format("task {} is not covered by the partition", t));
    return from_labels(labels);
}

Partition Partition::single_block(std::size_t n) {
    Partition p;
    p.labels_.assign(n, 0);
    p.num_blocks_ = n ? 1 : 0;
    return p;
}

Partition Partition::singletons(std::size_t n) {
    Partition p;
    p.labels_.resize(n);
    for (std::size_t t = 0; t < n; ++t) p.labels_[t] = static_cast<Label>(t);
    p.num_blocks_ = n;
    return p;
}

std::vector<std::vector<std::size_t>> Partition::blocks() const {
    std::vector<std::vector<std::size_t>> out(num_blocks_);
    for (std::size_t t = 0; t < labels_.size(); ++t) out[labels_[t]].push_back(t);
    return out;
}

bool Partition::refines(const Partition& coarser) const {
    if (coarser.num_tasks() != num_tasks()) return false;
    std::vector<int> parent(num_blocks_, -1);
    for (std::size_t t = 0; t < labels_.size(); ++t) {
        int& p = parent[labels_[t]];
        if (p == -1)
            p = coarser.labels_[t];
        else if (p != coarser.labels_[t])
            return false;
    }
    return true;
}

Partition Partition::permuted(std::span<const std::size_t> perm) const {
    std::vector<int> labels(labels_.size());
    for (std::size_t t = 0; t < labels_.size(); ++t) labels[perm[t]] = labels_[t];
    return from_labels(labels);
}

std::vector<std::size_t> BranchTree::branch_counts() const {
    std::vector<std::size_t> b;
    b.reserve(chain.size());
    for (const auto& p : chain) b.push_back(p.num_blocks());
    return b;
}

std::uint64_t param_count(std::span<const std::size_t> branch_counts, const Manifest& manifest,
                          const BudgetConfig& cfg) {
    if (branch_counts.size() != manifest.num_locations())
        fail(fmt::format("tree has {} depths but the manifest has {} locations", branch_counts.size(),
                         manifest.num_locations()));
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < branch_counts.size(); ++d) total += branch_counts[d] * manifest.locations[d].layer_params;
    if (cfg.include_decoders) total += manifest.total_decoder_params();
    return total;
}

std::uint64_t param_count(const BranchTree& tree, const Manifest& manifest, const BudgetConfig& cfg) {
    const auto b = tree.branch_counts();
    return param_count(b, manifest, cfg);
}

double cluster_cost_at_depth(const Partition& partition, SquareView dis) {
    const std::size_t n = partition.num_tasks();
    if (partition.num_blocks() == 0) return 0.0;
    std::vector<double> worst(partition.num_blocks(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (partition.block_of(i) == partition.block_of(j)) {
                double& w = worst[partition.block_of(i)];
                w = std::max(w, dis(i, j));
            }
    double sum = 0.0;
    for (double w : worst) sum += w;
    return sum / static_cast<double>(partition.num_blocks());
}

CostBreakdown tree_cost(const BranchTree& tree, const DissimilarityTensor& dis) {
    if (tree.depths() != dis.depths())
        fail(fmt::format("tree has {} depths but the dissimilarity tensor has {}", tree.depths(), dis.depths()));
    CostBreakdown cost;
    for (std::size_t d = 0; d < tree.depths(); ++d) {
        if (tree.chain[d].num_tasks() != dis.tasks())
            fail(fmt::format("partition at depth {} covers {} tasks, dissimilarity has {}", d,
                             tree.chain[d].num_tasks(), dis.tasks()));
        cost.per_depth.push_back(cluster_cost_at_depth(tree.chain[d], dis.slice(d)));
        cost.total += cost.per_depth.back();
    }
    return cost;
}

bool ranks_before(double cost_a, std::uint64_t params_a, const BranchTree& a, double cost_b, std::uint64_t params_b,
                  const BranchTree& b) {
    if (cost_a != cost_b) return cost_a < cost_b;
    if (params_a != params_b) return params_a < params_b;
    return a < b;
}

void validate_tree(const BranchTree& tree, const Manifest& manifest) {
    const std::size_t n = manifest.num_tasks();
    if (tree.depths() != manifest.num_locations())
        fail(fmt::format("chain length {} does not match {} locations", tree.depths(), manifest.num_locations()));
    Partition previous = Partition::single_block(n);
    for (std::size_t d = 0; d < tree.depths(); ++d) {
        const Partition& p = tree.chain[d];
        if (p.num_tasks() != n)
            fail(fmt::format("partition at depth {} covers {} tasks, expected {}", d, p.num_tasks(), n));
        if (!p.refines(previous))
            fail(fmt::format("refinement violation: partition at depth {} merges blocks of depth {}", d, d - 1));
        if (!manifest.locations[d].branchable && !(p == previous))
            fail(fmt::format("mask violation: location '{}' is not branchable but the tree splits there",
                             manifest.locations[d].name));
        previous = p;
    }
}

BranchTree fully_shared_tree(std::size_t n_tasks, std::size_t depths) {
    return BranchTree{std::vector<Partition>(depths, Partition::single_block(n_tasks))};
}

BranchTree fully_split_tree(const Manifest& manifest) {
    BranchTree tree;
    Partition current = Partition::single_block(manifest.num_tasks());
    for (const auto& loc : manifest.locations) {
        if (loc.branchable) current = Partition::singletons(manifest.num_tasks());
        tree.chain.push_back(current);
    }
    return tree;
}

json tree_to_json(const BranchTree& tree, const Manifest& manifest, const BudgetConfig& cfg,
                  const CostBreakdown& cost) {
    json doc;
    doc["depths"] = tree.depths();
    doc["tasks"] = json::array();
    for (const auto& t : manifest.tasks) doc["tasks"].push_back(t.name);
    doc["chain"] = json::array();
    for (const auto& p : tree.chain) {
        json blocks = json::array();
        for (const auto& block : p.blocks()) {
            json names = json::array();
            for (std::size_t t : block) names.push_back(manifest.tasks[t].name);
            blocks.push_back(std::move(names));
        }
        doc["chain"].push_back(std::move(blocks));
    }
    const auto b = tree.branch_counts();
    doc["branch_counts"] = b;
    json per_depth = json::array();
    for (std::size_t d = 0; d < b.size(); ++d) per_depth.push_back(b[d] * manifest.locations[d].layer_params);
    const std::uint64_t decoders = cfg.include_decoders ? manifest.total_decoder_params() : 0;
    doc["params"] = {{"per_depth", per_depth}, {"decoders", decoders}, {"total", param_count(b, manifest, cfg)}};
    doc["cost"] = {{"per_depth", cost.per_depth}, {"total", cost.total}};
    return doc;
}

BranchTree tree_from_json(const json& doc, const Manifest& manifest) {
    const std::size_t n = manifest.num_tasks();
    if (!doc.is_object() || !doc.contains("chain") || !doc.at("chain").is_array())
        fail("tree document has no 'chain' array");
    BranchTree tree;
    for (const auto& level : doc.at("chain")) {
        std::vector<std::vector<std::size_t>> blocks;
        try {
            for (const auto& names : level) {
                std::vector<std::size_t> block;
                for (const auto& name : names) {
                    const auto idx = manifest.find_task(name.get<std::string>());
                    if (!idx) fail(fmt::format("tree references unknown task '{}'", name.get<std::string>()));
                    block.push_back(*idx);
                }
                blocks.push_back(std::move(block));
            }
        } catch (const json::exception&) {
            fail("tree chain entries must be arrays of task-name arrays");
        }
        Partition p = Partition::from_blocks(blocks, n);
        if (p.blocks() != blocks)
            fail(fmt::format("non-canonical partition at depth {}: blocks must be ordered by smallest member",
                             tree.chain.size()));
        tree.chain.push_back(std::move(p));
    }
    return tree;
}

}  // namespace branchplan
