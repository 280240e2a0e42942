// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Branched encoder trees. A tree over D sharable locations is a refinement
// chain of task partitions pi_1 >= ... >= pi_D: tasks in the same block of
// pi_d share the layer at location d. A decoder per task hangs off the leaves.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "branchplan/datamodel.hpp"
#include "branchplan/rsa.hpp"

namespace branchplan {

/// A set partition of tasks 0..N-1 in canonical form. Blocks are numbered in
/// order of their smallest member, so the label vector is a restricted growth
/// string and two equal partitions always compare equal.
class Partition {
public:
    using Label = std::uint16_t;

    Partition() = default;

    /// Canonicalizes arbitrary block labels (any integer per task).
    static Partition from_labels(std::span<const int> labels);
    /// Throws unless the blocks are disjoint, non-empty and cover 0..n-1.
    static Partition from_blocks(const std::vector<std::vector<std::size_t>>& blocks, std::size_t n);
    static Partition single_block(std::size_t n);
    static Partition singletons(std::size_t n);

    std::size_t num_tasks() const { return labels_.size(); }
    std::size_t num_blocks() const { return num_blocks_; }
    const std::vector<Label>& labels() const { return labels_; }
    Label block_of(std::size_t task) const { return labels_[task]; }

    /// Blocks sorted by smallest member, members ascending.
    std::vector<std::vector<std::size_t>> blocks() const;

    /// True if every block of *this is contained in a block of `coarser`.
    bool refines(const Partition& coarser) const;

    /// Relabels tasks: task t of *this becomes task perm[t].
    Partition permuted(std::span<const std::size_t> perm) const;

    friend bool operator==(const Partition& a, const Partition& b) { return a.labels_ == b.labels_; }
    friend std::strong_ordering operator<=>(const Partition& a, const Partition& b) {
        return a.labels_ <=> b.labels_;
    }

private:
    std::vector<Label> labels_;
    std::size_t num_blocks_ = 0;
};

struct BranchTree {
    std::vector<Partition> chain;  // chain[d] = grouping at location d

    std::size_t depths() const { return chain.size(); }
    std::vector<std::size_t> branch_counts() const;

    friend bool operator==(const BranchTree&, const BranchTree&) = default;
    /// Canonical order: lexicographic over the chain, shallowest depth first.
    friend auto operator<=>(const BranchTree& a, const BranchTree& b) { return a.chain <=> b.chain; }
};

struct BudgetConfig {
    std::uint64_t budget = 0;  // parameter count C
    bool include_decoders = true;
};

struct CostBreakdown {
    std::vector<double> per_depth;
    double total = 0.0;
};

/// Sum over depths of b_d * layer_params_d, plus decoder parameters if enabled.
std::uint64_t param_count(const BranchTree& tree, const Manifest& manifest, const BudgetConfig& cfg);
std::uint64_t param_count(std::span<const std::size_t> branch_counts, const Manifest& manifest,
                          const BudgetConfig& cfg);

/// Mean over blocks of the largest pairwise dissimilarity inside the block
/// (complete linkage). Singleton blocks contribute 0.
double cluster_cost_at_depth(const Partition& partition, SquareView dis);

CostBreakdown tree_cost(const BranchTree& tree, const DissimilarityTensor& dis);

/// Tie-break used by every search: lower cost, then fewer parameters, then
/// canonical chain order.
bool ranks_before(double cost_a, std::uint64_t params_a, const BranchTree& a, double cost_b, std::uint64_t params_b,
                  const BranchTree& b);

/// Checks chain length, task coverage, refinement and the branchable mask.
void validate_tree(const BranchTree& tree, const Manifest& manifest);

/// Fully shared tree respecting nothing but the chain length.
BranchTree fully_shared_tree(std::size_t n_tasks, std::size_t depths);
/// Tree with the most branches the branchable mask allows.
BranchTree fully_split_tree(const Manifest& manifest);

nlohmann::json tree_to_json(const BranchTree& tree, const Manifest& manifest, const BudgetConfig& cfg,
                            const CostBreakdown& cost);
/// Parses the "chain" of a tree document; rejects unknown task names and
/// blocks that are not written in canonical order.
BranchTree tree_from_json(const nlohmann::json& doc, const Manifest& manifest);

}  // namespace branchplan
