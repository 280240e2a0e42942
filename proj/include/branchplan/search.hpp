// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive search over budget-feasible branch trees.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "branchplan/arch.hpp"
#include "branchplan/datamodel.hpp"
#include "branchplan/rsa.hpp"

namespace branchplan {

/// Every set partition of n items, in lexicographic order of their labels.
std::vector<Partition> all_partitions(std::size_t n);

/// Every partition that refines `p` (including `p`), sorted canonically.
std::vector<Partition> refinements(const Partition& p);

struct EnumerationOptions {
    std::size_t max_tasks = 8;
    unsigned threads = 0;  // 0 = default_thread_count()
};

/// Memoizing generator of the partitions allowed at each depth of a chain.
class ChainEnumerator {
public:
    explicit ChainEnumerator(const Manifest& manifest);

    /// Partitions allowed at depth d when depth d-1 holds `previous`.
    const std::vector<Partition>& candidates(std::size_t depth, const Partition& previous);

    /// Number of complete chains for depths [depth, D) below `previous`.
    std::uint64_t completions(std::size_t depth, const Partition& previous);

private:
    const Manifest* manifest_;
    std::map<std::vector<Partition::Label>, std::vector<Partition>> refinements_;
    std::map<std::pair<std::size_t, std::vector<Partition::Label>>, std::uint64_t> counts_;
    std::map<std::vector<Partition::Label>, std::vector<Partition>> unchanged_;
};

/// Streams every refinement chain allowed by the branchable mask exactly
/// once, in canonical order. Throws above the enumeration cap.
void enumerate_chains(const Manifest& manifest, const EnumerationOptions& opts,
                      const std::function<void(const BranchTree&)>& visit);

std::uint64_t count_chains(const Manifest& manifest, const EnumerationOptions& opts = {});

/// Parameter count of the cheapest tree the mask allows (one branch everywhere).
std::uint64_t min_feasible_params(const Manifest& manifest, const BudgetConfig& cfg);

struct SearchResult {
    BranchTree best;
    CostBreakdown cost;
    std::uint64_t params = 0;
    std::uint64_t num_enumerated = 0;  // chains scored or cut by the budget bound
    std::uint64_t num_feasible = 0;
};

/// Minimum-cost feasible tree. Prefix chains whose parameter lower bound
/// already exceeds the budget are cut; the bound is exact for the cheapest
/// completion, so no feasible chain is ever lost.
SearchResult search_exhaustive(const DissimilarityTensor& dis, const Manifest& manifest, const BudgetConfig& cfg,
                               const EnumerationOptions& opts = {});

struct ParetoPoint {
    std::uint64_t params = 0;
    double cost = 0.0;
    BranchTree tree;
};

/// Non-dominated (params, cost) points over all chains, sorted by params with
/// strictly decreasing cost.
std::vector<ParetoPoint> pareto_sweep(const DissimilarityTensor& dis, const Manifest& manifest,
                                      bool include_decoders = true, const EnumerationOptions& opts = {});

}  // namespace branchplan
