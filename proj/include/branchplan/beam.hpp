// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Top-down beam search for task counts too large to enumerate. The tree is
// built from the deepest location towards the input: each step coarsens the
// grouping of the step before, either through spectral clustering for every
// group count m or by listing all coarsenings.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "branchplan/arch.hpp"
#include "branchplan/search.hpp"

namespace branchplan {

enum class CandidateMode { spectral, exhaustive_coarsening };

struct BeamConfig {
    std::size_t width = 10;
    CandidateMode candidate_mode = CandidateMode::spectral;
    std::uint64_t seed = 0;
    bool clip_negative_affinity = true;
    unsigned threads = 0;
};

struct BeamEntry {
    std::vector<Partition> partial;  // groupings for depths [depth, D)
    double partial_cost = 0.0;
    std::uint64_t params_lower_bound = 0;
};

struct BeamState {
    std::size_t depth = 0;
    std::vector<BeamEntry> retained;
};

struct BeamTrace {
    std::vector<BeamState> steps;  // deepest location first
};

/// Normalized-Laplacian spectral clustering of M items into exactly m groups.
/// Items with zero similarity to everything are split off as singletons
/// before the embedding; k-means uses farthest-first seeding from `seed`.
Partition spectral_cluster(SquareView similarity, std::size_t m, std::uint64_t seed);

/// Coarsenings of `p` (blocks merged, never split) proposed as the grouping
/// one location shallower. `affinity` is the task-level slice at that location.
std::vector<Partition> coarsen_candidates(const Partition& p, SquareView affinity, const BeamConfig& cfg);

SearchResult search_beam(const AffinityTensor& affinity, const DissimilarityTensor& dis, const Manifest& manifest,
                         const BudgetConfig& budget, const BeamConfig& cfg, BeamTrace* trace = nullptr);

nlohmann::json trace_to_json(const BeamTrace& trace, const Manifest& manifest);

}  // namespace branchplan
