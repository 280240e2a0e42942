// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>
#include <fmt/core.h>

#include "branchplan/error.hpp"
#include "branchplan/parallel.hpp"

using nlohmann::json;

namespace branchplan {
namespace {

constexpr const char* kModule = "beam";
constexpr int kMaxKmeansIterations = 100;

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

double squared_distance(const Eigen::MatrixXd& x, Eigen::Index row, const Eigen::RowVectorXd& center) {
    return (x.row(row) - center).squaredNorm();
}

// Lloyd's algorithm on the rows of x with farthest-first seeding. Always
// returns exactly k non-empty clusters (k <= rows).
std::vector<int> kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
    const Eigen::Index n = x.rows();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);

    Eigen::MatrixXd centers(k, x.cols());
    centers.row(0) = x.row(first(rng));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        Eigen::Index pick = 0;
        double far = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(x, i, centers.row(c - 1)));
            if (nearest[i] > far) {
                far = nearest[i];
                pick = i;
            }
        }
        centers.row(c) = x.row(pick);
    }

    std::vector<int> assign(n, -1);
    auto assign_all = [&] {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = squared_distance(x, i, centers.row(0));
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(x, i, centers.row(c));
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            changed |= assign[i] != best;
            assign[i] = best;
        }
        return changed;
    };

    // Moves the point farthest from its centre, taken from a cluster with more
    // than one member, into every empty cluster.
    auto fill_empty = [&] {
        std::vector<int> sizes(k, 0);
        for (int a : assign) ++sizes[a];
        for (int c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            Eigen::Index pick = -1;
            double far = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (sizes[assign[i]] < 2) continue;
                const double d = squared_distance(x, i, centers.row(assign[i]));
                if (d > far) {
                    far = d;
                    pick = i;
                }
            }
            --sizes[assign[pick]];
            assign[pick] = c;
            sizes[c] = 1;
            centers.row(c) = x.row(pick);
        }
    };

    assign_all();
    for (int iter = 0; iter < kMaxKmeansIterations; ++iter) {
        fill_empty();
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
        std::vector<int> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += x.row(i);
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c) centers.row(c) = sums.row(c) / counts[c];
        if (!assign_all()) break;
    }
    fill_empty();
    return assign;
}

std::vector<int> spectral_labels(const Eigen::MatrixXd& w, int k, std::uint64_t seed) {
    const Eigen::Index n = w.rows();
    const Eigen::VectorXd inv_sqrt = w.rowwise().sum().array().rsqrt();
    const Eigen::MatrixXd laplacian =
        Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian);
    if (solver.info() != Eigen::Success) fail("eigendecomposition of the normalized Laplacian failed");
    Eigen::MatrixXd embedding = solver.eigenvectors().leftCols(k);  // eigenvalues ascending
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = embedding.row(i).norm();
        if (norm > 0.0) embedding.row(i) /= norm;
    }
    return kmeans(embedding, k, seed);
}

json chain_json(const std::vector<Partition>& chain, const Manifest& manifest) {
    json out = json::array();
    for (const auto& p : chain) {
        json blocks = json::array();
        for (const auto& block : p.blocks()) {
            json names = json::array();
            for (std::size_t t : block) names.push_back(manifest.tasks[t].name);
            blocks.push_back(std::move(names));
        }
        out.push_back(std::move(blocks));
    }
    return out;
}

}  // namespace

Partition spectral_cluster(SquareView similarity, std::size_t m, std::uint64_t seed) {
    const std::size_t n = similarity.n;
    if (m < 1 || m > n) fail(fmt::format("spectral_cluster: cannot form {} groups from {} items", m, n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = similarity(i, j);
            if (!std::isfinite(v)) fail("spectral_cluster: similarity has non-finite entries");
            if (i != j && v < 0.0) fail("spectral_cluster: similarity must be non-negative (clip negatives first)");
            if (std::abs(v - similarity(j, i)) > 1e-12 * std::max(1.0, std::abs(v)))
                fail(fmt::format("spectral_cluster: similarity is not symmetric at ({}, {})", i, j));
        }
    }
    if (m == 1) return Partition::single_block(n);
    if (m == n) return Partition::singletons(n);

    std::vector<std::size_t> connected, isolated;
    for (std::size_t i = 0; i < n; ++i) {
        double degree = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) degree += similarity(i, j);
        (degree > 0.0 ? connected : isolated).push_back(i);
    }

    std::vector<int> labels(n, 0);
    const std::size_t groups_left = isolated.size() < m ? m - isolated.size() : 0;
    if (connected.empty() || groups_left == 0) {
        // Not enough groups to give every isolated item its own block: the
        // connected items (if any) share one block, leftover isolated items
        // share the last one.
        const int next = connected.empty() ? 0 : 1;  // connected items keep label 0
        for (std::size_t r = 0; r < isolated.size(); ++r)
            labels[isolated[r]] = std::min<int>(next + static_cast<int>(r), static_cast<int>(m) - 1);
        return Partition::from_labels(labels);
    }

    int next = 0;
    for (std::size_t i : isolated) labels[i] = next++;
    if (groups_left == 1) {
        for (std::size_t i : connected) labels[i] = next;
    } else if (groups_left == connected.size()) {
        for (std::size_t i : connected) labels[i] = next++;
    } else {
        const auto c = static_cast<Eigen::Index>(connected.size());
        Eigen::MatrixXd w(c, c);
        for (Eigen::Index a = 0; a < c; ++a)
            for (Eigen::Index b = 0; b < c; ++b) w(a, b) = a == b ? 0.0 : similarity(connected[a], connected[b]);
        const auto sub = spectral_labels(w, static_cast<int>(groups_left), seed);
        for (Eigen::Index a = 0; a < c; ++a) labels[connected[a]] = next + sub[a];
    }
    return Partition::from_labels(labels);
}

std::vector<Partition> coarsen_candidates(const Partition& p, SquareView affinity, const BeamConfig& cfg) {
    const std::size_t q = p.num_blocks();
    if (q <= 1) return {p};

    auto lift = [&](const Partition& grouping) {
        std::vector<int> labels(p.num_tasks());
        for (std::size_t t = 0; t < labels.size(); ++t) labels[t] = grouping.block_of(p.block_of(t));
        return Partition::from_labels(labels);
    };

    std::vector<Partition> out;
    if (cfg.candidate_mode == CandidateMode::exhaustive_coarsening) {
        for (const Partition& g : all_partitions(q)) out.push_back(lift(g));
    } else {
        // cluster-level similarity: weakest cross-pair affinity between two blocks
        SquareMatrix sim(q, std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < p.num_tasks(); ++i)
            for (std::size_t j = 0; j < p.num_tasks(); ++j) {
                const std::size_t a = p.block_of(i), b = p.block_of(j);
                if (a == b) continue;
                double v = affinity(i, j);
                if (cfg.clip_negative_affinity) v = std::max(0.0, v);
                sim(a, b) = std::min(sim(a, b), v);
            }
        for (std::size_t a = 0; a < q; ++a) sim(a, a) = 0.0;
        for (std::size_t m = 1; m <= q; ++m) out.push_back(lift(spectral_cluster(sim.view(), m, cfg.seed)));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

SearchResult search_beam(const AffinityTensor& affinity, const DissimilarityTensor& dis, const Manifest& manifest,
                         const BudgetConfig& budget, const BeamConfig& cfg, BeamTrace* trace) {
    const std::size_t depths = manifest.num_locations(), n = manifest.num_tasks();
    if (cfg.width < 1) fail("beam width must be >= 1");
    for (const TaskTensor* t : {static_cast<const TaskTensor*>(&affinity), static_cast<const TaskTensor*>(&dis)})
        if (t->depths() != depths || t->tasks() != n)
            fail(fmt::format("tensor shape {}x{}x{} does not match the manifest (D={}, N={})", t->depths(), t->tasks(),
                             t->tasks(), depths, n));
    const std::uint64_t minimum = min_feasible_params(manifest, budget);
    if (minimum > budget.budget)
        fail(fmt::format("infeasible budget {}: the fully shared tree already needs {} parameters", budget.budget,
                         minimum));

    // Cheapest parameters of depths [0, d) given b branches at depth d: a
    // branchable location lets the shallower depth fall back to one branch, a
    // non-branchable one forces the same count.
    auto cheapest_prefix = [&](std::size_t d, std::uint64_t b) {
        std::uint64_t total = 0;
        for (std::size_t k = d; k-- > 0;) {
            if (manifest.locations[k + 1].branchable) b = 1;
            total += b * manifest.locations[k].layer_params;
        }
        return total;
    };
    const std::uint64_t decoders = budget.include_decoders ? manifest.total_decoder_params() : 0;
    // locations 0..d all non-branchable: the grouping there is the single block
    std::vector<bool> shared_prefix(depths, false);
    for (std::size_t d = 0; d < depths && !manifest.locations[d].branchable; ++d) shared_prefix[d] = true;

    std::vector<BeamEntry> beam{BeamEntry{}};
    std::uint64_t scored = 0;
    for (std::size_t d = depths; d-- > 0;) {
        std::vector<std::vector<BeamEntry>> grown(beam.size());
        parallel_for(beam.size(), cfg.threads, [&](std::size_t e) {
            const BeamEntry& entry = beam[e];
            const Partition deeper = entry.partial.empty() ? Partition::singletons(n) : entry.partial.front();
            std::vector<Partition> candidates;
            if (shared_prefix[d])
                candidates = {Partition::single_block(n)};
            else if (d + 1 < depths && !manifest.locations[d + 1].branchable)
                candidates = {deeper};
            else
                candidates = coarsen_candidates(deeper, affinity.slice(d), cfg);

            std::uint64_t suffix = 0;  // exact parameters of depths (d, D)
            for (std::size_t i = 0; i < entry.partial.size(); ++i)
                suffix += entry.partial[i].num_blocks() * manifest.locations[d + 1 + i].layer_params;
            for (Partition& c : candidates) {
                BeamEntry next;
                next.params_lower_bound = suffix + c.num_blocks() * manifest.locations[d].layer_params +
                                          cheapest_prefix(d, c.num_blocks()) + decoders;
                next.partial_cost = cluster_cost_at_depth(c, dis.slice(d)) + entry.partial_cost;
                next.partial.reserve(entry.partial.size() + 1);
                next.partial.push_back(std::move(c));
                next.partial.insert(next.partial.end(), entry.partial.begin(), entry.partial.end());
                grown[e].push_back(std::move(next));
            }
        });
        std::vector<BeamEntry> pool;
        for (auto& g : grown) {
            scored += g.size();
            for (auto& entry : g)
                if (entry.params_lower_bound <= budget.budget) pool.push_back(std::move(entry));
        }
        if (pool.empty())
            fail(fmt::format("beam emptied at location '{}': every partial grouping exceeds the budget; increase the "
                             "beam width or the budget",
                             manifest.locations[d].name));
        std::sort(pool.begin(), pool.end(), [](const BeamEntry& a, const BeamEntry& b) {
            if (a.partial_cost != b.partial_cost) return a.partial_cost < b.partial_cost;
            if (a.params_lower_bound != b.params_lower_bound) return a.params_lower_bound < b.params_lower_bound;
            return a.partial < b.partial;
        });
        if (pool.size() > cfg.width) pool.resize(cfg.width);
        beam = std::move(pool);
        if (trace) trace->steps.push_back(BeamState{d, beam});
    }

    SearchResult result;
    bool found = false;
    for (const BeamEntry& entry : beam) {
        BranchTree tree{entry.partial};
        const auto params = param_count(tree, manifest, budget);
        if (params > budget.budget) continue;
        ++result.num_feasible;
        const auto cost = tree_cost(tree, dis);
        if (!found || ranks_before(cost.total, params, tree, result.cost.total, result.params, result.best)) {
            result.best = std::move(tree);
            result.cost = cost;
            result.params = params;
            found = true;
        }
    }
    if (!found) fail("beam search found no feasible tree; increase the beam width or the budget");
    result.num_enumerated = scored;
    return result;
}

json trace_to_json(const BeamTrace& trace, const Manifest& manifest) {
    json steps = json::array();
    for (const BeamState& state : trace.steps) {
        json retained = json::array();
        for (const BeamEntry& e : state.retained)
            retained.push_back({{"chain", chain_json(e.partial, manifest)},
                                {"partial_cost", e.partial_cost},
                                {"params_lower_bound", e.params_lower_bound}});
        steps.push_back(
            {{"depth", state.depth}, {"location", manifest.locations[state.depth].name}, {"retained", retained}});
    }
    return json{{"steps", steps}};
}

}  // namespace branchplan
