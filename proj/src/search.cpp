// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/search.hpp"

#include <algorithm>
#include <limits>
#include <optional>

#include <fmt/core.h>

#include "branchplan/error.hpp"
#include "branchplan/parallel.hpp"

namespace branchplan {
namespace {

constexpr const char* kModule = "search";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

void check_cap(const Manifest& manifest, const EnumerationOptions& opts) {
    if (manifest.num_tasks() > opts.max_tasks)
        fail(fmt::format("{} tasks exceed the enumeration cap of {}; use beam search (--mode beam) or raise --enum-cap",
                         manifest.num_tasks(), opts.max_tasks));
}

void grow_partitions(std::vector<int>& labels, std::size_t pos, int next_label, std::vector<Partition>& out) {
    if (pos == labels.size()) {
        out.push_back(Partition::from_labels(labels));
        return;
    }
    for (int l = 0; l <= next_label; ++l) {
        labels[pos] = l;
        grow_partitions(labels, pos + 1, std::max(next_label, l + 1), out);
    }
}

// Candidate chains below a given prefix are scored through this visitor so the
// exhaustive search and the Pareto sweep share one traversal.
struct Walker {
    const Manifest& manifest;
    const DissimilarityTensor& dis;
    ChainEnumerator enumerator;
    std::vector<std::uint64_t> suffix_params;  // sum of layer_params over [d, D)
    std::uint64_t decoders = 0;
    std::uint64_t budget = std::numeric_limits<std::uint64_t>::max();
    BranchTree chain;
    std::uint64_t enumerated = 0;
    std::uint64_t feasible = 0;
    std::function<void(const BranchTree&, std::uint64_t, double)> on_complete;

    Walker(const Manifest& m, const DissimilarityTensor& d, bool include_decoders)
        : manifest(m), dis(d), enumerator(m) {
        const std::size_t depths = m.num_locations();
        suffix_params.assign(depths + 1, 0);
        for (std::size_t k = depths; k-- > 0;) suffix_params[k] = suffix_params[k + 1] + m.locations[k].layer_params;
        decoders = include_decoders ? m.total_decoder_params() : 0;
        chain.chain.assign(depths, Partition{});
    }

    void extend(std::size_t depth, const Partition& candidate, std::uint64_t params, double cost) {
        const std::uint64_t b = candidate.num_blocks();
        const std::uint64_t here = params + b * manifest.locations[depth].layer_params;
        // every completion keeps at least b branches per remaining depth
        if (here + b * suffix_params[depth + 1] + decoders > budget) {
            enumerated += enumerator.completions(depth + 1, candidate);
            return;
        }
        chain.chain[depth] = candidate;
        walk(depth + 1, here, cost + cluster_cost_at_depth(candidate, dis.slice(depth)));
    }

    void walk(std::size_t depth, std::uint64_t params, double cost) {
        if (depth == chain.depths()) {
            ++enumerated;
            ++feasible;
            on_complete(chain, params + decoders, cost);
            return;
        }
        const Partition previous = depth == 0 ? Partition::single_block(manifest.num_tasks()) : chain.chain[depth - 1];
        for (const Partition& candidate : enumerator.candidates(depth, previous)) extend(depth, candidate, params, cost);
    }
};

void check_shapes(const DissimilarityTensor& dis, const Manifest& manifest) {
    if (dis.depths() != manifest.num_locations() || dis.tasks() != manifest.num_tasks())
        fail(fmt::format("dissimilarity tensor is {}x{}x{} but the manifest has D={}, N={}", dis.depths(), dis.tasks(),
                         dis.tasks(), manifest.num_locations(), manifest.num_tasks()));
}

}  // namespace

std::vector<Partition> all_partitions(std::size_t n) {
    std::vector<Partition> out;
    if (n == 0) return out;
    std::vector<int> labels(n, 0);
    grow_partitions(labels, 1, 1, out);
    return out;
}

std::vector<Partition> refinements(const Partition& p) {
    const auto blocks = p.blocks();
    std::vector<std::vector<Partition>> options;
    for (const auto& block : blocks) options.push_back(all_partitions(block.size()));

    std::vector<Partition> out;
    std::vector<std::size_t> pick(blocks.size(), 0);
    std::vector<int> labels(p.num_tasks());
    while (true) {
        int offset = 0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const Partition& sub = options[b][pick[b]];
            for (std::size_t k = 0; k < blocks[b].size(); ++k) labels[blocks[b][k]] = offset + sub.block_of(k);
            offset += static_cast<int>(sub.num_blocks());
        }
        out.push_back(Partition::from_labels(labels));
        std::size_t b = 0;
        while (b < blocks.size() && ++pick[b] == options[b].size()) pick[b++] = 0;
        if (b == blocks.size()) break;
    }
    std::sort(out.begin(), out.end());
    return out;
}

ChainEnumerator::ChainEnumerator(const Manifest& manifest) : manifest_(&manifest) {}

const std::vector<Partition>& ChainEnumerator::candidates(std::size_t depth, const Partition& previous) {
    auto& memo = manifest_->locations[depth].branchable ? refinements_ : unchanged_;
    auto it = memo.find(previous.labels());
    if (it == memo.end()) {
        std::vector<Partition> list =
            manifest_->locations[depth].branchable ? refinements(previous) : std::vector<Partition>{previous};
        it = memo.emplace(previous.labels(), std::move(list)).first;
    }
    return it->second;
}

std::uint64_t ChainEnumerator::completions(std::size_t depth, const Partition& previous) {
    if (depth == manifest_->num_locations()) return 1;
    const auto key = std::make_pair(depth, previous.labels());
    if (auto it = counts_.find(key); it != counts_.end()) return it->second;
    std::uint64_t total = 0;
    for (const Partition& c : candidates(depth, previous)) total += completions(depth + 1, c);
    counts_.emplace(key, total);
    return total;
}

void enumerate_chains(const Manifest& manifest, const EnumerationOptions& opts,
                      const std::function<void(const BranchTree&)>& visit) {
    check_cap(manifest, opts);
    const std::size_t depths = manifest.num_locations();
    ChainEnumerator enumerator(manifest);
    BranchTree chain;
    chain.chain.assign(depths, Partition{});
    std::function<void(std::size_t, const Partition&)> walk = [&](std::size_t depth, const Partition& previous) {
        if (depth == depths) {
            visit(chain);
            return;
        }
        for (const Partition& c : enumerator.candidates(depth, previous)) {
            chain.chain[depth] = c;
            walk(depth + 1, c);
        }
    };
    walk(0, Partition::single_block(manifest.num_tasks()));
}

std::uint64_t count_chains(const Manifest& manifest, const EnumerationOptions& opts) {
    check_cap(manifest, opts);
    ChainEnumerator enumerator(manifest);
    return enumerator.completions(0, Partition::single_block(manifest.num_tasks()));
}

std::uint64_t min_feasible_params(const Manifest& manifest, const BudgetConfig& cfg) {
    const std::vector<std::size_t> ones(manifest.num_locations(), 1);
    return param_count(ones, manifest, cfg);
}

SearchResult search_exhaustive(const DissimilarityTensor& dis, const Manifest& manifest, const BudgetConfig& cfg,
                               const EnumerationOptions& opts) {
    check_cap(manifest, opts);
    check_shapes(dis, manifest);
    const std::uint64_t minimum = min_feasible_params(manifest, cfg);
    if (minimum > cfg.budget)
        fail(fmt::format("infeasible budget {}: the fully shared tree already needs {} parameters", cfg.budget,
                         minimum));

    struct Best {
        std::optional<BranchTree> tree;
        std::uint64_t params = 0;
        double cost = 0.0;
        std::uint64_t enumerated = 0;
        std::uint64_t feasible = 0;

        void offer(const BranchTree& t, std::uint64_t p, double c) {
            if (!tree || ranks_before(c, p, t, cost, params, *tree)) {
                tree = t;
                params = p;
                cost = c;
            }
        }
    };

    // one unit per depth-0 candidate, reduced in canonical order
    const Partition root = Partition::single_block(manifest.num_tasks());
    const auto roots = ChainEnumerator(manifest).candidates(0, root);
    std::vector<Best> partial(roots.size());
    parallel_for(roots.size(), opts.threads, [&](std::size_t u) {
        Walker walker(manifest, dis, cfg.include_decoders);
        walker.budget = cfg.budget;
        Best& best = partial[u];
        walker.on_complete = [&](const BranchTree& t, std::uint64_t p, double c) { best.offer(t, p, c); };
        walker.extend(0, roots[u], 0, 0.0);
        best.enumerated = walker.enumerated;
        best.feasible = walker.feasible;
    });

    Best overall;
    for (const Best& b : partial) {
        overall.enumerated += b.enumerated;
        overall.feasible += b.feasible;
        if (b.tree) overall.offer(*b.tree, b.params, b.cost);
    }
    if (!overall.tree) fail("no feasible tree found");

    SearchResult result;
    result.best = *overall.tree;
    result.cost = tree_cost(result.best, dis);
    result.params = overall.params;
    result.num_enumerated = overall.enumerated;
    result.num_feasible = overall.feasible;
    return result;
}

std::vector<ParetoPoint> pareto_sweep(const DissimilarityTensor& dis, const Manifest& manifest, bool include_decoders,
                                      const EnumerationOptions& opts) {
    check_cap(manifest, opts);
    check_shapes(dis, manifest);

    using Frontier = std::map<std::uint64_t, ParetoPoint>;  // cheapest-cost tree per parameter count
    auto offer = [](Frontier& f, const BranchTree& t, std::uint64_t p, double c) {
        auto it = f.find(p);
        if (it == f.end())
            f.emplace(p, ParetoPoint{p, c, t});
        else if (ranks_before(c, p, t, it->second.cost, p, it->second.tree))
            it->second = ParetoPoint{p, c, t};
    };

    const Partition root = Partition::single_block(manifest.num_tasks());
    const auto roots = ChainEnumerator(manifest).candidates(0, root);
    std::vector<Frontier> partial(roots.size());
    parallel_for(roots.size(), opts.threads, [&](std::size_t u) {
        Walker walker(manifest, dis, include_decoders);
        walker.on_complete = [&](const BranchTree& t, std::uint64_t p, double c) { offer(partial[u], t, p, c); };
        walker.extend(0, roots[u], 0, 0.0);
    });

    Frontier merged;
    for (const Frontier& f : partial)
        for (const auto& [p, point] : f) offer(merged, point.tree, p, point.cost);

    std::vector<ParetoPoint> frontier;
    for (auto& [p, point] : merged)
        if (frontier.empty() || point.cost < frontier.back().cost) frontier.push_back(std::move(point));
    return frontier;
}

}  // namespace branchplan
