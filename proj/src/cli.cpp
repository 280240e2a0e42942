// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/format.h>

#include "branchplan/beam.hpp"
#include "branchplan/datamodel.hpp"
#include "branchplan/error.hpp"
#include "branchplan/evalmetric.hpp"
#include "branchplan/rsa.hpp"
#include "branchplan/search.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace branchplan {
namespace {

constexpr const char* kModule = "cli";

[[noreturn]] void usage(const std::string& message) { throw Error(kModule, message); }

struct CliConfig {
    std::string data_dir;
    std::string out_dir = ".";
    std::uint64_t budget = 0;
    std::string mode = "exhaustive";
    std::size_t width = 10;
    std::string candidate_mode = "spectral";
    std::uint64_t seed = 0;
    unsigned threads = 0;
    bool coerce_zero_variance = false;
    std::size_t feature_subsample = 0;
    bool include_decoders = true;
    bool no_clip = false;
    std::size_t enum_cap = 8;
    bool force = false;
    bool csv = false;
    std::string affinity_file;
    std::string model_csv, baseline_csv;
};

RsaOptions rsa_options(const CliConfig& cfg) {
    RsaOptions o;
    o.coerce_zero_variance = cfg.coerce_zero_variance;
    o.feature_subsample = cfg.feature_subsample;
    o.seed = cfg.seed;
    o.threads = cfg.threads;
    return o;
}

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(kModule, fmt::format("cannot write {}", path.string()));
    out << doc.dump(2) << '\n';
}

// Loads RDM stacks from the first complete, correctly sized cache directory,
// or computes them from the feature files.
std::vector<RdmStack> obtain_stacks(const Manifest& manifest, const CliConfig& cfg, std::ostream& out) {
    const std::size_t n = manifest.num_tasks();
    if (manifest.content == Content::rdms) {
        std::vector<RdmStack> stacks;
        for (std::size_t t = 0; t < n; ++t) stacks.push_back(load_rdm_stack(manifest, t));
        return stacks;
    }
    if (!cfg.force) {
        const std::uintmax_t bytes = 4ull * manifest.num_locations() * manifest.num_images * manifest.num_images;
        for (const fs::path& dir : {manifest.root / "rdms", fs::path(cfg.out_dir) / "rdms"}) {
            bool usable = true;
            for (std::size_t t = 0; t < n && usable; ++t) {
                std::error_code ec;
                const fs::path file = dir / (manifest.tasks[t].name + ".bin");
                usable = fs::is_regular_file(file, ec) && fs::file_size(file, ec) == bytes;
            }
            if (!usable) continue;
            std::vector<RdmStack> stacks;
            for (std::size_t t = 0; t < n; ++t)
                stacks.push_back(load_rdm_stack(manifest, t, dir / (manifest.tasks[t].name + ".bin")));
            out << "using cached RDMs from " << dir.string() << '\n';
            return stacks;
        }
    }
    return rdm_stacks(manifest, rsa_options(cfg));
}

std::pair<AffinityTensor, DissimilarityTensor> obtain_tensors(const Manifest& manifest, const CliConfig& cfg,
                                                              std::ostream& out) {
    if (!cfg.affinity_file.empty()) {
        AffinityFile file = load_affinity_json(cfg.affinity_file);
        std::vector<std::string> names;
        for (const auto& t : manifest.tasks) names.push_back(t.name);
        if (file.tasks != names || file.locations.size() != manifest.num_locations())
            throw Error(kModule, fmt::format("{} does not match the manifest's tasks/locations", cfg.affinity_file));
        return {std::move(file.affinity), std::move(file.dissimilarity)};
    }
    const auto stacks = obtain_stacks(manifest, cfg, out);
    AffinityTensor a = affinity_tensor(stacks, rsa_options(cfg));
    DissimilarityTensor d = dissimilarity(a);
    return {std::move(a), std::move(d)};
}

int cmd_rdm(const CliConfig& cfg, std::ostream& out) {
    const Manifest manifest = load_manifest(cfg.data_dir);
    if (manifest.content != Content::features) usage("rdm needs a manifest with content \"features\"");
    const auto stacks = rdm_stacks(manifest, rsa_options(cfg));
    for (const auto& s : stacks) {
        const fs::path path = fs::path(cfg.out_dir) / "rdms" / (manifest.tasks[s.task].name + ".bin");
        save_rdm_stack(s, path);
        out << "wrote " << path.string() << '\n';
    }
    return 0;
}

int cmd_affinity(const CliConfig& cfg, std::ostream& out) {
    const Manifest manifest = load_manifest(cfg.data_dir);
    const auto stacks = obtain_stacks(manifest, cfg, out);
    const AffinityTensor a = affinity_tensor(stacks, rsa_options(cfg));
    const DissimilarityTensor d = dissimilarity(a);
    const fs::path path = fs::path(cfg.out_dir) / "affinity.json";
    save_affinity_json(path, manifest, a, d);
    out << "wrote " << path.string() << '\n';
    if (cfg.csv) {
        save_affinity_csv(cfg.out_dir, manifest, a);
        out << "wrote " << manifest.num_locations() << " affinity CSV files to " << cfg.out_dir << '\n';
    }
    return 0;
}

int cmd_search(const CliConfig& cfg, std::ostream& out) {
    const Manifest manifest = load_manifest(cfg.data_dir);
    const auto [a, d] = obtain_tensors(manifest, cfg, out);
    const BudgetConfig budget{cfg.budget, cfg.include_decoders};
    SearchResult result;
    if (cfg.mode == "exhaustive") {
        EnumerationOptions opts;
        opts.max_tasks = cfg.enum_cap;
        opts.threads = cfg.threads;
        result = search_exhaustive(d, manifest, budget, opts);
    } else {
        BeamConfig beam;
        beam.width = cfg.width;
        beam.candidate_mode =
            cfg.candidate_mode == "spectral" ? CandidateMode::spectral : CandidateMode::exhaustive_coarsening;
        beam.seed = cfg.seed;
        beam.clip_negative_affinity = !cfg.no_clip;
        beam.threads = cfg.threads;
        BeamTrace trace;
        result = search_beam(a, d, manifest, budget, beam, &trace);
        const fs::path trace_path = fs::path(cfg.out_dir) / "beam_trace.json";
        write_json(trace_path, trace_to_json(trace, manifest));
        out << "wrote " << trace_path.string() << '\n';
    }
    json doc = tree_to_json(result.best, manifest, budget, result.cost);
    doc["search"] = {{"mode", cfg.mode},
                     {"budget", cfg.budget},
                     {"num_enumerated", result.num_enumerated},
                     {"num_feasible", result.num_feasible}};
    const fs::path path = fs::path(cfg.out_dir) / "tree.json";
    write_json(path, doc);
    out << fmt::format("best tree: cost {:.6g}, params {}, branches [{}]\n", result.cost.total, result.params,
                       fmt::join(result.best.branch_counts(), ","));
    out << "wrote " << path.string() << '\n';
    return 0;
}

int cmd_pareto(const CliConfig& cfg, std::ostream& out) {
    const Manifest manifest = load_manifest(cfg.data_dir);
    const auto [a, d] = obtain_tensors(manifest, cfg, out);
    EnumerationOptions opts;
    opts.max_tasks = cfg.enum_cap;
    opts.threads = cfg.threads;
    const auto frontier = pareto_sweep(d, manifest, cfg.include_decoders, opts);

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir / "pareto");
    std::ofstream csv(dir / "pareto.csv", std::ios::trunc);
    if (!csv) throw Error(kModule, fmt::format("cannot write {}", (dir / "pareto.csv").string()));
    csv << "params,cost,tree_id\n";
    const BudgetConfig budget{std::numeric_limits<std::uint64_t>::max(), cfg.include_decoders};
    for (std::size_t i = 0; i < frontier.size(); ++i) {
        const auto& p = frontier[i];
        csv << p.params << ',' << fmt::format("{:.17g}", p.cost) << ',' << i << '\n';
        write_json(dir / "pareto" / fmt::format("tree_{}.json", i),
                   tree_to_json(p.tree, manifest, budget, tree_cost(p.tree, d)));
    }
    out << "wrote " << frontier.size() << " frontier points to " << (dir / "pareto.csv").string() << '\n';
    return 0;
}

int cmd_mtlperf(const CliConfig& cfg, std::ostream& out) {
    const auto model = read_metric_csv(cfg.model_csv);
    const auto baseline = read_metric_csv(cfg.baseline_csv);
    const auto report = mtl_performance_report(model, baseline);
    out << "task,contribution_percent\n";
    for (const auto& c : report.contributions) out << c.task << ',' << fmt::format("{:.6f}", c.percent) << '\n';
    out << "delta_percent," << fmt::format("{:.6f}", report.delta) << '\n';
    return 0;
}

int cmd_validate(const CliConfig& cfg, std::ostream& out) {
    const Manifest manifest = load_manifest(cfg.data_dir);
    if (manifest.content == Content::features) {
        for (std::size_t t = 0; t < manifest.num_tasks(); ++t)
            for (std::size_t d = 0; d < manifest.num_locations(); ++d) (void)load_features(manifest, t, d);
        std::error_code ec;
        if (fs::is_directory(manifest.root / "rdms", ec))
            for (std::size_t t = 0; t < manifest.num_tasks(); ++t)
                if (fs::exists(manifest.rdm_path(t), ec)) (void)load_rdm_stack(manifest, t);
    } else {
        for (std::size_t t = 0; t < manifest.num_tasks(); ++t) (void)load_rdm_stack(manifest, t);
    }
    out << fmt::format("ok: {} tasks, {} locations, {} images\n", manifest.num_tasks(), manifest.num_locations(),
                       manifest.num_images);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Plan branched multi-task encoders from task affinities", "branchplan"};
    app.require_subcommand(1);
    CliConfig cfg;

    auto add_data = [&](CLI::App* sub) {
        sub->add_option("dir", cfg.data_dir, "Data directory containing manifest.json")->required();
    };
    auto add_out = [&](CLI::App* sub) { sub->add_option("--out", cfg.out_dir, "Output directory"); };
    auto add_threads = [&](CLI::App* sub) {
        sub->add_option("--threads", cfg.threads, "Worker threads (default: BRANCHPLAN_THREADS or all cores)");
    };
    auto add_rsa = [&](CLI::App* sub) {
        sub->add_flag("--coerce-zero-variance", cfg.coerce_zero_variance,
                      "Treat correlations against constant vectors as 0 instead of failing");
        sub->add_option("--feature-subsample", cfg.feature_subsample,
                        "Keep this many random feature columns per location");
        sub->add_option("--seed", cfg.seed, "Seed for every random choice");
    };
    auto add_cache = [&](CLI::App* sub) {
        sub->add_flag("--force", cfg.force, "Recompute RDMs even if a cache exists");
    };
    auto add_search_common = [&](CLI::App* sub) {
        sub->add_option("--include-decoders", cfg.include_decoders, "Count decoder parameters toward the budget");
        sub->add_option("--enum-cap", cfg.enum_cap, "Largest task count allowed for exhaustive enumeration");
        sub->add_option("--affinity", cfg.affinity_file, "Use a precomputed affinity.json");
    };

    auto* rdm = app.add_subcommand("rdm", "Compute and cache per-task RDM stacks");
    add_data(rdm), add_out(rdm), add_threads(rdm), add_rsa(rdm);

    auto* affinity = app.add_subcommand("affinity", "Compute the task affinity tensor");
    add_data(affinity), add_out(affinity), add_threads(affinity), add_rsa(affinity), add_cache(affinity);
    affinity->add_flag("--csv", cfg.csv, "Also write one N x N CSV per location");

    auto* search = app.add_subcommand("search", "Find the minimum-cost tree within a parameter budget");
    add_data(search), add_out(search), add_threads(search), add_rsa(search), add_cache(search);
    add_search_common(search);
    search->add_option("--budget", cfg.budget, "Parameter budget")->required();
    search->add_option("--mode", cfg.mode, "exhaustive or beam")->check(CLI::IsMember({"exhaustive", "beam"}));
    auto* width = search->add_option("--width", cfg.width, "Beam width (groupings kept per location)");
    auto* candidate = search->add_option("--candidate-mode", cfg.candidate_mode, "spectral or exhaustive-coarsening")
                          ->check(CLI::IsMember({"spectral", "exhaustive-coarsening"}));
    auto* no_clip = search->add_flag("--no-clip-negative", cfg.no_clip,
                                     "Do not clip negative affinities before spectral clustering");

    auto* pareto = app.add_subcommand("pareto", "Sweep budgets and write the cost/parameter frontier");
    add_data(pareto), add_out(pareto), add_threads(pareto), add_rsa(pareto), add_cache(pareto);
    add_search_common(pareto);

    auto* mtlperf = app.add_subcommand("mtlperf", "Average per-task performance change versus a baseline");
    mtlperf->add_option("model_csv", cfg.model_csv, "task,value,lower_is_better")->required();
    mtlperf->add_option("baseline_csv", cfg.baseline_csv, "task,value,lower_is_better")->required();

    auto* validate = app.add_subcommand("validate", "Check a data directory and any cached RDMs");
    add_data(validate);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: cli: " << msg << '\n';
        return 2;
    }

    try {
        if (search->parsed()) {
            if (cfg.mode != "beam" && (width->count() || candidate->count() || no_clip->count()))
                usage("--width, --candidate-mode and --no-clip-negative require --mode beam");
            if (cfg.width < 1) usage("--width must be >= 1");
        }
        if (cfg.feature_subsample == 1) usage("--feature-subsample must be 0 (all) or >= 2");
        if (cfg.enum_cap < 1) usage("--enum-cap must be >= 1");
        if (!cfg.affinity_file.empty() && (cfg.force || cfg.feature_subsample || cfg.coerce_zero_variance))
            usage("--affinity cannot be combined with RDM options (--force, --feature-subsample, "
                  "--coerce-zero-variance)");

        if (rdm->parsed()) return cmd_rdm(cfg, out);
        if (affinity->parsed()) return cmd_affinity(cfg, out);
        if (search->parsed()) return cmd_search(cfg, out);
        if (pareto->parsed()) return cmd_pareto(cfg, out);
        if (mtlperf->parsed()) return cmd_mtlperf(cfg, out);
        if (validate->parsed()) return cmd_validate(cfg, out);
    } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << '\n';
        return e.module() == kModule ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace branchplan
