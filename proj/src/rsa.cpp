// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/rsa.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include <fmt/core.h>

#include "branchplan/error.hpp"
#include "branchplan/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace branchplan {
namespace {

constexpr const char* kModule = "rsa";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

// Pearson correlation, or nullopt when either input has zero variance.
std::optional<double> correlation(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double rdm_entry(double cov, double var_i, double var_j) {
    if (!(var_i > 0.0) || !(var_j > 0.0)) return 1.0;  // coerced: correlation 0
    const double rho = std::clamp(cov / std::sqrt(var_i * var_j), -1.0, 1.0);
    return std::clamp(1.0 - rho, 0.0, 2.0);
}

std::string zero_variance_message(std::string_view task, std::size_t location, std::size_t image) {
    return fmt::format("zero variance: constant activations, task={}, location={}, image={}", task, location, image);
}

std::vector<std::size_t> effective_columns(std::size_t feature_dim, const RsaOptions& opts, std::size_t location) {
    auto cols = subsample_columns(feature_dim, opts.feature_subsample, opts.seed, location);
    if (cols.size() < 2) fail(fmt::format("location {} has fewer than 2 feature columns; an RDM needs F >= 2", location));
    return cols;
}

void write_number(std::ostream& out, double v) { out << fmt::format("{:.17g}", v); }

void write_tensor(std::ostream& out, const TaskTensor& t) {
    out << "[";
    for (std::size_t d = 0; d < t.depths(); ++d) {
        out << (d ? ",\n    [" : "\n    [");
        for (std::size_t i = 0; i < t.tasks(); ++i) {
            out << (i ? ", [" : "[");
            for (std::size_t j = 0; j < t.tasks(); ++j) {
                if (j) out << ", ";
                write_number(out, t(d, i, j));
            }
            out << "]";
        }
        out << "]";
    }
    out << "\n  ]";
}

template <class Tensor>
Tensor read_tensor(const json& node, std::size_t depths, std::size_t tasks, const char* key) {
    Tensor t(depths, tasks);
    if (!node.is_array() || node.size() != depths) fail(fmt::format("affinity file: '{}' has wrong depth count", key));
    for (std::size_t d = 0; d < depths; ++d) {
        if (!node[d].is_array() || node[d].size() != tasks) fail(fmt::format("affinity file: '{}' slice shape", key));
        for (std::size_t i = 0; i < tasks; ++i) {
            if (!node[d][i].is_array() || node[d][i].size() != tasks)
                fail(fmt::format("affinity file: '{}' row shape", key));
            for (std::size_t j = 0; j < tasks; ++j) t(d, i, j) = node[d][i][j].get<double>();
        }
    }
    return t;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y, bool coerce) {
    if (x.size() != y.size()) fail(fmt::format("pearson: length mismatch ({} vs {})", x.size(), y.size()));
    if (x.size() < 2) fail("pearson: need at least 2 samples");
    if (auto r = correlation(x, y)) return *r;
    if (coerce) return 0.0;
    fail("zero variance: pearson correlation of a constant vector");
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        // positions i..j-1 (0-based) share rank mean((i+1)..j)
        const double rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
        i = j;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y, bool coerce) {
    if (x.size() != y.size()) fail(fmt::format("spearman: length mismatch ({} vs {})", x.size(), y.size()));
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry, coerce);
}

std::vector<double> upper_triangle(SquareView m) {
    std::vector<double> out;
    out.reserve(m.n * (m.n - (m.n ? 1 : 0)) / 2);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = i + 1; j < m.n; ++j) out.push_back(m(i, j));
    return out;
}

double spearman_triu(SquareView m1, SquareView m2, bool coerce) {
    if (m1.n != m2.n) fail(fmt::format("spearman_triu: size mismatch ({} vs {})", m1.n, m2.n));
    if (m1.n < 3) fail("spearman_triu: need K >= 3");
    for (const SquareView* m : {&m1, &m2})
        for (std::size_t i = 0; i < m->n; ++i)
            for (std::size_t j = i + 1; j < m->n; ++j)
                if ((*m)(i, j) != (*m)(j, i)) fail("spearman_triu: input matrix is not symmetric");
    return spearman(upper_triangle(m1), upper_triangle(m2), coerce);
}

std::vector<std::size_t> subsample_columns(std::size_t feature_dim, std::size_t keep, std::uint64_t seed,
                                           std::size_t location) {
    std::vector<std::size_t> cols(feature_dim);
    std::iota(cols.begin(), cols.end(), 0);
    if (keep == 0 || keep >= feature_dim) return cols;
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(location) + 1)));
    for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, feature_dim - 1);
        std::swap(cols[i], cols[pick(rng)]);
    }
    cols.resize(keep);
    std::sort(cols.begin(), cols.end());
    return cols;
}

SquareMatrix compute_rdm(const FeatureMatrix& features, const RsaOptions& opts, std::string_view task_name) {
    const std::size_t k = features.rows;
    const auto cols = effective_columns(features.cols, opts, features.location);
    const std::size_t f = cols.size();
    const std::string task = task_name.empty() ? std::to_string(features.task) : std::string(task_name);

    // centred rows
    std::vector<double> centred(k * f);
    std::vector<double> var(k);
    for (std::size_t i = 0; i < k; ++i) {
        double mean = 0.0;
        for (std::size_t c = 0; c < f; ++c) mean += features(i, cols[c]);
        mean /= static_cast<double>(f);
        double ss = 0.0;
        for (std::size_t c = 0; c < f; ++c) {
            const double v = features(i, cols[c]) - mean;
            centred[i * f + c] = v;
            ss += v * v;
        }
        if (!(ss > 0.0) && !opts.coerce_zero_variance)
            fail(zero_variance_message(task, features.location, i));
        var[i] = ss;
    }

    SquareMatrix rdm(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* a = centred.data() + i * f;
        for (std::size_t j = i + 1; j < k; ++j) {
            const double* b = centred.data() + j * f;
            double dot = 0.0;
            for (std::size_t c = 0; c < f; ++c) dot += a[c] * b[c];
            rdm(i, j) = rdm(j, i) = rdm_entry(dot, var[i], var[j]);
        }
    }
    return rdm;
}

SquareMatrix compute_rdm_streaming(const Manifest& manifest, std::size_t task, std::size_t location,
                                   const RsaOptions& opts) {
    if (manifest.content != Content::features) fail("manifest content is 'rdms'; cannot compute RDMs from features");
    const std::size_t k = manifest.num_images;
    const std::size_t full_f = manifest.locations.at(location).feature_dim;
    const auto cols = effective_columns(full_f, opts, location);
    const std::size_t f = cols.size();
    const std::string& task_name = manifest.tasks.at(task).name;
    const fs::path path = manifest.feature_path(task, location);

    std::error_code ec;
    const auto bytes = fs::file_size(path, ec);
    if (ec) fail(fmt::format("missing feature file {}", path.string()));
    if (bytes != 4ull * k * full_f)
        fail(fmt::format("size mismatch for {}: expected {} bytes, got {}", path.string(), 4ull * k * full_f, bytes));
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(fmt::format("cannot open {}", path.string()));

    // Sums are accumulated around a per-row shift (the row mean over the first
    // chunk) to limit cancellation in sum-of-products minus product-of-sums.
    std::vector<double> shift(k, 0.0), sum(k, 0.0);
    std::vector<double> prod(k * k, 0.0);  // upper triangle incl. diagonal used
    const std::size_t chunk = std::max<std::size_t>(1, opts.stream_columns);
    std::vector<float> raw;
    std::vector<double> block(k * chunk);

    for (std::size_t c0 = 0; c0 < f; c0 += chunk) {
        const std::size_t c1 = std::min(f, c0 + chunk);
        const std::size_t w = c1 - c0;
        const std::size_t lo = cols[c0], hi = cols[c1 - 1] + 1;
        raw.resize(hi - lo);
        for (std::size_t i = 0; i < k; ++i) {
            in.seekg(static_cast<std::streamoff>(4 * (i * full_f + lo)));
            in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(4 * raw.size()));
            if (!in) fail(fmt::format("short read from {}", path.string()));
            for (std::size_t c = 0; c < w; ++c) {
                std::uint32_t bits;
                std::memcpy(&bits, &raw[cols[c0 + c] - lo], 4);
                if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
                const float v = std::bit_cast<float>(bits);
                if (!std::isfinite(v))
                    fail(fmt::format("non-finite activation, task={}, image={}, location={}", task_name, i,
                                     manifest.locations[location].name));
                block[i * w + c] = v;
            }
            if (c0 == 0) {
                double m = 0.0;
                for (std::size_t c = 0; c < w; ++c) m += block[i * w + c];
                shift[i] = m / static_cast<double>(w);
            }
            for (std::size_t c = 0; c < w; ++c) {
                block[i * w + c] -= shift[i];
                sum[i] += block[i * w + c];
            }
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double* a = block.data() + i * w;
            for (std::size_t j = i; j < k; ++j) {
                const double* b = block.data() + j * w;
                double dot = 0.0;
                for (std::size_t c = 0; c < w; ++c) dot += a[c] * b[c];
                prod[i * k + j] += dot;
            }
        }
    }

    const double n = static_cast<double>(f);
    std::vector<double> var(k);
    for (std::size_t i = 0; i < k; ++i) {
        var[i] = std::max(0.0, prod[i * k + i] - sum[i] * sum[i] / n);
        if (!(var[i] > 0.0) && !opts.coerce_zero_variance) fail(zero_variance_message(task_name, location, i));
    }
    SquareMatrix rdm(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            rdm(i, j) = rdm(j, i) = rdm_entry(prod[i * k + j] - sum[i] * sum[j] / n, var[i], var[j]);
    return rdm;
}

namespace {

void store_slice(RdmStack& stack, std::size_t d, const SquareMatrix& rdm) {
    const std::size_t kk = stack.images * stack.images;
    for (std::size_t e = 0; e < kk; ++e) stack.data[d * kk + e] = static_cast<float>(rdm.data[e]);
}

RdmStack empty_stack(const Manifest& manifest, std::size_t task) {
    RdmStack s;
    s.task = task;
    s.depths = manifest.num_locations();
    s.images = manifest.num_images;
    s.data.assign(s.depths * s.images * s.images, 0.0f);
    return s;
}

}  // namespace

RdmStack rdm_stack(const Manifest& manifest, std::size_t task, const RsaOptions& opts) {
    RdmStack s = empty_stack(manifest, task);
    for (std::size_t d = 0; d < s.depths; ++d) store_slice(s, d, compute_rdm_streaming(manifest, task, d, opts));
    return s;
}

RdmStack rdm_stack_in_memory(const Manifest& manifest, std::size_t task, const RsaOptions& opts) {
    RdmStack s = empty_stack(manifest, task);
    for (std::size_t d = 0; d < s.depths; ++d)
        store_slice(s, d, compute_rdm(load_features(manifest, task, d), opts, manifest.tasks[task].name));
    return s;
}

std::vector<RdmStack> rdm_stacks(const Manifest& manifest, const RsaOptions& opts) {
    std::vector<RdmStack> stacks;
    for (std::size_t t = 0; t < manifest.num_tasks(); ++t) stacks.push_back(empty_stack(manifest, t));
    const std::size_t depths = manifest.num_locations();
    parallel_for(manifest.num_tasks() * depths, opts.threads, [&](std::size_t unit) {
        const std::size_t t = unit / depths, d = unit % depths;
        store_slice(stacks[t], d, compute_rdm_streaming(manifest, t, d, opts));
    });
    return stacks;
}

AffinityTensor affinity_tensor(std::span<const RdmStack> stacks, const RsaOptions& opts) {
    const std::size_t n = stacks.size();
    if (n < 2) fail("affinity needs at least 2 tasks");
    const std::size_t depths = stacks[0].depths, k = stacks[0].images;
    if (k < 3) fail("affinity needs K >= 3 images");
    for (const auto& s : stacks)
        if (s.depths != depths || s.images != k)
            fail(fmt::format("inconsistent RDM stack shapes: task {} is {}x{}x{}, expected {}x{}x{}", s.task, s.depths,
                             s.images, s.images, depths, k, k));

    // rank vectors of each (task, depth) strict upper triangle
    std::vector<std::vector<double>> ranks(n * depths);
    parallel_for(n * depths, opts.threads, [&](std::size_t unit) {
        const std::size_t t = unit / depths, d = unit % depths;
        std::vector<double> tri;
        tri.reserve(k * (k - 1) / 2);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) tri.push_back(stacks[t](d, i, j));
        ranks[unit] = average_ranks(tri);
    });

    AffinityTensor a(depths, n);
    std::vector<std::array<std::size_t, 3>> pairs;
    for (std::size_t d = 0; d < depths; ++d) {
        for (std::size_t i = 0; i < n; ++i) {
            a(d, i, i) = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({d, i, j});
        }
    }
    parallel_for(pairs.size(), opts.threads, [&](std::size_t p) {
        const auto [d, i, j] = pairs[p];
        const auto r = correlation(ranks[i * depths + d], ranks[j * depths + d]);
        if (!r && !opts.coerce_zero_variance)
            fail(fmt::format("zero variance: constant RDM triangle at location {} for task {} or task {}", d,
                             stacks[i].task, stacks[j].task));
        a(d, i, j) = a(d, j, i) = r.value_or(0.0);
    });
    return a;
}

DissimilarityTensor dissimilarity(const AffinityTensor& affinity) {
    DissimilarityTensor dis(affinity.depths(), affinity.tasks());
    for (std::size_t d = 0; d < affinity.depths(); ++d)
        for (std::size_t i = 0; i < affinity.tasks(); ++i)
            for (std::size_t j = 0; j < affinity.tasks(); ++j)
                dis(d, i, j) = i == j ? 0.0 : 1.0 - affinity(d, i, j);
    return dis;
}

void save_affinity_json(const fs::path& path, const Manifest& manifest, const AffinityTensor& affinity,
                        const DissimilarityTensor& dis) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(fmt::format("cannot write {}", path.string()));
    json tasks = json::array(), locations = json::array();
    for (const auto& t : manifest.tasks) tasks.push_back(t.name);
    for (const auto& l : manifest.locations) locations.push_back(l.name);
    out << "{\n";
    out << "  \"tasks\": " << tasks.dump() << ",\n";
    out << "  \"locations\": " << locations.dump() << ",\n";
    out << "  \"num_images\": " << manifest.num_images << ",\n";
    out << "  \"shape\": [" << affinity.depths() << ", " << affinity.tasks() << ", " << affinity.tasks() << "],\n";
    out << "  \"affinity\": ";
    write_tensor(out, affinity);
    out << ",\n  \"dissimilarity\": ";
    write_tensor(out, dis);
    out << "\n}\n";
    if (!out) fail(fmt::format("write failed for {}", path.string()));
}

AffinityFile load_affinity_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(fmt::format("missing affinity file {}", path.string()));
    json doc;
    try {
        doc = json::parse(in);
        AffinityFile file;
        file.tasks = doc.at("tasks").get<std::vector<std::string>>();
        file.locations = doc.at("locations").get<std::vector<std::string>>();
        file.affinity = read_tensor<AffinityTensor>(doc.at("affinity"), file.locations.size(), file.tasks.size(),
                                                    "affinity");
        file.dissimilarity = read_tensor<DissimilarityTensor>(doc.at("dissimilarity"), file.locations.size(),
                                                              file.tasks.size(), "dissimilarity");
        return file;
    } catch (const json::exception& e) {
        fail(fmt::format("malformed affinity file {}: {}", path.string(), e.what()));
    }
}

void save_affinity_csv(const fs::path& dir, const Manifest& manifest, const AffinityTensor& affinity) {
    fs::create_directories(dir);
    for (std::size_t d = 0; d < affinity.depths(); ++d) {
        const fs::path path = dir / fmt::format("affinity_{}.csv", manifest.locations[d].name);
        std::ofstream out(path, std::ios::trunc);
        if (!out) fail(fmt::format("cannot write {}", path.string()));
        out << "task";
        for (const auto& t : manifest.tasks) out << ',' << t.name;
        out << '\n';
        for (std::size_t i = 0; i < affinity.tasks(); ++i) {
            out << manifest.tasks[i].name;
            for (std::size_t j = 0; j < affinity.tasks(); ++j) out << ',' << fmt::format("{:.17g}", affinity(d, i, j));
            out << '\n';
        }
    }
}

}  // namespace branchplan
