// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Representation similarity analysis: per-task RDMs, the D x N x N task
// affinity tensor (Spearman correlation of RDM upper triangles) and the
// dissimilarity tensor 1 - A.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "branchplan/datamodel.hpp"

namespace branchplan {

struct RsaOptions {
    /// Map correlations against a constant vector to 0 instead of failing.
    bool coerce_zero_variance = false;
    /// Keep this many randomly chosen feature columns per location (0 = all).
    std::size_t feature_subsample = 0;
    std::uint64_t seed = 0;
    /// Feature columns read per pass by the streaming RDM path.
    std::size_t stream_columns = 256;
    unsigned threads = 0;  // 0 = default_thread_count()
};

/// Read-only view of an n x n row-major matrix.
struct SquareView {
    std::span<const double> data;
    std::size_t n = 0;

    double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
};

struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> data;

    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t size, double fill = 0.0) : n(size), data(size * size, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
    SquareView view() const { return {data, n}; }
};

/// Sample Pearson correlation accumulated in double. Throws on a constant
/// input unless `coerce` is set, in which case the result is 0.
double pearson(std::span<const double> x, std::span<const double> y, bool coerce = false);

/// Fractional ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman r_s as the Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y, bool coerce = false);

/// Strict upper triangle in row-major order (K(K-1)/2 entries).
std::vector<double> upper_triangle(SquareView m);

double spearman_triu(SquareView m1, SquareView m2, bool coerce = false);

/// Column indices retained by the seeded feature subsampler for one location.
/// The same (seed, location) pair always yields the same sorted subset.
std::vector<std::size_t> subsample_columns(std::size_t feature_dim, std::size_t keep, std::uint64_t seed,
                                           std::size_t location);

/// RDM of an in-memory feature matrix: M[i][j] = 1 - pearson(row_i, row_j).
SquareMatrix compute_rdm(const FeatureMatrix& features, const RsaOptions& opts = {},
                         std::string_view task_name = {});

/// Same RDM computed by streaming the feature file in column chunks; only
/// O(K * chunk + K^2) memory is held.
SquareMatrix compute_rdm_streaming(const Manifest& manifest, std::size_t task, std::size_t location,
                                   const RsaOptions& opts = {});

/// Per-task stack over all D locations (streaming path), stored as f32.
RdmStack rdm_stack(const Manifest& manifest, std::size_t task, const RsaOptions& opts = {});
/// Same stack computed from fully loaded feature matrices.
RdmStack rdm_stack_in_memory(const Manifest& manifest, std::size_t task, const RsaOptions& opts = {});

/// RDM stacks for every task, computed in parallel over (task, location).
std::vector<RdmStack> rdm_stacks(const Manifest& manifest, const RsaOptions& opts = {});

/// D x N x N tensor with row-major N x N slices.
class TaskTensor {
public:
    TaskTensor() = default;
    TaskTensor(std::size_t depths, std::size_t tasks, double fill = 0.0)
        : depths_(depths), tasks_(tasks), data_(depths * tasks * tasks, fill) {}

    std::size_t depths() const { return depths_; }
    std::size_t tasks() const { return tasks_; }

    double& operator()(std::size_t d, std::size_t i, std::size_t j) { return data_[(d * tasks_ + i) * tasks_ + j]; }
    double operator()(std::size_t d, std::size_t i, std::size_t j) const {
        return data_[(d * tasks_ + i) * tasks_ + j];
    }
    SquareView slice(std::size_t d) const {
        return {std::span<const double>(data_).subspan(d * tasks_ * tasks_, tasks_ * tasks_), tasks_};
    }
    const std::vector<double>& values() const { return data_; }

    friend bool operator==(const TaskTensor&, const TaskTensor&) = default;

private:
    std::size_t depths_ = 0;
    std::size_t tasks_ = 0;
    std::vector<double> data_;
};

/// Symmetric slices, unit diagonal, entries in [-1, 1].
class AffinityTensor : public TaskTensor {
public:
    using TaskTensor::TaskTensor;
};

/// Symmetric slices, zero diagonal, entries in [0, 2].
class DissimilarityTensor : public TaskTensor {
public:
    using TaskTensor::TaskTensor;
};

AffinityTensor affinity_tensor(std::span<const RdmStack> stacks, const RsaOptions& opts = {});
DissimilarityTensor dissimilarity(const AffinityTensor& affinity);

/// Writes affinity.json: metadata plus nested arrays printed with 17
/// significant digits so a reload is bit-exact.
void save_affinity_json(const std::filesystem::path& path, const Manifest& manifest, const AffinityTensor& affinity,
                        const DissimilarityTensor& dis);

struct AffinityFile {
    std::vector<std::string> tasks;
    std::vector<std::string> locations;
    AffinityTensor affinity;
    DissimilarityTensor dissimilarity;
};
AffinityFile load_affinity_json(const std::filesystem::path& path);

/// One N x N CSV per location: `<dir>/affinity_<location>.csv`.
void save_affinity_csv(const std::filesystem::path& dir, const Manifest& manifest, const AffinityTensor& affinity);

}  // namespace branchplan
