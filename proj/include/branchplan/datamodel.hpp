// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0
//
// Core domain types and the on-disk interchange format.
//
// A data directory holds `manifest.json` plus raw little-endian f32 tensors:
//   features/<task>/<location>.bin   [K, F] row-major, one row per image
//   rdms/<task>.bin                  [D, K, K] row-major

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace branchplan {

struct TaskId {
    std::size_t index = 0;
    std::string name;
};

struct LocationSpec {
    std::size_t index = 0;
    std::string name;
    std::size_t feature_dim = 1;
    std::uint64_t layer_params = 0;  // parameters of the sharable block ending here
    bool branchable = true;
};

struct DecoderSpec {
    std::size_t task = 0;
    std::uint64_t decoder_params = 0;
};

enum class DType { f32le };
enum class Content { features, rdms };

struct Manifest {
    std::filesystem::path root;  // directory containing manifest.json
    std::vector<TaskId> tasks;
    std::vector<LocationSpec> locations;
    std::vector<DecoderSpec> decoders;  // indexed by task
    std::size_t num_images = 0;
    DType dtype = DType::f32le;
    Content content = Content::features;

    std::size_t num_tasks() const { return tasks.size(); }
    std::size_t num_locations() const { return locations.size(); }

    std::optional<std::size_t> find_task(std::string_view name) const;
    std::uint64_t total_decoder_params() const;

    std::filesystem::path feature_path(std::size_t task, std::size_t location) const;
    std::filesystem::path rdm_path(std::size_t task) const;
};

/// Builds a manifest in memory and checks every field invariant except the
/// presence of data files. Location flags are taken as given; only the JSON
/// reader applies the default of location 0 being non-branchable.
Manifest make_manifest(std::vector<std::string> task_names, std::vector<LocationSpec> locations,
                       std::vector<std::uint64_t> decoder_params, std::size_t num_images,
                       Content content = Content::features);

/// Parses and validates the manifest document (no file checks).
Manifest manifest_from_json(const nlohmann::json& doc, std::filesystem::path root);
nlohmann::json manifest_to_json(const Manifest& manifest);

/// Loads `<dir>/manifest.json` (or the given file) and checks that every
/// referenced data file exists with the byte length implied by its shape.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& dir);

/// K x F activations for one (task, location) pair, widened to double.
struct FeatureMatrix {
    std::size_t task = 0;
    std::size_t location = 0;
    std::size_t rows = 0;  // K
    std::size_t cols = 0;  // F
    std::vector<double> data;

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

FeatureMatrix load_features(const Manifest& manifest, std::size_t task, std::size_t location);

/// Raw f32 payload helpers shared by the feature and RDM formats.
std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected_count);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);

/// Per-task D x K x K stack of representation dissimilarity matrices.
struct RdmStack {
    std::size_t task = 0;
    std::size_t depths = 0;  // D
    std::size_t images = 0;  // K
    std::vector<float> data;

    std::span<const float> slice(std::size_t d) const {
        return {data.data() + d * images * images, images * images};
    }
    float operator()(std::size_t d, std::size_t i, std::size_t j) const {
        return data[(d * images + i) * images + j];
    }
};

/// Throws unless every slice is symmetric with a zero diagonal and entries in [0, 2].
void validate_rdm_stack(const RdmStack& stack, std::string_view origin);

void save_rdm_stack(const RdmStack& stack, const std::filesystem::path& path);
RdmStack load_rdm_stack(const Manifest& manifest, std::size_t task);
RdmStack load_rdm_stack(const Manifest& manifest, std::size_t task, const std::filesystem::path& path);

}  // namespace branchplan
