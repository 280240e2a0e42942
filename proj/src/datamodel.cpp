// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/core.h>

#include "branchplan/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace branchplan {
namespace {

constexpr const char* kModule = "datamodel";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

void check_name(const std::string& name, std::string_view what) {
    if (name.empty()) fail(fmt::format("{} name must be non-empty", what));
    if (name == "." || name == ".." || name.find_first_of("/\\") != std::string::npos)
        fail(fmt::format("{} name '{}' is not usable as a file name", what, name));
}

void validate_fields(const Manifest& m) {
    if (m.tasks.empty()) fail("manifest lists no tasks");
    if (m.locations.empty()) fail("manifest lists no locations");
    if (m.num_images < 3) fail(fmt::format("num_images must be >= 3 (got {})", m.num_images));
    if (m.tasks.size() > 0xFFFF) fail("too many tasks");

    std::set<std::string> seen;
    for (std::size_t i = 0; i < m.tasks.size(); ++i) {
        check_name(m.tasks[i].name, "task");
        if (m.tasks[i].index != i) fail("task indices must be dense");
        if (!seen.insert(m.tasks[i].name).second)
            fail(fmt::format("duplicate task name '{}'", m.tasks[i].name));
    }
    seen.clear();
    for (std::size_t d = 0; d < m.locations.size(); ++d) {
        const auto& loc = m.locations[d];
        check_name(loc.name, "location");
        if (loc.index != d) fail("location indices must be dense");
        if (loc.feature_dim < 1) fail(fmt::format("location '{}': feature_dim must be >= 1", loc.name));
        if (!seen.insert(loc.name).second) fail(fmt::format("duplicate location name '{}'", loc.name));
    }
    if (m.decoders.size() != m.tasks.size())
        fail(fmt::format("expected one decoder entry per task ({}), got {}", m.tasks.size(), m.decoders.size()));
    for (std::size_t t = 0; t < m.decoders.size(); ++t)
        if (m.decoders[t].task != t) fail("decoder entries must map one-to-one onto tasks");
}

template <class T>
T require(const json& obj, const char* key, std::string_view where) {
    if (!obj.is_object() || !obj.contains(key))
        fail(fmt::format("schema violation: {} is missing '{}'", where, key));
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(fmt::format("schema violation: {}.{} has the wrong type", where, key));
    }
}

std::uint64_t require_count(const json& obj, const char* key, std::string_view where) {
    if (!obj.is_object() || !obj.contains(key))
        fail(fmt::format("schema violation: {} is missing '{}'", where, key));
    const json& v = obj.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        fail(fmt::format("schema violation: {}.{} must be a non-negative integer", where, key));
    return v.get<std::uint64_t>();
}

void check_file_size(const fs::path& path, std::uintmax_t expected) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) fail(fmt::format("missing data file {}", path.string()));
    const auto actual = fs::file_size(path, ec);
    if (ec) fail(fmt::format("cannot stat {}", path.string()));
    if (actual != expected)
        fail(fmt::format("size mismatch for {}: expected {} bytes, got {}", path.string(), expected, actual));
}

float from_le(std::uint32_t bits) {
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    return std::bit_cast<float>(bits);
}

std::uint32_t to_le(float value) {
    auto bits = std::bit_cast<std::uint32_t>(value);
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    return bits;
}

}  // namespace

std::optional<std::size_t> Manifest::find_task(std::string_view name) const {
    for (const auto& t : tasks)
        if (t.name == name) return t.index;
    return std::nullopt;
}

std::uint64_t Manifest::total_decoder_params() const {
    std::uint64_t total = 0;
    for (const auto& d : decoders) total += d.decoder_params;
    return total;
}

fs::path Manifest::feature_path(std::size_t task, std::size_t location) const {
    return root / "features" / tasks.at(task).name / (locations.at(location).name + ".bin");
}

fs::path Manifest::rdm_path(std::size_t task) const { return root / "rdms" / (tasks.at(task).name + ".bin"); }

Manifest make_manifest(std::vector<std::string> task_names, std::vector<LocationSpec> locations,
                       std::vector<std::uint64_t> decoder_params, std::size_t num_images, Content content) {
    Manifest m;
    for (std::size_t i = 0; i < task_names.size(); ++i) m.tasks.push_back({i, std::move(task_names[i])});
    for (std::size_t d = 0; d < locations.size(); ++d) locations[d].index = d;
    m.locations = std::move(locations);
    for (std::size_t t = 0; t < decoder_params.size(); ++t) m.decoders.push_back({t, decoder_params[t]});
    m.num_images = num_images;
    m.content = content;
    validate_fields(m);
    return m;
}

Manifest manifest_from_json(const json& doc, fs::path root) {
    if (!doc.is_object()) fail("schema violation: manifest must be a JSON object");
    Manifest m;
    m.root = std::move(root);

    const auto task_names = require<std::vector<std::string>>(doc, "tasks", "manifest");
    for (std::size_t i = 0; i < task_names.size(); ++i) {
        if (std::find(task_names.begin(), task_names.begin() + i, task_names[i]) != task_names.begin() + i)
            fail(fmt::format("duplicate task name '{}'", task_names[i]));
        m.tasks.push_back({i, task_names[i]});
    }

    const json& locs = doc.contains("locations") ? doc.at("locations") : json();
    if (!locs.is_array()) fail("schema violation: manifest.locations must be an array");
    for (std::size_t d = 0; d < locs.size(); ++d) {
        const std::string where = fmt::format("locations[{}]", d);
        LocationSpec loc;
        loc.index = d;
        loc.name = require<std::string>(locs[d], "name", where);
        loc.feature_dim = require_count(locs[d], "feature_dim", where);
        loc.layer_params = require_count(locs[d], "layer_params", where);
        loc.branchable = locs[d].contains("branchable") ? require<bool>(locs[d], "branchable", where) : d != 0;
        m.locations.push_back(std::move(loc));
    }

    const json& decs = doc.contains("decoders") ? doc.at("decoders") : json();
    if (!decs.is_array()) fail("schema violation: manifest.decoders must be an array");
    std::vector<std::optional<std::uint64_t>> per_task(m.tasks.size());
    for (std::size_t k = 0; k < decs.size(); ++k) {
        const std::string where = fmt::format("decoders[{}]", k);
        const auto name = require<std::string>(decs[k], "task", where);
        const auto idx = m.find_task(name);
        if (!idx) fail(fmt::format("{} references unknown task '{}'", where, name));
        if (per_task[*idx]) fail(fmt::format("duplicate decoder entry for task '{}'", name));
        per_task[*idx] = require_count(decs[k], "decoder_params", where);
    }
    for (std::size_t t = 0; t < per_task.size(); ++t) {
        if (!per_task[t]) fail(fmt::format("missing decoder entry for task '{}'", m.tasks[t].name));
        m.decoders.push_back({t, *per_task[t]});
    }

    m.num_images = require_count(doc, "num_images", "manifest");
    const auto dtype = require<std::string>(doc, "dtype", "manifest");
    if (dtype != "f32le") fail(fmt::format("unsupported dtype '{}'", dtype));
    const auto content = require<std::string>(doc, "content", "manifest");
    if (content == "features")
        m.content = Content::features;
    else if (content == "rdms")
        m.content = Content::rdms;
    else
        fail(fmt::format("schema violation: content must be \"features\" or \"rdms\", got '{}'", content));

    validate_fields(m);
    return m;
}

json manifest_to_json(const Manifest& m) {
    json doc;
    doc["tasks"] = json::array();
    for (const auto& t : m.tasks) doc["tasks"].push_back(t.name);
    doc["locations"] = json::array();
    for (const auto& l : m.locations)
        doc["locations"].push_back({{"name", l.name},
                                    {"feature_dim", l.feature_dim},
                                    {"layer_params", l.layer_params},
                                    {"branchable", l.branchable}});
    doc["decoders"] = json::array();
    for (const auto& d : m.decoders)
        doc["decoders"].push_back({{"task", m.tasks[d.task].name}, {"decoder_params", d.decoder_params}});
    doc["num_images"] = m.num_images;
    doc["dtype"] = "f32le";
    doc["content"] = m.content == Content::features ? "features" : "rdms";
    return doc;
}

Manifest load_manifest(const fs::path& path) {
    std::error_code ec;
    const fs::path file = fs::is_directory(path, ec) ? path / "manifest.json" : path;
    std::ifstream in(file);
    if (!in) fail(fmt::format("missing manifest file {}", file.string()));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(fmt::format("schema violation: {} is not valid JSON ({})", file.string(), e.what()));
    }
    Manifest m = manifest_from_json(doc, file.parent_path());

    const std::uintmax_t k = m.num_images;
    if (m.content == Content::features) {
        for (std::size_t t = 0; t < m.num_tasks(); ++t)
            for (std::size_t d = 0; d < m.num_locations(); ++d)
                check_file_size(m.feature_path(t, d), 4 * k * m.locations[d].feature_dim);
    } else {
        for (std::size_t t = 0; t < m.num_tasks(); ++t)
            check_file_size(m.rdm_path(t), 4 * m.num_locations() * k * k);
    }
    return m;
}

void save_manifest(const Manifest& manifest, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    if (!out) fail(fmt::format("cannot write {}", (dir / "manifest.json").string()));
    out << manifest_to_json(manifest).dump(2) << '\n';
}

std::vector<float> read_f32_file(const fs::path& path, std::size_t expected_count) {
    check_file_size(path, 4 * static_cast<std::uintmax_t>(expected_count));
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(fmt::format("cannot open {}", path.string()));
    std::vector<std::uint32_t> raw(expected_count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(4 * expected_count));
    if (!in) fail(fmt::format("short read from {}", path.string()));
    std::vector<float> values(expected_count);
    std::transform(raw.begin(), raw.end(), values.begin(), from_le);
    return values;
}

void write_f32_file(const fs::path& path, std::span<const float> values) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<std::uint32_t> raw(values.size());
    std::transform(values.begin(), values.end(), raw.begin(), to_le);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(fmt::format("cannot write {}", path.string()));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(4 * raw.size()));
    if (!out) fail(fmt::format("write failed for {}", path.string()));
}

FeatureMatrix load_features(const Manifest& manifest, std::size_t task, std::size_t location) {
    if (manifest.content != Content::features) fail("manifest content is 'rdms'; no feature files to load");
    FeatureMatrix fm;
    fm.task = task;
    fm.location = location;
    fm.rows = manifest.num_images;
    fm.cols = manifest.locations.at(location).feature_dim;
    const auto raw = read_f32_file(manifest.feature_path(task, location), fm.rows * fm.cols);
    fm.data.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!std::isfinite(raw[i]))
            fail(fmt::format("non-finite activation, task={}, image={}, location={}", manifest.tasks[task].name,
                             i / fm.cols, manifest.locations[location].name));
        fm.data[i] = raw[i];
    }
    return fm;
}

void validate_rdm_stack(const RdmStack& s, std::string_view origin) {
    if (s.data.size() != s.depths * s.images * s.images)
        fail(fmt::format("{}: RDM payload size does not match {}x{}x{}", origin, s.depths, s.images, s.images));
    for (std::size_t d = 0; d < s.depths; ++d) {
        for (std::size_t i = 0; i < s.images; ++i) {
            if (s(d, i, i) != 0.0f)
                fail(fmt::format("{}: RDM slice {} has non-zero diagonal at image {} ({})", origin, d, i, s(d, i, i)));
            for (std::size_t j = i + 1; j < s.images; ++j) {
                const float v = s(d, i, j);
                if (!(v >= 0.0f && v <= 2.0f))
                    fail(fmt::format("{}: RDM slice {} entry ({}, {}) = {} outside [0, 2]", origin, d, i, j, v));
                if (v != s(d, j, i))
                    fail(fmt::format("{}: RDM slice {} is asymmetric at ({}, {})", origin, d, i, j));
            }
        }
    }
}

void save_rdm_stack(const RdmStack& stack, const fs::path& path) {
    validate_rdm_stack(stack, path.string());
    write_f32_file(path, stack.data);
}

RdmStack load_rdm_stack(const Manifest& manifest, std::size_t task) {
    return load_rdm_stack(manifest, task, manifest.rdm_path(task));
}

RdmStack load_rdm_stack(const Manifest& manifest, std::size_t task, const fs::path& path) {
    RdmStack s;
    s.task = task;
    s.depths = manifest.num_locations();
    s.images = manifest.num_images;
    s.data = read_f32_file(path, s.depths * s.images * s.images);
    validate_rdm_stack(s, path.string());
    return s;
}

}  // namespace branchplan
