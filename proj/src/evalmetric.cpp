// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/evalmetric.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/core.h>

#include "branchplan/error.hpp"

namespace branchplan {
namespace {

constexpr const char* kModule = "evalmetric";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::optional<bool> parse_flag(const std::string& s) {
    if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
    if (s == "0" || s == "false" || s == "False" || s == "FALSE") return false;
    return std::nullopt;
}

}  // namespace

PerformanceReport mtl_performance_report(std::span<const MetricRecord> model, std::span<const MetricRecord> baseline) {
    if (model.empty()) fail("no metric records");
    if (model.size() != baseline.size())
        fail(fmt::format("task-set mismatch: model has {} tasks, baseline has {}", model.size(), baseline.size()));
    std::map<std::string, const MetricRecord*> base;
    for (const auto& r : baseline)
        if (!base.emplace(r.task, &r).second) fail(fmt::format("duplicate baseline task '{}'", r.task));

    PerformanceReport report;
    double sum = 0.0;
    for (const auto& m : model) {
        const auto it = base.find(m.task);
        if (it == base.end()) fail(fmt::format("task-set mismatch: '{}' has no baseline value", m.task));
        const MetricRecord& b = *it->second;
        if (b.lower_is_better != m.lower_is_better)
            fail(fmt::format("direction mismatch for task '{}'", m.task));
        if (!std::isfinite(m.value) || !std::isfinite(b.value))
            fail(fmt::format("non-finite metric value for task '{}'", m.task));
        if (b.value == 0.0) fail(fmt::format("zero baseline value for task '{}'", m.task));
        const double sign = m.lower_is_better ? -1.0 : 1.0;
        const double change = 100.0 * sign * (m.value - b.value) / b.value;
        report.contributions.push_back({m.task, change});
        sum += change;
    }
    report.delta = sum / static_cast<double>(model.size());
    return report;
}

double mtl_performance(std::span<const MetricRecord> model, std::span<const MetricRecord> baseline) {
    return mtl_performance_report(model, baseline).delta;
}

std::vector<MetricRecord> read_metric_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(fmt::format("cannot open {}", path.string()));
    std::vector<MetricRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(trim(f));
        if (fields.size() != 3) fail(fmt::format("{}:{}: expected 3 columns, got {}", path.string(), line_no, fields.size()));
        if (line_no == 1 && fields[0] == "task") continue;
        MetricRecord r;
        r.task = fields[0];
        try {
            std::size_t used = 0;
            r.value = std::stod(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            fail(fmt::format("{}:{}: bad value '{}'", path.string(), line_no, fields[1]));
        }
        const auto flag = parse_flag(fields[2]);
        if (!flag) fail(fmt::format("{}:{}: bad lower_is_better flag '{}'", path.string(), line_no, fields[2]));
        r.lower_is_better = *flag;
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace branchplan
