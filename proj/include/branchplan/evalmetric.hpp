// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace branchplan {

struct MetricRecord {
    std::string task;
    double value = 0.0;
    bool lower_is_better = false;
};

struct TaskContribution {
    std::string task;
    double percent = 0.0;  // signed relative change w.r.t. the baseline, in %
};

struct PerformanceReport {
    double delta = 0.0;  // mean of the contributions, in %
    std::vector<TaskContribution> contributions;  // in model order
};

/// Average per-task relative improvement of `model` over `baseline`, in
/// percent. Records are matched by task name; lower-is-better tasks count a
/// decrease as an improvement.
PerformanceReport mtl_performance_report(std::span<const MetricRecord> model, std::span<const MetricRecord> baseline);
double mtl_performance(std::span<const MetricRecord> model, std::span<const MetricRecord> baseline);

/// Reads `task,value,lower_is_better` rows (header optional; flags accept
/// 0/1/true/false).
std::vector<MetricRecord> read_metric_csv(const std::filesystem::path& path);

}  // namespace branchplan
