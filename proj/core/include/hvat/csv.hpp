#pragma once

#include <string>
#include <vector>

#include "hvat/training.hpp"

namespace hvat {

/// Shortest round-trip decimal form, locale-independent ('.' always).
std::string format_double(double v);

inline constexpr const char* kMetricsCsvHeader = "epoch,step,split,loss,token_accuracy,ppl";

std::string metrics_csv_string(const std::vector<MetricsRow>& rows);

/// Atomic write of the metrics table to `path`.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace hvat
