#include "hvat/csv.hpp"

#include <charconv>

#include "hvat/common.hpp"
#include "hvat/io.hpp"

namespace hvat {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc{}) throw ContractError("format_double: conversion failed");
    return std::string(buf, res.ptr);
}

std::string metrics_csv_string(const std::vector<MetricsRow>& rows) {
    std::string out = kMetricsCsvHeader;
    out += '\n';
    for (const MetricsRow& r : rows) {
        out += std::to_string(r.epoch);
        out += ',';
        out += std::to_string(r.step);
        out += ',';
        out += r.split;
        out += ',';
        out += format_double(r.loss);
        out += ',';
        out += format_double(r.token_accuracy);
        out += ',';
        out += format_double(r.ppl);
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    write_file_atomic(path, metrics_csv_string(rows));
}

}  // namespace hvat
