#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/harness/config.hpp"

// metrics.csv: the single exchange format between training and reporting.
// One row per (dataset, architecture, digest, seed, metric); that tuple is
// the uniqueness key, enforced on load. Values are printed with %.10g so a
// deterministic re-run reproduces the file byte for byte.
namespace davalab::harness {

struct MetricRow {
    std::string dataset;
    std::string architecture;
    std::string digest;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
    std::string sampler;  // pipe rows carry the FP sampler; otherwise empty
    std::string flags;    // "", "collapsed", or "failed"

    std::string key() const {
        return dataset + "|" + architecture + "|" + digest + "|" + std::to_string(seed) + "|" + metric;
    }

    std::string run_id() const { return architecture + "-" + digest + "-s" + std::to_string(seed); }
};

inline const char* kMetricsHeader = "dataset,architecture,digest,seed,metric,value,sampler,flags";

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// Round-trips a score through its on-disk precision, so derived values
// (like pipe_rec) come out identical whether computed in one pass or
// recomputed from a persisted file.
inline double canonical_value(double v) { return std::strtod(format_value(v).c_str(), nullptr); }

inline std::string row_to_csv(const MetricRow& r) {
    for (const std::string* field : {&r.dataset, &r.architecture, &r.digest, &r.metric, &r.sampler, &r.flags})
        if (field->find_first_of(",\n\"") != std::string::npos)
            throw std::invalid_argument("metrics.csv fields must not contain commas, quotes, or newlines");
    std::ostringstream os;
    os << r.dataset << ',' << r.architecture << ',' << r.digest << ',' << r.seed << ',' << r.metric << ','
       << format_value(r.value) << ',' << r.sampler << ',' << r.flags;
    return os.str();
}

// Appends rows, writing the header first when the file does not exist yet.
inline void append_rows(const std::filesystem::path& csv, const std::vector<MetricRow>& rows) {
    const bool fresh = !std::filesystem::exists(csv);
    std::ofstream out(csv, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + csv.string() + " for appending");
    if (fresh) out << kMetricsHeader << '\n';
    for (const MetricRow& r : rows) out << row_to_csv(r) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("short write to " + csv.string());
}

inline std::vector<MetricRow> load_metrics_csv(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw std::runtime_error(csv.string() + ": missing or unexpected header");
    std::vector<MetricRow> rows;
    std::map<std::string, bool> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (fields.size() != 8)
            throw std::runtime_error(csv.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
        MetricRow r;
        r.dataset = fields[0];
        r.architecture = fields[1];
        r.digest = fields[2];
        try {
            r.seed = std::stoull(fields[3]);
            r.value = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw std::runtime_error(csv.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
        r.metric = fields[4];
        r.sampler = fields[6];
        r.flags = fields[7];
        if (seen.count(r.key()))
            throw std::runtime_error(csv.string() + ":" + std::to_string(lineno) + ": duplicate key " + r.key());
        seen[r.key()] = true;
        rows.push_back(std::move(r));
    }
    return rows;
}

// One summary cell: mean and sample standard deviation of a metric over
// the seeds of one architecture setting. Cells touched by a collapsed run
// are reported in parentheses and skipped by best-of comparisons; failed
// rows never contribute values.
struct SummaryCell {
    std::string dataset;
    std::string architecture;
    std::string digest;
    std::string metric;
    int n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    bool collapsed = false;
};

inline std::vector<SummaryCell> summarize(const std::vector<MetricRow>& rows) {
    std::map<std::string, std::pair<SummaryCell, std::vector<double>>> groups;
    for (const MetricRow& r : rows) {
        if (r.flags == "failed") continue;
        const std::string gk = r.dataset + "|" + r.architecture + "|" + r.digest + "|" + r.metric;
        auto& [cell, values] = groups[gk];
        if (values.empty()) {
            cell.dataset = r.dataset;
            cell.architecture = r.architecture;
            cell.digest = r.digest;
            cell.metric = r.metric;
        }
        values.push_back(r.value);
        if (r.flags == "collapsed") cell.collapsed = true;
    }
    std::vector<SummaryCell> out;
    for (auto& [gk, group] : groups) {
        auto& [cell, values] = group;
        cell.n = static_cast<int>(values.size());
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        cell.mean = mean;
        cell.stddev = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
        out.push_back(cell);
    }
    return out;  // map iteration: sorted by (dataset, architecture, digest, metric)
}

// Best architecture setting per (dataset, metric), by mean; every metric
// here is higher-is-better. Collapsed cells are excluded.
inline std::map<std::string, std::string> best_by_metric(const std::vector<SummaryCell>& cells) {
    std::map<std::string, std::string> best;
    std::map<std::string, double> best_mean;
    for (const SummaryCell& c : cells) {
        if (c.collapsed || c.n == 0 || !std::isfinite(c.mean)) continue;
        const std::string k = c.dataset + "|" + c.metric;
        if (!best.count(k) || c.mean > best_mean[k]) {
            best[k] = c.architecture + "-" + c.digest;
            best_mean[k] = c.mean;
        }
    }
    return best;
}

inline std::string summary_table(const std::vector<SummaryCell>& cells) {
    const auto best = best_by_metric(cells);
    std::ostringstream os;
    os << "dataset            architecture  digest            metric    n  mean+-std\n";
    for (const SummaryCell& c : cells) {
        std::ostringstream val;
        val << format_value(c.mean) << "+-" << format_value(c.stddev);
        std::string shown = c.collapsed ? "(" + val.str() + ")" : val.str();
        const auto it = best.find(c.dataset + "|" + c.metric);
        if (it != best.end() && it->second == c.architecture + "-" + c.digest) shown += " *";
        os << c.dataset;
        for (std::size_t i = c.dataset.size(); i < 19; ++i) os << ' ';
        os << c.architecture;
        for (std::size_t i = c.architecture.size(); i < 14; ++i) os << ' ';
        os << c.digest;
        for (std::size_t i = c.digest.size(); i < 18; ++i) os << ' ';
        os << c.metric;
        for (std::size_t i = c.metric.size(); i < 10; ++i) os << ' ';
        os << c.n << "  " << shown << "\n";
    }
    return os.str();
}

}  // namespace davalab::harness
