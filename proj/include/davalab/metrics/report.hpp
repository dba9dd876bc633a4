#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "davalab/core/tensor.hpp"
#include "davalab/metrics/spearman.hpp"

// Rank-correlation tables over per-model metric values. The harness feeds
// these from metrics.csv rows and renders the CSV/heatmap outputs.
namespace davalab::metrics {

struct MetricRecord {
    std::string dataset;
    std::string model;  // run identity, e.g. "dava-s3"
    std::string metric;
    double value = 0.0;
};

struct CorrelationTable {
    std::string dataset;
    std::vector<std::string> metrics;  // column order, as requested
    std::vector<std::string> models;   // rows kept, sorted by name
    Mat<double> values;                // [models x metrics]
    Mat<double> rho;                   // [metrics x metrics] Spearman
};

// Pivots records of one dataset into a models-by-metrics table and
// computes every pairwise Spearman correlation. Models missing any of the
// requested metrics are excluded with a warning.
inline CorrelationTable correlation_table(const std::vector<MetricRecord>& records,
                                          const std::vector<std::string>& metric_names,
                                          const std::string& dataset) {
    require(metric_names.size() >= 2, "correlation_table: need at least two metrics");
    std::map<std::string, std::map<std::string, double>> by_model;
    for (const MetricRecord& r : records) {
        if (r.dataset != dataset) continue;
        if (std::find(metric_names.begin(), metric_names.end(), r.metric) == metric_names.end()) continue;
        by_model[r.model][r.metric] = r.value;
    }

    CorrelationTable t;
    t.dataset = dataset;
    t.metrics = metric_names;
    for (const auto& [model, vals] : by_model) {
        bool complete = true;
        for (const std::string& m : metric_names)
            if (!vals.count(m)) {
                std::fprintf(stderr, "correlation_table: model %s lacks metric %s; excluding\n", model.c_str(),
                             m.c_str());
                complete = false;
            }
        if (complete) t.models.push_back(model);
    }
    require(t.models.size() >= 2, "correlation_table: need at least two complete models");

    t.values.resize(static_cast<Eigen::Index>(t.models.size()), static_cast<Eigen::Index>(t.metrics.size()));
    for (std::size_t i = 0; i < t.models.size(); ++i)
        for (std::size_t j = 0; j < t.metrics.size(); ++j)
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                by_model[t.models[i]][t.metrics[j]];

    const auto m = static_cast<Eigen::Index>(t.metrics.size());
    t.rho.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
        t.rho(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < m; ++b) {
            std::vector<double> xs(t.models.size()), ys(t.models.size());
            for (std::size_t i = 0; i < t.models.size(); ++i) {
                xs[i] = t.values(static_cast<Eigen::Index>(i), a);
                ys[i] = t.values(static_cast<Eigen::Index>(i), b);
            }
            const double r = spearman(xs, ys);
            t.rho(a, b) = r;
            t.rho(b, a) = r;
        }
    }
    return t;
}

}  // namespace davalab::metrics
