#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/harness/config.hpp"
#include "davalab/harness/plot.hpp"
#include "davalab/harness/report.hpp"
#include "davalab/metrics/dci.hpp"
#include "davalab/metrics/fvae.hpp"
#include "davalab/metrics/mig.hpp"
#include "davalab/metrics/report.hpp"
#include "davalab/pipe/pipe.hpp"
#include "davalab/train/beta_vae.hpp"
#include "davalab/train/checkpoint.hpp"
#include "davalab/train/dava.hpp"
#include "davalab/vae/model.hpp"

namespace davalab::harness {

// Every evaluation derives its randomness from the run seed through fixed
// stream ids, so a metric computed standalone from a reloaded checkpoint
// matches the value the sweep recorded for the same seed.
inline constexpr std::uint64_t kStreamCollapse = 11;
inline constexpr std::uint64_t kStreamRec = 12;
inline constexpr std::uint64_t kStreamRepresentation = 13;
inline constexpr std::uint64_t kStreamFvae = 14;
inline constexpr int kRecSamples = 2048;

template <typename T>
bool collapse_probe(vae::LatentModel<T>& model, std::uint64_t seed) {
    Rng rng = Rng(seed).split(kStreamCollapse);
    return pipe::is_collapsed(model, rng);
}

template <typename T>
double eval_rec(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, std::uint64_t seed) {
    Rng rng = Rng(seed).split(kStreamRec);
    return pipe::reconstruction_mse(model, data, kRecSamples, rng);
}

template <typename T>
metrics::RepresentationSample eval_representation(vae::LatentModel<T>& model,
                                                  const synthdata::FactorDataset<T>& data, int n,
                                                  std::uint64_t seed) {
    Rng rng = Rng(seed).split(kStreamRepresentation);
    return metrics::encode_representation(model, data, n, rng);
}

template <typename T>
double eval_fvae(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int votes,
                 std::uint64_t seed) {
    metrics::FvaeConfig fc;
    fc.votes = votes;
    Rng rng = Rng(seed).split(kStreamFvae);
    return metrics::fvae_metric(model, data, fc, rng);
}

struct SweepOutcome {
    int completed = 0;     // runs trained and/or evaluated by this invocation
    int failed = 0;        // runs that failed in this invocation
    int skipped = 0;       // runs whose rows were already present
    int failed_total = 0;  // runs recorded as failed, including prior invocations

    bool clean() const { return failed_total == 0; }
};

namespace sweepdetail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + path.string());
}

inline std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T>
void write_run_files(const train::TrainState<T>& st, const std::filesystem::path& dir) {
    {
        std::ofstream out(dir / "c_trajectory.csv");
        out << "step,C\n";
        for (const auto& [step, c] : st.c_trajectory) out << step << ',' << g17(c) << '\n';
    }
    {
        std::ofstream out(dir / "diagnostics.csv");
        out << "step,recon,kl,acc,mu_base\n";
        for (const train::StepDiagnostics& d : st.history)
            out << d.step << ',' << format_value(d.recon_ce) << ',' << format_value(d.kl_total) << ','
                << format_value(d.disc_accuracy) << ',' << format_value(d.mu_base) << '\n';
    }
}

inline std::optional<double> read_rec(const std::filesystem::path& run_dir) {
    std::ifstream in(run_dir / "rec.txt");
    if (!in) return std::nullopt;
    double v = 0.0;
    if (!(in >> v)) return std::nullopt;
    return v;
}

inline std::string read_status(const std::filesystem::path& run_dir) {
    std::ifstream in(run_dir / "status.txt");
    std::string s;
    if (in) std::getline(in, s);
    return s;
}

inline Trajectory read_trajectory(const std::filesystem::path& run_dir) {
    std::ifstream in(run_dir / "c_trajectory.csv");
    if (!in) throw std::runtime_error("missing " + (run_dir / "c_trajectory.csv").string());
    std::string line;
    std::getline(in, line);
    Trajectory t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("malformed trajectory line: " + line);
        t.steps.push_back(std::stol(line.substr(0, comma)));
        t.values.push_back(std::stod(line.substr(comma + 1)));
    }
    return t;
}

// One sweep cell: an architecture setting crossed with a seed.
struct RunPlan {
    std::size_t arch_index = 0;
    std::uint64_t seed = 0;
    std::string digest;
    std::string run_id;
};

}  // namespace sweepdetail

// Trains and evaluates every architecture x seed cell of the sweep,
// appending metric rows after each run so an interrupted sweep keeps its
// finished work. Re-running over the same output directory skips cells
// whose rows are already present; a re-run of a finished sweep rewrites
// nothing and leaves metrics.csv byte-identical.
template <typename T = float>
SweepOutcome run_sweep(const SweepConfig& cfg, const std::filesystem::path& out, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    auto say = [&](const std::string& msg) {
        if (log) *log << msg << "\n" << std::flush;
    };
    fs::create_directories(out / "runs");

    // The manifest is itself a valid sweep config; an output directory
    // belongs to exactly one of them.
    const std::string manifest = sweep_config_to_json(cfg).dump(2) + "\n";
    const fs::path manifest_path = out / "sweep_manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        std::stringstream ss;
        ss << in.rdbuf();
        if (ss.str() != manifest)
            throw ConfigError(manifest_path.string() +
                              " was written by a different sweep config; use a fresh output directory");
    } else {
        sweepdetail::write_text(manifest_path, manifest);
    }

    const synthdata::FactorDataset<T> data = synthdata::FactorDataset<T>::toysprites(cfg.dataset.sprites);

    const fs::path csv = out / "metrics.csv";
    std::map<std::string, MetricRow> by_key;
    if (fs::exists(csv))
        for (MetricRow& r : load_metrics_csv(csv)) by_key[r.key()] = std::move(r);

    std::vector<std::string> immediate_metrics;  // everything but pipe_rec
    for (const std::string& m : cfg.metrics)
        if (m != "pipe_rec") immediate_metrics.push_back(m);
    const bool want_pipe_rec =
        std::find(cfg.metrics.begin(), cfg.metrics.end(), "pipe_rec") != cfg.metrics.end();

    std::vector<sweepdetail::RunPlan> plans;
    for (std::size_t ai = 0; ai < cfg.architectures.size(); ++ai)
        for (std::uint64_t seed : cfg.seeds) {
            sweepdetail::RunPlan p;
            p.arch_index = ai;
            p.seed = seed;
            p.digest = digest_hex(cfg.architectures[ai]);
            p.run_id = cfg.architectures[ai].architecture + "-" + p.digest + "-s" + std::to_string(seed);
            plans.push_back(std::move(p));
        }

    auto row_key = [&](const sweepdetail::RunPlan& p, const std::string& metric) {
        MetricRow r;
        r.dataset = cfg.dataset.name;
        r.architecture = cfg.architectures[p.arch_index].architecture;
        r.digest = p.digest;
        r.seed = p.seed;
        r.metric = metric;
        return r.key();
    };

    SweepOutcome outcome;
    std::map<std::string, bool> run_failed;       // run_id -> recorded as failed
    std::map<std::string, MetricRow> pipe_rows;   // run_id -> pipe row (for pipe_rec)

    auto make_row = [&](const sweepdetail::RunPlan& p, const std::string& metric, double value,
                        const std::string& sampler, const std::string& flags) {
        MetricRow r;
        r.dataset = cfg.dataset.name;
        r.architecture = cfg.architectures[p.arch_index].architecture;
        r.digest = p.digest;
        r.seed = p.seed;
        r.metric = metric;
        r.value = value;
        r.sampler = sampler;
        r.flags = flags;
        return r;
    };

    auto append_failed_rows = [&](const sweepdetail::RunPlan& p) {
        std::vector<MetricRow> rows;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const std::string& m : cfg.metrics) rows.push_back(make_row(p, m, nan, "", "failed"));
        append_rows(csv, rows);
        for (const MetricRow& r : rows) by_key[r.key()] = r;
        run_failed[p.run_id] = true;
    };

    for (const sweepdetail::RunPlan& p : plans) {
        const TrainSpec& spec = cfg.architectures[p.arch_index];
        const fs::path run_dir = out / "runs" / p.run_id;

        std::size_t have = 0;
        for (const std::string& m : immediate_metrics)
            if (by_key.count(row_key(p, m))) ++have;
        if (have > 0 && have < immediate_metrics.size())
            throw std::runtime_error("metrics.csv holds a partial row block for " + p.run_id +
                                     "; remove the file or the stray rows and re-run");

        if (have == immediate_metrics.size()) {
            // Rows already recorded: nothing to recompute. Revisit the pipe
            // row so the final pipe_rec pass sees the same population.
            ++outcome.skipped;
            say("skip " + p.run_id + " (rows present)");
            for (const std::string& m : cfg.metrics) {
                const auto it = by_key.find(row_key(p, m));
                if (it == by_key.end()) continue;
                if (it->second.flags == "failed") run_failed[p.run_id] = true;
                if (m == "pipe") pipe_rows[p.run_id] = it->second;
            }
            continue;
        }

        fs::create_directories(run_dir);
        const std::string status = sweepdetail::read_status(run_dir);
        if (status == "failed") {
            // A previous invocation recorded the failure but was interrupted
            // before appending the rows.
            say("fail " + p.run_id + " (recorded earlier)");
            append_failed_rows(p);
            ++outcome.failed;
            continue;
        }

        train::TrainState<T> st;
        bool trained = false;
        try {
            if (status == "ok") {
                say("eval " + p.run_id + " (checkpoint present)");
                st = train::load_checkpoint<T>(run_dir / "checkpoint");
            } else {
                say("train " + p.run_id);
                train::CheckpointSink<T> sink = [&](const train::TrainState<T>& s, bool final) {
                    auto& mut = const_cast<train::TrainState<T>&>(s);
                    train::save_checkpoint(mut,
                                           final ? run_dir / "checkpoint"
                                                 : run_dir / ("checkpoint-" + std::to_string(s.step)));
                };
                if (spec.architecture == "beta_vae")
                    st = train::train_beta_vae(data, spec.as_beta_vae(), p.seed, sink);
                else
                    st = train::train(data, spec.dava, p.seed, nullptr, sink);
                trained = true;
            }
        } catch (const std::exception& e) {
            say("fail " + p.run_id + ": " + e.what());
            sweepdetail::write_text(run_dir / "error.txt", std::string(e.what()) + "\n");
            sweepdetail::write_text(run_dir / "status.txt", "failed\n");
            append_failed_rows(p);
            ++outcome.failed;
            continue;
        }

        vae::VaeModel<T> model(st.encoder, st.decoder);
        if (trained) {
            sweepdetail::write_run_files(st, run_dir);
            sweepdetail::write_text(run_dir / "rec.txt", sweepdetail::g17(eval_rec(model, data, p.seed)) + "\n");
            sweepdetail::write_text(run_dir / "status.txt", "ok\n");
        } else if (!sweepdetail::read_rec(run_dir)) {
            sweepdetail::write_text(run_dir / "rec.txt", sweepdetail::g17(eval_rec(model, data, p.seed)) + "\n");
        }

        const bool collapsed = collapse_probe(model, p.seed);
        const std::string base_flags = collapsed ? "collapsed" : "";
        std::optional<metrics::RepresentationSample> repr;
        auto representation = [&]() -> const metrics::RepresentationSample& {
            if (!repr) repr = eval_representation(model, data, cfg.eval_samples, p.seed);
            return *repr;
        };

        std::vector<MetricRow> rows;
        for (const std::string& m : immediate_metrics) {
            try {
                if (m == "pipe") {
                    const pipe::PipeResult r = pipe::pipe(model, data, cfg.pipe_cfg, p.seed);
                    rows.push_back(make_row(p, m, r.score, r.sampler, base_flags));
                } else if (m == "mig") {
                    rows.push_back(make_row(p, m, metrics::mig(representation()), "", base_flags));
                } else if (m == "dci") {
                    rows.push_back(make_row(p, m, metrics::dci_disentanglement(representation()), "", base_flags));
                } else if (m == "fvae") {
                    rows.push_back(make_row(p, m, eval_fvae(model, data, cfg.fvae_votes, p.seed), "", base_flags));
                }
            } catch (const std::exception& e) {
                say("metric " + m + " failed for " + p.run_id + ": " + e.what());
                rows.push_back(make_row(p, m, std::numeric_limits<double>::quiet_NaN(), "", "failed"));
            }
        }
        append_rows(csv, rows);
        for (const MetricRow& r : rows) {
            by_key[r.key()] = r;
            if (r.metric == "pipe") pipe_rows[p.run_id] = r;
        }
        ++outcome.completed;
    }

    // pipe_rec normalizes against the reconstruction errors of the whole
    // sweep population, so its rows can only be written once every model
    // has been evaluated.
    if (want_pipe_rec) {
        std::vector<double> population;
        for (const sweepdetail::RunPlan& p : plans)
            if (!run_failed[p.run_id])
                if (auto rec = sweepdetail::read_rec(out / "runs" / p.run_id)) population.push_back(*rec);
        std::vector<MetricRow> rows;
        for (const sweepdetail::RunPlan& p : plans) {
            if (by_key.count(row_key(p, "pipe_rec"))) continue;  // failed runs wrote theirs already
            const auto pit = pipe_rows.find(p.run_id);
            const auto rec = sweepdetail::read_rec(out / "runs" / p.run_id);
            MetricRow row;
            if (pit == pipe_rows.end() || pit->second.flags == "failed" || !rec || population.empty()) {
                say("pipe_rec unavailable for " + p.run_id);
                row = make_row(p, "pipe_rec", std::numeric_limits<double>::quiet_NaN(), "", "failed");
            } else {
                const double score = canonical_value(pit->second.value);
                const double v = pipe::pipe_rec(score, *rec, population, cfg.alpha);
                row = make_row(p, "pipe_rec", v, pit->second.sampler, pit->second.flags);
            }
            rows.push_back(row);
            by_key[row.key()] = row;
        }
        if (!rows.empty()) append_rows(csv, rows);
    }

    for (const auto& [run_id, failed] : run_failed)
        if (failed) ++outcome.failed_total;

    // Refresh the derived outputs: the capacity plot over successful runs
    // and the summary table over everything recorded so far.
    std::vector<BandSeries> series;
    for (std::size_t ai = 0; ai < cfg.architectures.size(); ++ai) {
        std::vector<Trajectory> runs;
        std::string digest;
        for (const sweepdetail::RunPlan& p : plans) {
            if (p.arch_index != ai || run_failed[p.run_id]) continue;
            digest = p.digest;
            if (sweepdetail::read_status(out / "runs" / p.run_id) == "ok")
                runs.push_back(sweepdetail::read_trajectory(out / "runs" / p.run_id));
        }
        if (runs.empty()) continue;
        std::string label = cfg.architectures[ai].architecture;
        for (std::size_t aj = 0; aj < cfg.architectures.size(); ++aj)
            if (aj != ai && cfg.architectures[aj].architecture == label) {
                label += "-" + digest.substr(0, 4);
                break;
            }
        series.push_back(capacity_band(runs, label));
    }
    if (!series.empty()) plot_capacity(series, out / "capacity.bmp");

    const std::vector<MetricRow> all_rows = load_metrics_csv(csv);
    sweepdetail::write_text(out / "summary.txt", summary_table(summarize(all_rows)));
    return outcome;
}

// Renders the cross-metric report for recorded rows: a summary table, and
// per dataset a Spearman rank-correlation matrix (CSV + heatmap) over the
// models that have every metric. Failed rows and collapsed models are
// excluded from correlations.
inline void write_report(const std::vector<MetricRow>& rows, const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    fs::create_directories(out);
    sweepdetail::write_text(out / "summary.txt", summary_table(summarize(rows)));

    std::set<std::string> datasets;
    for (const MetricRow& r : rows) datasets.insert(r.dataset);
    std::set<std::string> collapsed_models;
    for (const MetricRow& r : rows)
        if (r.flags == "collapsed") collapsed_models.insert(r.dataset + "|" + r.run_id());

    for (const std::string& ds : datasets) {
        std::vector<metrics::MetricRecord> records;
        std::set<std::string> metric_set;
        for (const MetricRow& r : rows) {
            if (r.dataset != ds || r.flags == "failed") continue;
            if (collapsed_models.count(r.dataset + "|" + r.run_id())) continue;
            records.push_back({r.dataset, r.run_id(), r.metric, r.value});
            metric_set.insert(r.metric);
        }
        std::vector<std::string> names;  // canonical metric order
        for (const std::string& m : known_metrics())
            if (metric_set.count(m)) names.push_back(m);
        if (names.size() < 2) {
            std::fprintf(stderr, "report: dataset %s has fewer than two metrics; skipping\n", ds.c_str());
            continue;
        }
        metrics::CorrelationTable table;
        try {
            table = metrics::correlation_table(records, names, ds);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "report: dataset %s skipped: %s\n", ds.c_str(), e.what());
            continue;
        }
        std::ostringstream os;
        os << "metric";
        for (const std::string& m : table.metrics) os << ',' << m;
        os << '\n';
        for (std::size_t i = 0; i < table.metrics.size(); ++i) {
            os << table.metrics[i];
            for (std::size_t j = 0; j < table.metrics.size(); ++j)
                os << ',' << format_value(table.rho(static_cast<int>(i), static_cast<int>(j)));
            os << '\n';
        }
        sweepdetail::write_text(out / ("correlation_" + ds + ".csv"), os.str());
        plot_heatmap(table.rho, table.metrics, out / ("heatmap_" + ds + ".bmp"));
    }
}

}  // namespace davalab::harness
