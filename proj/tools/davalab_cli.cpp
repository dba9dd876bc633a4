// davalab: command-line front end for the disentanglement workbench.
//
//   davalab generate-data --config ds.json --out data/toysprites32.f32
//   davalab train --config arch.json --dataset toysprites32 --seed 1 --out runs/a
//   davalab eval-pipe --checkpoint runs/a/checkpoint --dataset toysprites32 --seed 1
//   davalab eval-supervised --checkpoint runs/a/checkpoint --dataset toysprites32
//   davalab sweep --config sweep.json --out sweeps/s1
//   davalab report --metrics sweeps/s1/metrics.csv --out sweeps/s1/report
//
// Exit codes: 0 success, 1 configuration error, 2 run failure, 3 sweep
// finished with failed runs.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "davalab/harness/sweep.hpp"

namespace fs = std::filesystem;
using T = float;

namespace {

using davalab::harness::ConfigError;

fs::path cache_dir() {
    if (const char* env = std::getenv("DAVA_LAB_CACHE"); env && *env) return fs::path(env);
    if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "davalab";
    return fs::path(".davalab-cache");
}

fs::path resolve_dataset(const std::string& arg) {
    if (fs::exists(arg)) return fs::path(arg);
    for (const fs::path& cand : {cache_dir() / arg, cache_dir() / (arg + ".f32")})
        if (fs::exists(cand)) return cand;
    throw ConfigError("dataset not found: " + arg + " (also looked under " + cache_dir().string() + ")");
}

davalab::harness::Json load_config_or_empty(const std::string& path) {
    return path.empty() ? davalab::harness::Json::object() : davalab::harness::load_json_file(path);
}

void check_image_size(const davalab::train::TrainState<T>& st, const davalab::synthdata::FactorDataset<T>& data) {
    if (st.cfg.network.image_size != data.height())
        throw ConfigError("checkpoint expects " + std::to_string(st.cfg.network.image_size) +
                          "x" + std::to_string(st.cfg.network.image_size) + " images but the dataset is " +
                          std::to_string(data.height()) + "x" + std::to_string(data.width()));
}

std::vector<double> read_population(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rec population file " + path);
    std::vector<double> vals;
    double v = 0.0;
    while (in >> v) vals.push_back(v);
    return vals;
}

}  // namespace

int main(int argc, char** argv) {
    namespace hn = davalab::harness;
    namespace tn = davalab::train;

    CLI::App app{"davalab: adversarial VAE training and disentanglement evaluation"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    std::string profile_name = "desk";
    std::string out_flag;
    app.add_option("--seed", seed, "base random seed")->capture_default_str();
    CLI::Option* profile_opt = app.add_option("--profile", profile_name, "scale preset")
                                   ->check(CLI::IsMember({"desk", "full"}))
                                   ->capture_default_str();
    app.add_option("--out", out_flag, "output file or directory");

    int exit_code = 0;

    // generate-data ---------------------------------------------------------
    auto* gen = app.add_subcommand("generate-data", "render a factor dataset to a raw float32 block");
    gen->fallthrough();
    std::string gen_config;
    gen->add_option("--config", gen_config, "dataset config JSON");
    gen->callback([&] {
        const hn::Profile prof = hn::profile(profile_name);
        const hn::DatasetSpec spec = hn::parse_dataset_spec(load_config_or_empty(gen_config), prof);
        const fs::path out = out_flag.empty() ? cache_dir() / (spec.name + ".f32") : fs::path(out_flag);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        const auto data = davalab::synthdata::FactorDataset<T>::toysprites(spec.sprites);
        data.save(out.string());
        std::cout << "wrote " << out.string() << ": " << data.size() << " images, " << data.height() << "x"
                  << data.width() << "x" << data.channels() << "\n";
    });

    // train ------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train one model on a dataset");
    tr->fallthrough();
    std::string tr_config, tr_dataset;
    tr->add_option("--config", tr_config, "architecture config JSON")->required();
    tr->add_option("--dataset", tr_dataset, "dataset path or cache name")->required();
    tr->callback([&] {
        if (out_flag.empty()) throw ConfigError("train: --out is required");
        const auto data = davalab::synthdata::FactorDataset<T>::load(resolve_dataset(tr_dataset).string());
        hn::Profile prof = hn::profile(profile_name);
        prof.image_size = data.height();  // config may omit image_size; explicit values must match
        const hn::TrainSpec spec = hn::parse_train_spec(hn::load_json_file(tr_config), prof);
        if (spec.dava.network.image_size != data.height())
            throw ConfigError("train config image_size " + std::to_string(spec.dava.network.image_size) +
                              " does not match the dataset (" + std::to_string(data.height()) + ")");
        const fs::path out = out_flag;
        fs::create_directories(out);
        tn::CheckpointSink<T> sink = [&](const tn::TrainState<T>& s, bool final) {
            auto& mut = const_cast<tn::TrainState<T>&>(s);
            tn::save_checkpoint(mut, final ? out / "checkpoint" : out / ("checkpoint-" + std::to_string(s.step)));
        };
        std::cout << "training " << spec.architecture << "-" << hn::digest_hex(spec) << " seed " << seed << " ("
                  << spec.dava.total_steps << " steps)\n";
        tn::TrainState<T> st = spec.architecture == "beta_vae"
                                   ? tn::train_beta_vae(data, spec.as_beta_vae(), seed, sink)
                                   : tn::train(data, spec.dava, seed, nullptr, sink);
        hn::sweepdetail::write_run_files(st, out);
        hn::sweepdetail::write_text(out / "train_config.txt", hn::canonical_spec_text(spec));
        if (!st.history.empty()) {
            const auto& d = st.history.back();
            std::cout << "done: step " << d.step << " recon " << hn::format_value(d.recon_ce) << " kl "
                      << hn::format_value(d.kl_total) << " C " << hn::format_value(st.capacity) << "\n";
        }
        std::cout << "checkpoint " << (out / "checkpoint").string() << "\n";
    });

    // eval-pipe ---------------------------------------------------------------
    auto* ep = app.add_subcommand("eval-pipe", "score a checkpoint with the unsupervised PIPE metric");
    ep->fallthrough();
    std::string ep_checkpoint, ep_dataset, ep_config, ep_metrics = "metrics.csv", ep_population;
    double ep_alpha = 1.0;
    ep->add_option("--checkpoint", ep_checkpoint, "checkpoint directory")->required();
    ep->add_option("--dataset", ep_dataset, "dataset path or cache name")->required();
    ep->add_option("--config", ep_config, "pipe config JSON");
    ep->add_option("--metrics", ep_metrics, "metrics CSV to append to")->capture_default_str();
    CLI::Option* alpha_opt = ep->add_option("--alpha", ep_alpha, "also append pipe_rec at this weight");
    ep->add_option("--rec-population", ep_population,
                   "file of reconstruction errors normalizing pipe_rec (one per line)");
    ep->callback([&] {
        const hn::Profile prof = hn::profile(profile_name);
        auto st = tn::load_checkpoint<T>(ep_checkpoint);
        const fs::path ds_path = resolve_dataset(ep_dataset);
        const auto data = davalab::synthdata::FactorDataset<T>::load(ds_path.string());
        check_image_size(st, data);
        const hn::TrainSpec spec = hn::spec_from_state(st);

        davalab::pipe::PipeConfig pc;
        pc.set_size = prof.pipe_set_size;
        pc.disc_steps = prof.pipe_disc_steps;
        if (!ep_config.empty()) pc = hn::parse_pipe_config(hn::load_json_file(ep_config), pc);

        davalab::vae::VaeModel<T> model(st.encoder, st.decoder);
        const bool collapsed = hn::collapse_probe(model, seed);
        const auto result = davalab::pipe::pipe(model, data, pc, seed);

        hn::MetricRow row;
        row.dataset = ds_path.stem().string();
        row.architecture = spec.architecture;
        row.digest = hn::digest_hex(spec);
        row.seed = seed;
        row.metric = "pipe";
        row.value = result.score;
        row.sampler = result.sampler;
        row.flags = collapsed ? "collapsed" : "";
        std::vector<hn::MetricRow> rows = {row};

        if (alpha_opt->count() > 0) {
            const double rec = hn::eval_rec(model, data, seed);
            std::vector<double> population =
                ep_population.empty() ? std::vector<double>{} : read_population(ep_population);
            population.push_back(rec);
            hn::MetricRow rr = row;
            rr.metric = "pipe_rec";
            rr.value = davalab::pipe::pipe_rec(hn::canonical_value(result.score), rec, population, ep_alpha);
            rows.push_back(rr);
        }
        hn::append_rows(ep_metrics, rows);
        for (const hn::MetricRow& r : rows)
            std::cout << r.metric << " " << hn::format_value(r.value)
                      << (r.flags.empty() ? "" : " [" + r.flags + "]") << "\n";
    });

    // eval-supervised ----------------------------------------------------------
    auto* es = app.add_subcommand("eval-supervised", "score a checkpoint with MIG, DCI, and FVAE");
    es->fallthrough();
    std::string es_checkpoint, es_dataset, es_metrics = "metrics.csv";
    int es_samples = 10000, es_votes = 800;
    es->add_option("--checkpoint", es_checkpoint, "checkpoint directory")->required();
    es->add_option("--dataset", es_dataset, "dataset path or cache name")->required();
    es->add_option("--metrics", es_metrics, "metrics CSV to append to")->capture_default_str();
    es->add_option("--samples", es_samples, "representation sample size")->capture_default_str();
    es->add_option("--votes", es_votes, "FVAE majority votes")->capture_default_str();
    es->callback([&] {
        auto st = tn::load_checkpoint<T>(es_checkpoint);
        const fs::path ds_path = resolve_dataset(es_dataset);
        const auto data = davalab::synthdata::FactorDataset<T>::load(ds_path.string());
        check_image_size(st, data);
        const hn::TrainSpec spec = hn::spec_from_state(st);

        davalab::vae::VaeModel<T> model(st.encoder, st.decoder);
        const bool collapsed = hn::collapse_probe(model, seed);
        const std::string flags = collapsed ? "collapsed" : "";
        const auto repr = hn::eval_representation(model, data, es_samples, seed);

        hn::MetricRow base;
        base.dataset = ds_path.stem().string();
        base.architecture = spec.architecture;
        base.digest = hn::digest_hex(spec);
        base.seed = seed;
        std::vector<hn::MetricRow> rows;
        auto push = [&](const std::string& name, auto&& compute) {
            hn::MetricRow r = base;
            r.metric = name;
            try {
                r.value = compute();
                r.flags = flags;
            } catch (const std::exception& e) {
                std::cerr << name << " failed: " << e.what() << "\n";
                r.value = std::numeric_limits<double>::quiet_NaN();
                r.flags = "failed";
            }
            rows.push_back(r);
        };
        push("mig", [&] { return davalab::metrics::mig(repr); });
        push("dci", [&] { return davalab::metrics::dci_disentanglement(repr); });
        push("fvae", [&] { return hn::eval_fvae(model, data, es_votes, seed); });
        hn::append_rows(es_metrics, rows);
        for (const hn::MetricRow& r : rows)
            std::cout << r.metric << " " << hn::format_value(r.value)
                      << (r.flags.empty() ? "" : " [" + r.flags + "]") << "\n";
    });

    // sweep ---------------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "train and evaluate a grid of architectures and seeds");
    sw->fallthrough();
    std::string sw_config;
    sw->add_option("--config", sw_config, "sweep config JSON")->required();
    sw->callback([&] {
        const std::string override_profile = profile_opt->count() > 0 ? profile_name : "";
        const hn::SweepConfig cfg = hn::parse_sweep_config(hn::load_json_file(sw_config), override_profile);
        std::string out = !out_flag.empty() ? out_flag : cfg.out;
        if (out.empty()) throw ConfigError("sweep: no output directory (--out flag or config key 'out')");
        const hn::SweepOutcome outcome = hn::run_sweep<T>(cfg, out, &std::cout);
        std::cout << "sweep: " << outcome.completed << " completed, " << outcome.failed << " failed, "
                  << outcome.skipped << " skipped\n";
        if (!outcome.clean()) exit_code = 3;
    });

    // report ----------------------------------------------------------------------
    auto* rp = app.add_subcommand("report", "summaries and metric correlations from a metrics CSV");
    rp->fallthrough();
    std::string rp_metrics;
    rp->add_option("--metrics", rp_metrics, "metrics CSV")->required();
    rp->callback([&] {
        if (out_flag.empty()) throw ConfigError("report: --out is required");
        const auto rows = hn::load_metrics_csv(rp_metrics);
        hn::write_report(rows, out_flag);
        std::cout << "report written to " << out_flag << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return exit_code;
}
