#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "davalab/harness/sweep.hpp"

namespace fs = std::filesystem;
using namespace davalab;
using namespace davalab::harness;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("davalab_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// A sweep small enough to train in seconds: 16x16 sprites, 30 steps.
Json tiny_sweep_json() {
    Json j;
    j["name"] = "tiny";
    j["dataset"] = {{"image_size", 16}, {"shapes", 2},      {"scales", 2}, {"x_positions", 3},
                    {"y_positions", 3}, {"colors", 2},      {"name", "tinysweep"}};
    Json dava = {{"architecture", "dava"},     {"image_size", 16},  {"z_dim", 4}, {"batch_size", 8},
                 {"total_steps", 30},          {"log_interval", 10}};
    Json beta = {{"architecture", "beta_vae"}, {"beta", 4.0},       {"image_size", 16}, {"z_dim", 4},
                 {"batch_size", 8},            {"total_steps", 30}, {"log_interval", 10}};
    j["architectures"] = Json::array({dava, beta});
    j["seeds"] = {1, 2, 3};
    j["metrics"] = {"pipe", "pipe_rec", "mig"};
    j["alpha"] = 0.5;
    j["pipe"] = {{"set_size", 64}, {"disc_steps", 10}};
    j["eval_samples"] = 256;
    j["fvae_votes"] = 16;
    return j;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DAVALAB_BIN) + " " + args;
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("profiles pin the two experiment scales") {
    const Profile desk = profile("desk");
    CHECK(desk.image_size == 32);
    CHECK(desk.total_steps == 20000);
    CHECK(desk.seeds == std::vector<std::uint64_t>{1, 2, 3});
    const Profile full = profile("full");
    CHECK(full.image_size == 64);
    CHECK(full.total_steps == 150000);
    CHECK(full.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(full.pipe_set_size == 12800);
    CHECK(full.pipe_disc_steps == 10000);
    CHECK_THROWS_AS(profile("tiny"), ConfigError);
}

TEST_CASE("train spec parsing is strict about keys") {
    const Profile prof = profile("desk");
    // defaults flow from the profile
    TrainSpec s = parse_train_spec(Json::object(), prof);
    CHECK(s.architecture == "dava");
    CHECK(s.dava.network.image_size == 32);
    CHECK(s.dava.total_steps == 20000);
    CHECK(s.dava.batch_size == 64);

    CHECK_THROWS_AS(parse_train_spec(Json{{"zdim", 4}}, prof), ConfigError);             // unknown key
    CHECK_THROWS_AS(parse_train_spec(Json{{"beta", 4.0}}, prof), ConfigError);           // beta on dava
    CHECK_THROWS_AS(parse_train_spec(Json{{"architecture", "beta_vae"}, {"gamma", 5.0}}, prof),
                    ConfigError);                                                        // dava knob on beta_vae
    CHECK_THROWS_AS(parse_train_spec(Json{{"image_size", 24}}, prof), ConfigError);      // not a multiple of 16
    CHECK_THROWS_AS(parse_train_spec(Json{{"architecture", "vae"}}, prof), ConfigError);
    CHECK_THROWS_AS(parse_train_spec(Json{{"capacity_exponent", 2}}, prof), ConfigError);

    const TrainSpec b = parse_train_spec(Json{{"architecture", "beta_vae"}, {"beta", 8.0}}, prof);
    CHECK(b.beta == 8.0);
    const train::BetaVaeConfig bc = b.as_beta_vae();
    CHECK(bc.beta == 8.0);
    CHECK(bc.total_steps == 20000);
}

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("") == 14695981039346656037ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("digests are stable, sensitive, and survive checkpointing") {
    const Profile prof = profile("desk");
    const TrainSpec a = parse_train_spec(Json{{"z_dim", 8}}, prof);
    const TrainSpec b = parse_train_spec(Json{{"z_dim", 8}}, prof);
    CHECK(digest_hex(a) == digest_hex(b));
    CHECK(digest_hex(a).size() == 16);
    for (char c : digest_hex(a)) CHECK((std::isdigit(c) || (c >= 'a' && c <= 'f')));

    const TrainSpec c = parse_train_spec(Json{{"z_dim", 8}, {"gamma", 250.0}}, prof);
    CHECK(digest_hex(c) != digest_hex(a));

    // reporting cadence does not influence results, so it is not identity
    const TrainSpec d = parse_train_spec(Json{{"z_dim", 8}, {"log_interval", 7}}, prof);
    CHECK(digest_hex(d) == digest_hex(a));

    // a reloaded checkpoint reproduces the digest of the spec that trained it
    synthdata::SpriteConfig sc;
    sc.image_size = 16;
    sc.shapes = 2;
    sc.scales = 2;
    sc.x_positions = 3;
    sc.y_positions = 3;
    sc.colors = 2;
    const auto data = synthdata::FactorDataset<float>::toysprites(sc);
    Profile tiny = prof;
    tiny.image_size = 16;
    tiny.total_steps = 3;
    tiny.batch_size = 4;
    const TrainSpec spec = parse_train_spec(Json{{"z_dim", 4}, {"log_interval", 1}}, tiny);
    auto st = train::train(data, spec.dava, 5);
    const fs::path dir = fresh_dir("digest_ckpt");
    train::save_checkpoint(st, dir / "checkpoint");
    auto loaded = train::load_checkpoint<float>(dir / "checkpoint");
    CHECK(digest_hex(spec_from_state(loaded)) == digest_hex(spec));
}

TEST_CASE("metrics csv round-trips and enforces key uniqueness") {
    const fs::path dir = fresh_dir("csv");
    const fs::path csv = dir / "metrics.csv";

    MetricRow r1{"ds", "dava", "00112233aabbccdd", 1, "pipe", 1.0 / 3.0, "uniform-range", ""};
    MetricRow r2{"ds", "dava", "00112233aabbccdd", 1, "mig", 0.1, "", "collapsed"};
    MetricRow r3{"ds", "beta_vae", "ffeeddcc00112233", 2, "pipe", std::nan(""), "", "failed"};
    append_rows(csv, {r1, r2});
    append_rows(csv, {r3});

    const auto rows = load_metrics_csv(csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].value == canonical_value(1.0 / 3.0));
    CHECK(format_value(rows[0].value) == "0.3333333333");
    CHECK(rows[0].sampler == "uniform-range");
    CHECK(rows[1].flags == "collapsed");
    CHECK(rows[2].seed == 2);
    CHECK(std::isnan(rows[2].value));
    CHECK(rows[2].flags == "failed");
    CHECK(slurp(csv).substr(0, std::string(kMetricsHeader).size()) == kMetricsHeader);

    // same key appended again: load refuses the file
    append_rows(csv, {r1});
    CHECK_THROWS(load_metrics_csv(csv));

    // canonical_value is idempotent
    CHECK(canonical_value(canonical_value(0.12345678987654321)) == canonical_value(0.12345678987654321));

    const fs::path bad = dir / "bad.csv";
    spit(bad, std::string(kMetricsHeader) + "\nds,dava,xx,1,pipe\n");
    CHECK_THROWS(load_metrics_csv(bad));
    const fs::path nohdr = dir / "nohdr.csv";
    spit(nohdr, "dataset,value\n");
    CHECK_THROWS(load_metrics_csv(nohdr));
}

TEST_CASE("summarize reports mean and sample deviation per cell") {
    std::vector<MetricRow> rows;
    for (int s = 1; s <= 3; ++s)
        rows.push_back({"ds", "dava", "d1", static_cast<std::uint64_t>(s), "pipe", 0.1 * s, "u", ""});
    rows.push_back({"ds", "beta_vae", "d2", 1, "pipe", 0.05, "u", ""});
    rows.push_back({"ds", "beta_vae", "d2", 2, "pipe", std::nan(""), "", "failed"});   // excluded
    rows.push_back({"ds", "beta_vae", "d2", 3, "pipe", 0.6, "u", "collapsed"});        // flags the cell

    const auto cells = summarize(rows);
    REQUIRE(cells.size() == 2);
    const SummaryCell* dava = nullptr;
    const SummaryCell* beta = nullptr;
    for (const auto& c : cells) (c.architecture == "dava" ? dava : beta) = &c;
    REQUIRE(dava != nullptr);
    REQUIRE(beta != nullptr);

    CHECK(dava->n == 3);
    CHECK(std::abs(dava->mean - 0.2) < 1e-12);
    CHECK(std::abs(dava->stddev - 0.1) < 1e-12);
    CHECK(!dava->collapsed);

    CHECK(beta->n == 2);  // failed row contributes nothing
    CHECK(beta->collapsed);

    // single value: zero deviation
    const auto one = summarize({{"ds", "dava", "d1", 1, "mig", 0.4, "", ""}});
    REQUIRE(one.size() == 1);
    CHECK(one[0].n == 1);
    CHECK(one[0].stddev == 0.0);

    // collapsed cells never win best-of; table parenthesizes them
    const auto best = best_by_metric(cells);
    CHECK(best.at("ds|pipe") == "dava-d1");  // beta mean is higher but collapsed
    const std::string table = summary_table(cells);
    CHECK(table.find("(") != std::string::npos);
    CHECK(table.find(" *") != std::string::npos);

    // two-pass long-double oracle on arbitrary values
    std::vector<double> vals = {0.9231, 0.1113, 0.5551, 0.7777, 0.3141, 0.2718};
    std::vector<MetricRow> vrows;
    for (std::size_t i = 0; i < vals.size(); ++i)
        vrows.push_back({"ds", "dava", "d9", i + 1, "dci", vals[i], "", ""});
    const auto vc = summarize(vrows);
    REQUIRE(vc.size() == 1);
    long double m = 0.0L;
    for (double v : vals) m += v;
    m /= vals.size();
    long double ss = 0.0L;
    for (double v : vals) ss += (v - m) * (v - m);
    const long double sd = std::sqrt(ss / (vals.size() - 1));
    CHECK(std::abs(vc[0].mean - static_cast<double>(m)) < 1e-12);
    CHECK(std::abs(vc[0].stddev - static_cast<double>(sd)) < 1e-12);
}

TEST_CASE("capacity bands average trajectories pointwise") {
    std::vector<Trajectory> runs;
    for (int v = 1; v <= 5; ++v) {
        Trajectory t;
        for (long s = 0; s <= 100; s += 10) {
            t.steps.push_back(s);
            t.values.push_back(static_cast<double>(v));
        }
        runs.push_back(t);
    }
    const BandSeries band = capacity_band(runs, "x");
    REQUIRE(band.steps.size() == 11);
    const double sd = std::sqrt(2.5);  // sample deviation of {1,2,3,4,5}
    for (std::size_t i = 0; i < band.steps.size(); ++i) {
        CHECK(std::abs(band.mean[i] - 3.0) < 1e-12);
        CHECK(std::abs(band.lo[i] - (3.0 - sd)) < 1e-12);
        CHECK(std::abs(band.hi[i] - (3.0 + sd)) < 1e-12);
    }

    // one seed: zero-width band
    const BandSeries solo = capacity_band({runs[3]}, "solo");
    for (std::size_t i = 0; i < solo.steps.size(); ++i) {
        CHECK(solo.lo[i] == solo.mean[i]);
        CHECK(solo.hi[i] == solo.mean[i]);
    }

    // ragged lengths truncate to the shortest
    std::vector<Trajectory> ragged = {runs[0], runs[1]};
    ragged[1].steps.resize(5);
    ragged[1].values.resize(5);
    CHECK(capacity_band(ragged, "r").steps.size() == 5);

    // disagreeing step axes are an error
    std::vector<Trajectory> bad = {runs[0], runs[1]};
    bad[1].steps[3] += 1;
    CHECK_THROWS(capacity_band(bad, "bad"));
}

TEST_CASE("plots are written as valid 24-bit BMP files") {
    const fs::path dir = fresh_dir("plots");
    std::vector<Trajectory> runs(3);
    for (int r = 0; r < 3; ++r)
        for (long s = 0; s <= 1000; s += 100) {
            runs[r].steps.push_back(s);
            runs[r].values.push_back(0.01 * s * (1.0 + 0.1 * r));
        }
    plot_capacity({capacity_band(runs, "dava")}, dir / "cap.bmp");

    const std::string bmp = slurp(dir / "cap.bmp");
    REQUIRE(bmp.size() > 54);
    CHECK(bmp[0] == 'B');
    CHECK(bmp[1] == 'M');
    auto u32 = [&](std::size_t at) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bmp[at])) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bmp[at + 1])) << 8) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bmp[at + 2])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bmp[at + 3])) << 24);
    };
    CHECK(u32(18) == 640);                            // width
    CHECK(u32(22) == 420);                            // height
    CHECK(bmp.size() == 54 + 640ull * 3 * 420);       // 1920-byte rows need no padding
    CHECK(u32(2) == bmp.size());                      // header file size field

    Mat<double> rho(3, 3);
    rho << 1.0, 0.8, -0.2, 0.8, 1.0, 0.1, -0.2, 0.1, 1.0;
    plot_heatmap(rho, {"pipe", "mig", "dci"}, dir / "heat.bmp");
    const std::string heat = slurp(dir / "heat.bmp");
    REQUIRE(heat.size() > 54);
    CHECK(heat[0] == 'B');
    CHECK(heat[1] == 'M');
}

TEST_CASE("sweep config parsing and manifest round-trip") {
    const Json j = tiny_sweep_json();
    const SweepConfig cfg = parse_sweep_config(j);
    CHECK(cfg.architectures.size() == 2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.metrics == std::vector<std::string>{"pipe", "pipe_rec", "mig"});
    CHECK(cfg.pipe_cfg.set_size == 64);
    CHECK(cfg.pipe_cfg.disc_steps == 10);
    CHECK(cfg.alpha == 0.5);

    // the manifest is a valid config that reproduces itself exactly
    const std::string manifest = sweep_config_to_json(cfg).dump(2);
    const SweepConfig reparsed = parse_sweep_config(Json::parse(manifest));
    CHECK(sweep_config_to_json(reparsed).dump(2) == manifest);

    // --profile full wins over the file's profile key
    const SweepConfig full = parse_sweep_config(Json{{"architectures", Json::array({Json::object()})},
                                                     {"metrics", {"pipe"}}},
                                                "full");
    CHECK(full.prof.name == "full");
    CHECK(full.architectures[0].dava.network.image_size == 64);
    CHECK(full.seeds.size() == 5);

    Json bad = tiny_sweep_json();
    bad["metrics"] = {"pipe", "accuracy"};
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    bad = tiny_sweep_json();
    bad["seeds"] = {1, 1};
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    bad = tiny_sweep_json();
    bad["seeds"] = Json::array();
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    bad = tiny_sweep_json();
    bad["architectures"] = Json::array();
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    bad = tiny_sweep_json();
    bad["architectures"][0]["image_size"] = 32;  // dataset stays 16x16
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    bad = tiny_sweep_json();
    bad["metrics"] = Json::array();
    CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
}

TEST_CASE("sweep runs the grid, resumes, and reproduces metrics byte for byte") {
    const SweepConfig cfg = parse_sweep_config(tiny_sweep_json());
    const fs::path out1 = fresh_dir("sweep1");

    const SweepOutcome o1 = run_sweep<float>(cfg, out1);
    CHECK(o1.completed == 6);
    CHECK(o1.failed == 0);
    CHECK(o1.skipped == 0);
    CHECK(o1.clean());

    // 2 architectures x 3 seeds x 3 metrics
    const auto rows = load_metrics_csv(out1 / "metrics.csv");
    CHECK(rows.size() == 18);
    int pipe_rows = 0, rec_rows = 0, mig_rows = 0;
    for (const auto& r : rows) {
        CHECK(r.dataset == "tinysweep");
        CHECK(r.digest.size() == 16);
        CHECK(r.flags != "failed");
        if (r.metric == "pipe") ++pipe_rows;
        if (r.metric == "pipe_rec") ++rec_rows;
        if (r.metric == "mig") ++mig_rows;
        if (r.metric == "pipe") CHECK(r.sampler == "uniform-range");
    }
    CHECK(pipe_rows == 6);
    CHECK(rec_rows == 6);
    CHECK(mig_rows == 6);
    CHECK(fs::exists(out1 / "sweep_manifest.json"));
    CHECK(fs::exists(out1 / "capacity.bmp"));
    CHECK(fs::exists(out1 / "summary.txt"));
    for (const char* run : {"dava", "beta_vae"})
        for (int s = 1; s <= 3; ++s) {
            const std::string digest = digest_hex(cfg.architectures[run == std::string("dava") ? 0 : 1]);
            const fs::path rd = out1 / "runs" / (std::string(run) + "-" + digest + "-s" + std::to_string(s));
            CHECK(fs::exists(rd / "checkpoint" / "params.bin"));
            CHECK(fs::exists(rd / "c_trajectory.csv"));
            CHECK(fs::exists(rd / "diagnostics.csv"));
            CHECK(fs::exists(rd / "rec.txt"));
            CHECK(sweepdetail::read_status(rd) == "ok");
        }

    const std::string bytes1 = slurp(out1 / "metrics.csv");

    // re-running over the same directory recomputes nothing
    const SweepOutcome o2 = run_sweep<float>(cfg, out1);
    CHECK(o2.completed == 0);
    CHECK(o2.skipped == 6);
    CHECK(slurp(out1 / "metrics.csv") == bytes1);

    // replaying the manifest into a fresh directory reproduces the file exactly
    const SweepConfig replay = parse_sweep_config(load_json_file(out1 / "sweep_manifest.json"));
    const fs::path out2 = fresh_dir("sweep2");
    const SweepOutcome o3 = run_sweep<float>(replay, out2);
    CHECK(o3.completed == 6);
    CHECK(slurp(out2 / "metrics.csv") == bytes1);

    // interrupting after the first run and resuming completes the rest
    // without retraining and converges to the same bytes
    std::istringstream lines(bytes1);
    std::string line, kept;
    for (int i = 0; i < 3 && std::getline(lines, line); ++i) kept += line + "\n";  // header + first run block
    spit(out1 / "metrics.csv", kept);
    const fs::path probe = out1 / "runs" / rows[2].run_id() / "checkpoint" / "params.bin";
    const auto mtime = fs::last_write_time(probe);
    const SweepOutcome o4 = run_sweep<float>(cfg, out1);
    CHECK(o4.skipped == 1);
    CHECK(o4.completed == 5);
    CHECK(slurp(out1 / "metrics.csv") == bytes1);
    CHECK(fs::last_write_time(probe) == mtime);  // evaluated from the checkpoint, not retrained

    // a different config refuses to reuse the directory
    Json other = tiny_sweep_json();
    other["seeds"] = {4, 5};
    CHECK_THROWS_AS(run_sweep<float>(parse_sweep_config(other), out1), ConfigError);

    // report over the recorded rows: these barely-trained models all earn
    // the same chance-level pipe score, so the correlation is undefined and
    // the dataset is skipped with a warning---but the summary still renders
    write_report(load_metrics_csv(out1 / "metrics.csv"), out1 / "report");
    CHECK(fs::exists(out1 / "report" / "summary.txt"));
}

TEST_CASE("write_report renders correlations and honors exclusion flags") {
    std::vector<MetricRow> rows;
    const double pipe_vals[] = {0.9, 0.7, 0.5, 0.3};
    const double mig_vals[] = {0.1, 0.2, 0.3, 0.4};
    for (int s = 1; s <= 4; ++s) {
        rows.push_back({"ds", "dava", "d1", static_cast<std::uint64_t>(s), "pipe", pipe_vals[s - 1], "u", ""});
        rows.push_back({"ds", "dava", "d1", static_cast<std::uint64_t>(s), "mig", mig_vals[s - 1], "", ""});
    }
    // a collapsed model is dropped entirely, even for its unflagged rows
    rows.push_back({"ds", "dava", "d1", 5, "pipe", 0.01, "u", "collapsed"});
    rows.push_back({"ds", "dava", "d1", 5, "mig", 0.01, "", ""});
    // a model with a failed metric is incomplete and excluded
    rows.push_back({"ds", "dava", "d1", 6, "pipe", 0.99, "u", ""});
    rows.push_back({"ds", "dava", "d1", 6, "mig", std::nan(""), "", "failed"});

    const fs::path out = fresh_dir("report");
    write_report(rows, out);
    CHECK(fs::exists(out / "summary.txt"));
    REQUIRE(fs::exists(out / "correlation_ds.csv"));
    REQUIRE(fs::exists(out / "heatmap_ds.bmp"));
    // the four complete models rank pipe and mig in exactly opposite order
    CHECK(slurp(out / "correlation_ds.csv") == "metric,pipe,mig\npipe,1,-1\nmig,-1,1\n");
    const std::string heat = slurp(out / "heatmap_ds.bmp");
    CHECK(heat.substr(0, 2) == "BM");
}

TEST_CASE("a diverging run is flagged failed and the sweep continues") {
    Json j = tiny_sweep_json();
    j["architectures"][0]["learning_rate"] = 1e12;  // guarantees non-finite losses
    j["seeds"] = {1};
    const SweepConfig cfg = parse_sweep_config(j);
    const fs::path out = fresh_dir("sweep_fail");

    const SweepOutcome o = run_sweep<float>(cfg, out);
    CHECK(o.completed == 1);
    CHECK(o.failed == 1);
    CHECK(o.failed_total == 1);
    CHECK(!o.clean());

    const auto rows = load_metrics_csv(out / "metrics.csv");
    REQUIRE(rows.size() == 6);  // 3 failed dava rows + pipe/mig + final pipe_rec for beta_vae
    int failed = 0;
    for (const auto& r : rows)
        if (r.flags == "failed") {
            CHECK(r.architecture == "dava");
            CHECK(std::isnan(r.value));
            ++failed;
        }
    CHECK(failed == 3);
    const fs::path fail_dir = out / "runs" / (std::string("dava-") + digest_hex(cfg.architectures[0]) + "-s1");
    CHECK(sweepdetail::read_status(fail_dir) == "failed");
    CHECK(fs::exists(fail_dir / "error.txt"));

    // re-run: the failure is remembered, not retried
    const SweepOutcome o2 = run_sweep<float>(cfg, out);
    CHECK(o2.skipped == 2);
    CHECK(o2.completed == 0);
    CHECK(o2.failed == 0);
    CHECK(o2.failed_total == 1);
    CHECK(!o2.clean());
}

TEST_CASE("command line round trip: generate, train, evaluate") {
    const fs::path root = fresh_dir("cli");
    const fs::path cache = root / "cache";
    REQUIRE(setenv("DAVA_LAB_CACHE", cache.c_str(), 1) == 0);

    // generate-data honours the cache env var when --out is omitted
    spit(root / "ds.json",
         R"({"image_size":16,"shapes":2,"scales":2,"x_positions":3,"y_positions":3,"colors":2,"name":"tinycli"})");
    CHECK(run_cli("generate-data --config " + (root / "ds.json").string()) == 0);
    CHECK(fs::exists(cache / "tinycli.f32"));
    CHECK(fs::exists(cache / "tinycli.f32.manifest"));

    // train resolves the dataset by bare cache name; image size comes from the data
    spit(root / "arch.json", R"({"architecture":"dava","z_dim":4,"batch_size":4,"total_steps":5,"log_interval":1})");
    const fs::path rundir = root / "run";
    CHECK(run_cli("train --config " + (root / "arch.json").string() + " --dataset tinycli --seed 7 --out " +
                  rundir.string()) == 0);
    CHECK(fs::exists(rundir / "checkpoint" / "params.bin"));
    CHECK(fs::exists(rundir / "c_trajectory.csv"));
    CHECK(fs::exists(rundir / "diagnostics.csv"));
    CHECK(fs::exists(rundir / "train_config.txt"));

    // eval-supervised appends one row per metric
    const fs::path csv = root / "metrics.csv";
    CHECK(run_cli("eval-supervised --checkpoint " + (rundir / "checkpoint").string() +
                  " --dataset tinycli --seed 3 --samples 64 --votes 8 --metrics " + csv.string()) == 0);
    auto rows = load_metrics_csv(csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].metric == "mig");
    CHECK(rows[1].metric == "dci");
    CHECK(rows[2].metric == "fvae");
    for (const auto& r : rows) {
        CHECK(r.dataset == "tinycli");
        CHECK(r.architecture == "dava");
        CHECK(r.seed == 3);
        CHECK(r.digest.size() == 16);
    }

    // eval-pipe appends pipe, and pipe_rec when --alpha is given; with no
    // population file the model is its own population, so no penalty applies
    spit(root / "pipe.json", R"({"set_size":32,"disc_steps":5})");
    CHECK(run_cli("eval-pipe --checkpoint " + (rundir / "checkpoint").string() +
                  " --dataset tinycli --seed 3 --config " + (root / "pipe.json").string() +
                  " --alpha 0.5 --metrics " + csv.string()) == 0);
    rows = load_metrics_csv(csv);
    REQUIRE(rows.size() == 5);
    CHECK(rows[3].metric == "pipe");
    CHECK(rows[4].metric == "pipe_rec");
    CHECK(rows[4].value == canonical_value(rows[3].value));

    // report renders a summary even when correlations need more models
    CHECK(run_cli("report --metrics " + csv.string() + " --out " + (root / "report").string()) == 0);
    CHECK(fs::exists(root / "report" / "summary.txt"));

    // exit code contract
    spit(root / "badarch.json", R"({"zdim":4})");
    CHECK(run_cli("train --config " + (root / "badarch.json").string() + " --dataset tinycli --out " +
                  (root / "x1").string()) == 1);
    spit(root / "diverge.json", R"({"z_dim":4,"batch_size":4,"total_steps":5,"learning_rate":1e12})");
    CHECK(run_cli("train --config " + (root / "diverge.json").string() + " --dataset tinycli --out " +
                  (root / "x2").string()) == 2);
    spit(root / "failsweep.json", R"({
        "dataset": {"image_size":16,"shapes":2,"scales":2,"x_positions":3,"y_positions":3,"colors":2},
        "architectures": [{"image_size":16,"z_dim":4,"batch_size":4,"total_steps":5,"learning_rate":1e12}],
        "seeds": [1], "metrics": ["pipe"], "pipe": {"set_size":32,"disc_steps":5}})");
    CHECK(run_cli("sweep --config " + (root / "failsweep.json").string() + " --out " +
                  (root / "fsweep").string()) == 3);
    CHECK(run_cli("train --dataset tinycli") == 1);  // missing required --config
    CHECK(run_cli("--help") == 0);
}
