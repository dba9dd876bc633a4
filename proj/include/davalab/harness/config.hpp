#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "davalab/pipe/pipe.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/train/beta_vae.hpp"
#include "davalab/train/dava.hpp"

namespace davalab::harness {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

// Configuration problems map to exit code 1; anything else that goes wrong
// during a run maps to exit code 2 (or 3 for a partially failed sweep).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

namespace cfgdetail {

// Wraps a JSON object for schema-checked reads: every key must be consumed
// exactly once, and leftovers are an error.
class StrictObject {
public:
    StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
    }

    bool has(const std::string& key) {
        if (!j_.contains(key)) return false;
        seen_.insert(key);
        return true;
    }

    template <typename V>
    V get(const std::string& key, V fallback) {
        if (!j_.contains(key)) return fallback;
        seen_.insert(key);
        try {
            return j_.at(key).get<V>();
        } catch (const Json::exception&) {
            throw ConfigError(where_ + ": bad value for key '" + key + "'");
        }
    }

    template <typename V>
    V require(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError(where_ + ": missing required key '" + key + "'");
        return get<V>(key, V{});
    }

    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void reject(const std::string& key, const std::string& why) {
        if (j_.contains(key)) throw ConfigError(where_ + ": key '" + key + "' " + why);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace cfgdetail

// Scale presets: desk keeps everything runnable on one workstation core,
// full mirrors the reference experiment scale.
struct Profile {
    std::string name;
    int image_size = 32;
    long total_steps = 20000;
    int batch_size = 64;
    std::vector<std::uint64_t> seeds;
    int pipe_set_size = 3200;
    int pipe_disc_steps = 2000;
    int eval_samples = 10000;
    int fvae_votes = 800;
};

inline Profile profile(const std::string& name) {
    Profile p;
    p.name = name;
    if (name == "desk") {
        p.image_size = 32;
        p.total_steps = 20000;
        p.batch_size = 64;
        p.seeds = {1, 2, 3};
        p.pipe_set_size = 3200;
        p.pipe_disc_steps = 2000;
    } else if (name == "full") {
        p.image_size = 64;
        p.total_steps = 150000;
        p.batch_size = 128;
        p.seeds = {1, 2, 3, 4, 5};
        p.pipe_set_size = 12800;
        p.pipe_disc_steps = 10000;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected desk or full)");
    }
    return p;
}

// One resolved architecture setting: everything that defines a training
// run except dataset and seed.
struct TrainSpec {
    std::string architecture = "dava";  // or "beta_vae"
    train::DavaConfig dava;
    double beta = 1.0;  // beta_vae only

    train::BetaVaeConfig as_beta_vae() const {
        train::BetaVaeConfig b;
        b.network = dava.network;
        b.beta = beta;
        b.batch_size = dava.batch_size;
        b.learning_rate = dava.learning_rate;
        b.adam_beta1 = dava.adam_beta1;
        b.adam_beta2 = dava.adam_beta2;
        b.adam_eps = dava.adam_eps;
        b.max_grad_norm = dava.max_grad_norm;
        b.total_steps = dava.total_steps;
        b.log_interval = dava.log_interval;
        b.checkpoint_interval = dava.checkpoint_interval;
        return b;
    }
};

inline TrainSpec parse_train_spec(const Json& j, const Profile& prof, const std::string& where = "train config") {
    cfgdetail::StrictObject o(j, where);
    TrainSpec s;
    s.architecture = o.get<std::string>("architecture", "dava");
    if (s.architecture != "dava" && s.architecture != "beta_vae")
        throw ConfigError(where + ": architecture must be 'dava' or 'beta_vae'");

    train::DavaConfig& d = s.dava;
    d.network.image_size = prof.image_size;
    d.total_steps = prof.total_steps;
    d.batch_size = prof.batch_size;

    if (s.architecture == "beta_vae") {
        for (const char* key : {"gamma", "capacity_exponent", "delta_c", "grace_band", "mu_enc", "mu_dec",
                                "label_smoothing"})
            o.reject(key, "is a dava hyperparameter");
        s.beta = o.get<double>("beta", 1.0);
    } else {
        o.reject("beta", "is a beta_vae hyperparameter");
        d.gamma = o.get<double>("gamma", d.gamma);
        d.capacity_exponent = o.get<int>("capacity_exponent", d.capacity_exponent);
        d.delta_c = o.get<double>("delta_c", d.delta_c);
        d.grace_band = o.get<double>("grace_band", d.grace_band);
        d.mu_enc = o.get<double>("mu_enc", d.mu_enc);
        d.mu_dec = o.get<double>("mu_dec", d.mu_dec);
        d.label_smoothing = o.get<double>("label_smoothing", d.label_smoothing);
    }

    d.network.image_size = o.get<int>("image_size", d.network.image_size);
    d.network.z_dim = o.get<int>("z_dim", d.network.z_dim);
    d.batch_size = o.get<int>("batch_size", d.batch_size);
    d.learning_rate = o.get<double>("learning_rate", d.learning_rate);
    d.adam_beta1 = o.get<double>("adam_beta1", d.adam_beta1);
    d.adam_beta2 = o.get<double>("adam_beta2", d.adam_beta2);
    d.adam_eps = o.get<double>("adam_eps", d.adam_eps);
    d.max_grad_norm = o.get<double>("max_grad_norm", d.max_grad_norm);
    d.total_steps = o.get<long>("total_steps", d.total_steps);
    d.log_interval = o.get<long>("log_interval", d.log_interval);
    d.checkpoint_interval = o.get<long>("checkpoint_interval", d.checkpoint_interval);
    o.finish();

    try {
        d.network.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    if (d.capacity_exponent != 1 && d.capacity_exponent != 4)
        throw ConfigError(where + ": capacity_exponent must be 1 or 4");
    if (d.batch_size < 1 || d.total_steps < 1) throw ConfigError(where + ": batch_size and total_steps must be positive");
    return s;
}

// Serialization that mirrors parse_train_spec, used for sweep manifests.
inline Json train_spec_to_json(const TrainSpec& s) {
    Json j;
    j["architecture"] = s.architecture;
    if (s.architecture == "beta_vae") {
        j["beta"] = s.beta;
    } else {
        j["gamma"] = s.dava.gamma;
        j["capacity_exponent"] = s.dava.capacity_exponent;
        j["delta_c"] = s.dava.delta_c;
        j["grace_band"] = s.dava.grace_band;
        j["mu_enc"] = s.dava.mu_enc;
        j["mu_dec"] = s.dava.mu_dec;
        j["label_smoothing"] = s.dava.label_smoothing;
    }
    j["image_size"] = s.dava.network.image_size;
    j["z_dim"] = s.dava.network.z_dim;
    j["batch_size"] = s.dava.batch_size;
    j["learning_rate"] = s.dava.learning_rate;
    j["adam_beta1"] = s.dava.adam_beta1;
    j["adam_beta2"] = s.dava.adam_beta2;
    j["adam_eps"] = s.dava.adam_eps;
    j["max_grad_norm"] = s.dava.max_grad_norm;
    j["total_steps"] = s.dava.total_steps;
    j["log_interval"] = s.dava.log_interval;
    j["checkpoint_interval"] = s.dava.checkpoint_interval;
    return j;
}

// Canonical hyperparameter text: fixed key order, 17 significant digits.
// Reporting cadence and checkpoint cadence do not influence results, so
// they stay out of the digest.
inline std::string canonical_spec_text(const TrainSpec& s) {
    std::ostringstream os;
    os << std::setprecision(17);
    const train::DavaConfig& d = s.dava;
    os << "architecture=" << s.architecture << "\n"
       << "image_size=" << d.network.image_size << "\n"
       << "channels=" << d.network.channels << "\n"
       << "z_dim=" << d.network.z_dim << "\n"
       << "beta=" << s.beta << "\n"
       << "gamma=" << d.gamma << "\n"
       << "capacity_exponent=" << d.capacity_exponent << "\n"
       << "delta_c=" << d.delta_c << "\n"
       << "grace_band=" << d.grace_band << "\n"
       << "mu_enc=" << d.mu_enc << "\n"
       << "mu_dec=" << d.mu_dec << "\n"
       << "label_smoothing=" << d.label_smoothing << "\n"
       << "batch_size=" << d.batch_size << "\n"
       << "learning_rate=" << d.learning_rate << "\n"
       << "adam_beta1=" << d.adam_beta1 << "\n"
       << "adam_beta2=" << d.adam_beta2 << "\n"
       << "adam_eps=" << d.adam_eps << "\n"
       << "max_grad_norm=" << d.max_grad_norm << "\n"
       << "total_steps=" << d.total_steps << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string digest_hex(const TrainSpec& s) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical_spec_text(s));
    return os.str();
}

// Rebuilds the spec (and therefore the digest) from a reloaded training
// state, so standalone evaluations label rows exactly like the sweep.
template <typename T>
TrainSpec spec_from_state(const train::TrainState<T>& st) {
    TrainSpec s;
    s.architecture = st.architecture;
    s.beta = st.beta;
    s.dava = st.cfg;
    return s;
}

struct DatasetSpec {
    std::string name;
    synthdata::SpriteConfig sprites;
};

inline DatasetSpec parse_dataset_spec(const Json& j, const Profile& prof,
                                      const std::string& where = "dataset config") {
    cfgdetail::StrictObject o(j, where);
    DatasetSpec d;
    d.sprites.image_size = prof.image_size;
    d.sprites.image_size = o.get<int>("image_size", d.sprites.image_size);
    d.sprites.shapes = o.get<int>("shapes", d.sprites.shapes);
    d.sprites.scales = o.get<int>("scales", d.sprites.scales);
    d.sprites.x_positions = o.get<int>("x_positions", d.sprites.x_positions);
    d.sprites.y_positions = o.get<int>("y_positions", d.sprites.y_positions);
    d.sprites.colors = o.get<int>("colors", d.sprites.colors);
    d.name = o.get<std::string>("name", "toysprites" + std::to_string(d.sprites.image_size));
    o.finish();
    try {
        d.sprites.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return d;
}

inline Json dataset_spec_to_json(const DatasetSpec& d) {
    Json j;
    j["name"] = d.name;
    j["image_size"] = d.sprites.image_size;
    j["shapes"] = d.sprites.shapes;
    j["scales"] = d.sprites.scales;
    j["x_positions"] = d.sprites.x_positions;
    j["y_positions"] = d.sprites.y_positions;
    j["colors"] = d.sprites.colors;
    return j;
}

inline const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> m{"pipe", "pipe_rec", "mig", "dci", "fvae"};
    return m;
}

struct SweepConfig {
    std::string name = "sweep";
    Profile prof;
    DatasetSpec dataset;
    std::vector<TrainSpec> architectures;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> metrics;
    double alpha = 1.0;  // pipe_rec reconstruction weight
    pipe::PipeConfig pipe_cfg;
    int eval_samples = 10000;
    int fvae_votes = 800;
    std::string out;  // optional; the --out flag wins
};

inline pipe::PipeConfig parse_pipe_config(const Json& j, const pipe::PipeConfig& defaults,
                                          const std::string& where = "pipe config") {
    cfgdetail::StrictObject o(j, where);
    pipe::PipeConfig p = defaults;
    p.set_size = o.get<int>("set_size", p.set_size);
    p.train_fraction = o.get<double>("train_fraction", p.train_fraction);
    p.disc_steps = o.get<int>("disc_steps", p.disc_steps);
    p.disc_batch = o.get<int>("disc_batch", p.disc_batch);
    p.fp_sampler = o.get<std::string>("fp_sampler", p.fp_sampler);
    o.finish();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return p;
}

inline Json pipe_config_to_json(const pipe::PipeConfig& p) {
    Json j;
    j["set_size"] = p.set_size;
    j["train_fraction"] = p.train_fraction;
    j["disc_steps"] = p.disc_steps;
    j["disc_batch"] = p.disc_batch;
    j["fp_sampler"] = p.fp_sampler;
    return j;
}

// `profile_override` (from the --profile flag) wins over the file's
// "profile" key when non-empty.
inline SweepConfig parse_sweep_config(const Json& j, const std::string& profile_override = "") {
    cfgdetail::StrictObject o(j, "sweep config");
    SweepConfig c;
    const std::string file_profile = o.get<std::string>("profile", "desk");
    c.prof = profile(profile_override.empty() ? file_profile : profile_override);
    c.name = o.get<std::string>("name", "sweep");
    c.out = o.get<std::string>("out", "");

    if (o.has("version")) {
        const std::string v = o.get<std::string>("version", kVersion);
        if (v != kVersion)
            std::fprintf(stderr, "sweep config: written by version %s, running %s\n", v.c_str(), kVersion);
    }

    c.dataset = o.has("dataset") ? parse_dataset_spec(o.raw("dataset"), c.prof, "sweep config: dataset")
                                 : parse_dataset_spec(Json::object(), c.prof, "sweep config: dataset");

    if (!o.has("architectures")) throw ConfigError("sweep config: missing required key 'architectures'");
    const Json& archs = o.raw("architectures");
    if (!archs.is_array() || archs.empty())
        throw ConfigError("sweep config: 'architectures' must be a non-empty array");
    for (std::size_t i = 0; i < archs.size(); ++i)
        c.architectures.push_back(
            parse_train_spec(archs[i], c.prof, "sweep config: architectures[" + std::to_string(i) + "]"));
    for (TrainSpec& s : c.architectures)
        if (s.dava.network.image_size != c.dataset.sprites.image_size)
            throw ConfigError("sweep config: architecture image_size does not match the dataset");

    c.seeds = o.get<std::vector<std::uint64_t>>("seeds", c.prof.seeds);
    if (c.seeds.empty()) throw ConfigError("sweep config: seeds must be non-empty");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
        throw ConfigError("sweep config: seeds must be distinct");

    c.metrics = o.get<std::vector<std::string>>("metrics", {});
    if (c.metrics.empty()) throw ConfigError("sweep config: metrics must be non-empty");
    for (const std::string& m : c.metrics) {
        const auto& known = known_metrics();
        if (std::find(known.begin(), known.end(), m) == known.end())
            throw ConfigError("sweep config: unknown metric '" + m + "'");
    }
    if (std::set<std::string>(c.metrics.begin(), c.metrics.end()).size() != c.metrics.size())
        throw ConfigError("sweep config: metrics must be distinct");

    c.alpha = o.get<double>("alpha", 1.0);
    if (c.alpha < 0.0) throw ConfigError("sweep config: alpha must be non-negative");

    pipe::PipeConfig pipe_defaults;
    pipe_defaults.set_size = c.prof.pipe_set_size;
    pipe_defaults.disc_steps = c.prof.pipe_disc_steps;
    c.pipe_cfg = o.has("pipe") ? parse_pipe_config(o.raw("pipe"), pipe_defaults, "sweep config: pipe")
                               : pipe_defaults;

    c.eval_samples = o.get<int>("eval_samples", c.prof.eval_samples);
    c.fvae_votes = o.get<int>("fvae_votes", c.prof.fvae_votes);
    if (c.eval_samples < 2 || c.fvae_votes < 2)
        throw ConfigError("sweep config: eval_samples and fvae_votes must be at least 2");
    o.finish();
    return c;
}

// The manifest is itself a valid sweep config: re-running from it replays
// the sweep exactly.
inline Json sweep_config_to_json(const SweepConfig& c) {
    Json j;
    j["version"] = kVersion;
    j["name"] = c.name;
    j["profile"] = c.prof.name;
    j["dataset"] = dataset_spec_to_json(c.dataset);
    j["architectures"] = Json::array();
    for (const TrainSpec& s : c.architectures) j["architectures"].push_back(train_spec_to_json(s));
    j["seeds"] = c.seeds;
    j["metrics"] = c.metrics;
    j["alpha"] = c.alpha;
    j["pipe"] = pipe_config_to_json(c.pipe_cfg);
    j["eval_samples"] = c.eval_samples;
    j["fvae_votes"] = c.fvae_votes;
    if (!c.out.empty()) j["out"] = c.out;
    return j;
}

}  // namespace davalab::harness
