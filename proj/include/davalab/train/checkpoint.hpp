#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/train/dava.hpp"

namespace davalab::train {

// Checkpoint directory layout:
//   params.bin    raw little-endian float32 blocks concatenated in manifest
//                 order: the network parameters, then each optimizer's Adam
//                 moment vectors
//   manifest.txt  one line per block: name rows cols offset count
//                 (offset and count in float32 elements)
//   config.txt    key=value text holding the network shape, the training
//                 configuration, the initialization scheme, seed, step,
//                 capacity, optimizer step counters, and the exact states
//                 of the three random streams
// Reloading reproduces forward passes bit-exactly for float states (the
// storage precision).

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are written as host-order float32 and the format is little-endian");

namespace ckptdetail {

inline std::string rng_to_string(const Rng& rng) {
    const Rng::State st = rng.state();
    std::ostringstream os;
    os << st.seed;
    for (int i = 0; i < 4; ++i) os << ' ' << st.words[i];
    os << ' ' << (st.has_spare ? 1 : 0) << ' ' << std::setprecision(17) << st.spare;
    return os.str();
}

inline void rng_from_string(const std::string& text, Rng& rng) {
    std::istringstream is(text);
    Rng::State st;
    int has_spare = 0;
    is >> st.seed >> st.words[0] >> st.words[1] >> st.words[2] >> st.words[3] >> has_spare >> st.spare;
    if (!is) throw std::runtime_error("checkpoint: malformed RNG state: " + text);
    st.has_spare = has_spare != 0;
    rng.restore(st);
}

class KeyValues {
public:
    explicit KeyValues(const std::filesystem::path& file) : file_(file.string()) {
        std::ifstream in(file);
        if (!in) throw std::runtime_error("checkpoint: cannot open " + file_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("checkpoint: malformed line in " + file_ + ": " + line);
            kv_[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }

    const std::string& str(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw std::runtime_error("checkpoint: missing key '" + key + "' in " + file_);
        return it->second;
    }

    double num(const std::string& key) const {
        const std::string& s = str(key);
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::runtime_error("checkpoint: bad number for '" + key + "': " + s);
        return v;
    }

    long integer(const std::string& key) const { return static_cast<long>(num(key)); }
    std::uint64_t u64(const std::string& key) const { return std::stoull(str(key)); }

private:
    std::string file_;
    std::map<std::string, std::string> kv_;
};

}  // namespace ckptdetail

template <typename T>
void save_checkpoint(TrainState<T>& st, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    struct Block {
        std::string name;
        const T* data;
        Eigen::Index size, rows, cols;
    };
    std::vector<Block> blocks;
    const auto add_params = [&](std::vector<nn::Param<T>> ps) {
        for (const auto& p : ps) blocks.push_back({p.name, p.value, p.size, p.rows, p.cols});
    };
    add_params(st.encoder.params());
    add_params(st.decoder.params());
    add_params(st.disc.params());
    const auto add_opt = [&](const std::string& name, nn::Adam<T>& opt) {
        if (opt.m().empty()) return;  // never stepped: nothing to persist
        const auto len = static_cast<Eigen::Index>(opt.m().size());
        blocks.push_back({name + ".m", opt.m().data(), len, 1, len});
        blocks.push_back({name + ".v", opt.v().data(), len, 1, len});
    };
    add_opt("opt_vae", st.opt_vae);
    add_opt("opt_disc", st.opt_disc);
    add_opt("opt_adv_enc", st.opt_adv_enc);
    add_opt("opt_adv_dec", st.opt_adv_dec);

    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
    if (!bin || !manifest) throw std::runtime_error("checkpoint: cannot write into " + dir.string());
    std::vector<float> buf;
    std::size_t offset = 0;
    for (const auto& b : blocks) {
        buf.resize(static_cast<std::size_t>(b.size));
        for (Eigen::Index i = 0; i < b.size; ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(b.data[i]);
        bin.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        manifest << b.name << ' ' << b.rows << ' ' << b.cols << ' ' << offset << ' ' << b.size << '\n';
        offset += static_cast<std::size_t>(b.size);
    }
    bin.close();
    manifest.close();
    if (!bin || !manifest) throw std::runtime_error("checkpoint: short write into " + dir.string());

    std::ostringstream cfgtext;
    cfgtext << std::setprecision(17);
    const DavaConfig& c = st.cfg;
    cfgtext << "format=davalab-checkpoint-v1\n"
            << "architecture=" << st.architecture << "\n"
            << "init=fanin_uniform\n"
            << "image_size=" << c.network.image_size << "\n"
            << "channels=" << c.network.channels << "\n"
            << "z_dim=" << c.network.z_dim << "\n"
            << "gamma=" << c.gamma << "\n"
            << "capacity_exponent=" << c.capacity_exponent << "\n"
            << "delta_c=" << c.delta_c << "\n"
            << "grace_band=" << c.grace_band << "\n"
            << "mu_enc=" << c.mu_enc << "\n"
            << "mu_dec=" << c.mu_dec << "\n"
            << "label_smoothing=" << c.label_smoothing << "\n"
            << "batch_size=" << c.batch_size << "\n"
            << "learning_rate=" << c.learning_rate << "\n"
            << "adam_beta1=" << c.adam_beta1 << "\n"
            << "adam_beta2=" << c.adam_beta2 << "\n"
            << "adam_eps=" << c.adam_eps << "\n"
            << "max_grad_norm=" << c.max_grad_norm << "\n"
            << "total_steps=" << c.total_steps << "\n"
            << "log_interval=" << c.log_interval << "\n"
            << "checkpoint_interval=" << c.checkpoint_interval << "\n"
            << "beta=" << st.beta << "\n"
            << "seed=" << st.seed << "\n"
            << "step=" << st.step << "\n"
            << "capacity=" << st.capacity << "\n"
            << "opt_vae.t=" << st.opt_vae.t() << "\n"
            << "opt_disc.t=" << st.opt_disc.t() << "\n"
            << "opt_adv_enc.t=" << st.opt_adv_enc.t() << "\n"
            << "opt_adv_dec.t=" << st.opt_adv_dec.t() << "\n"
            << "rng_data=" << ckptdetail::rng_to_string(st.rng_data) << "\n"
            << "rng_noise=" << ckptdetail::rng_to_string(st.rng_noise) << "\n"
            << "rng_perm=" << ckptdetail::rng_to_string(st.rng_perm) << "\n";
    std::ofstream cfgfile(dir / "config.txt", std::ios::trunc);
    cfgfile << cfgtext.str();
    if (!cfgfile) throw std::runtime_error("checkpoint: cannot write " + (dir / "config.txt").string());
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const ckptdetail::KeyValues kv(dir / "config.txt");
    if (kv.str("format") != "davalab-checkpoint-v1")
        throw std::runtime_error("checkpoint: unsupported format " + kv.str("format"));
    if (kv.str("init") != "fanin_uniform")
        throw std::runtime_error("checkpoint: unknown init scheme " + kv.str("init"));

    DavaConfig cfg;
    cfg.network.image_size = static_cast<int>(kv.integer("image_size"));
    cfg.network.channels = static_cast<int>(kv.integer("channels"));
    cfg.network.z_dim = static_cast<int>(kv.integer("z_dim"));
    cfg.gamma = kv.num("gamma");
    cfg.capacity_exponent = static_cast<int>(kv.integer("capacity_exponent"));
    cfg.delta_c = kv.num("delta_c");
    cfg.grace_band = kv.num("grace_band");
    cfg.mu_enc = kv.num("mu_enc");
    cfg.mu_dec = kv.num("mu_dec");
    cfg.label_smoothing = kv.num("label_smoothing");
    cfg.batch_size = static_cast<int>(kv.integer("batch_size"));
    cfg.learning_rate = kv.num("learning_rate");
    cfg.adam_beta1 = kv.num("adam_beta1");
    cfg.adam_beta2 = kv.num("adam_beta2");
    cfg.adam_eps = kv.num("adam_eps");
    cfg.max_grad_norm = kv.num("max_grad_norm");
    cfg.total_steps = kv.integer("total_steps");
    cfg.log_interval = kv.integer("log_interval");
    cfg.checkpoint_interval = kv.integer("checkpoint_interval");

    TrainState<T> st = make_train_state<T>(cfg, kv.u64("seed"), kv.str("architecture"));
    st.beta = kv.num("beta");
    st.step = kv.integer("step");
    st.capacity = kv.num("capacity");
    st.opt_vae.t() = kv.integer("opt_vae.t");
    st.opt_disc.t() = kv.integer("opt_disc.t");
    st.opt_adv_enc.t() = kv.integer("opt_adv_enc.t");
    st.opt_adv_dec.t() = kv.integer("opt_adv_dec.t");
    ckptdetail::rng_from_string(kv.str("rng_data"), st.rng_data);
    ckptdetail::rng_from_string(kv.str("rng_noise"), st.rng_noise);
    ckptdetail::rng_from_string(kv.str("rng_perm"), st.rng_perm);

    // Parameter targets by name.
    std::map<std::string, nn::Param<T>> targets;
    const auto index_params = [&](std::vector<nn::Param<T>> ps) {
        for (auto& p : ps) targets.emplace(p.name, p);
    };
    index_params(st.encoder.params());
    index_params(st.decoder.params());
    index_params(st.disc.params());

    std::ifstream bin(dir / "params.bin", std::ios::binary | std::ios::ate);
    if (!bin) throw std::runtime_error("checkpoint: cannot open " + (dir / "params.bin").string());
    const std::streamoff bytes = bin.tellg();
    if (bytes < 0 || bytes % static_cast<std::streamoff>(sizeof(float)) != 0)
        throw std::runtime_error("checkpoint: params.bin is not a whole number of float32 values");
    std::vector<float> flat(static_cast<std::size_t>(bytes) / sizeof(float));
    bin.seekg(0, std::ios::beg);
    bin.read(reinterpret_cast<char*>(flat.data()), bytes);
    if (!bin) throw std::runtime_error("checkpoint: short read of params.bin");

    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: cannot open " + (dir / "manifest.txt").string());
    std::map<std::string, bool> seen;
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    std::size_t offset = 0, count = 0;
    while (manifest >> name >> rows >> cols >> offset >> count) {
        if (offset + count > flat.size())
            throw std::runtime_error("checkpoint: block '" + name + "' overruns params.bin");
        const float* src = flat.data() + offset;
        if (const auto it = targets.find(name); it != targets.end()) {
            nn::Param<T>& p = it->second;
            if (static_cast<std::size_t>(p.size) != count || p.rows != rows || p.cols != cols)
                throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
            for (std::size_t i = 0; i < count; ++i) p.value[i] = static_cast<T>(src[i]);
            seen[name] = true;
        } else if (name.size() > 2 && (name.ends_with(".m") || name.ends_with(".v"))) {
            const std::string opt_name = name.substr(0, name.size() - 2);
            nn::Adam<T>* opt = nullptr;
            if (opt_name == "opt_vae") opt = &st.opt_vae;
            else if (opt_name == "opt_disc") opt = &st.opt_disc;
            else if (opt_name == "opt_adv_enc") opt = &st.opt_adv_enc;
            else if (opt_name == "opt_adv_dec") opt = &st.opt_adv_dec;
            if (!opt) throw std::runtime_error("checkpoint: unknown optimizer block '" + name + "'");
            std::vector<T>& dst = name.ends_with(".m") ? opt->m() : opt->v();
            dst.resize(count);
            for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<T>(src[i]);
        } else {
            throw std::runtime_error("checkpoint: unknown block '" + name + "'");
        }
    }
    for (const auto& [pname, p] : targets)
        if (!seen.count(pname))
            throw std::runtime_error("checkpoint: parameter '" + pname + "' missing from manifest");
    return st;
}

}  // namespace davalab::train
