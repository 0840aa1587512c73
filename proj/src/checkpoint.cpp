#include "oarseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace oarseg {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'U', 'N', 'D', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    }
    void raw(const void* p, size_t n) { out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    template <typename T>
    void pod(T v) { raw(&v, sizeof(T)); }
    void str(const std::string& s) {
        pod<uint32_t>(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        pod<uint32_t>(static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) pod<int32_t>(d);
        raw(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    }
    void section(const NamedTensors& tensors) {
        pod<uint32_t>(static_cast<uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            str(name);
            tensor(t);
        }
    }
    bool good() const { return static_cast<bool>(out_); }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    }
    void raw(void* p, size_t n) {
        in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw std::runtime_error("checkpoint: truncated file '" + path_ + "'");
    }
    template <typename T>
    T pod() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    std::string str() {
        const uint32_t n = pod<uint32_t>();
        if (n > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length in '" + path_ + "'");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    Tensor tensor() {
        const uint32_t rank = pod<uint32_t>();
        if (rank < 1 || rank > 4) throw std::runtime_error("checkpoint: corrupt tensor rank in '" + path_ + "'");
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = pod<int32_t>();
        Tensor t = Tensor::zeros(shape);
        raw(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
        return t;
    }
    NamedTensors section() {
        NamedTensors tensors;
        const uint32_t count = pod<uint32_t>();
        for (uint32_t i = 0; i < count; ++i) {
            std::string name = str();
            tensors[name] = tensor();
        }
        return tensors;
    }

private:
    std::ifstream in_;
    std::string path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    Writer w(path);
    w.raw(kMagic, sizeof(kMagic));
    w.pod<uint32_t>(kVersion);

    const ModelConfig& m = checkpoint.model;
    w.pod<int32_t>(m.in_channels);
    w.pod<int32_t>(m.num_classes);
    w.pod<int32_t>(m.depth);
    w.pod<int32_t>(m.base_channels);
    w.pod<uint32_t>(static_cast<uint32_t>(m.dilation_rates.size()));
    for (int r : m.dilation_rates) w.pod<int32_t>(r);
    w.pod<uint8_t>(m.residual_mode == ResidualMode::add ? 0 : 1);
    w.pod<uint64_t>(m.seed);

    w.pod<uint8_t>(checkpoint.loss_kind == LossKind::dice ? 0 : 1);
    w.pod<int32_t>(checkpoint.stage);
    w.pod<int32_t>(checkpoint.epoch);
    w.pod<uint64_t>(checkpoint.step);
    w.pod<double>(checkpoint.lr);
    w.pod<double>(checkpoint.best_val_dsc);
    w.pod<int32_t>(checkpoint.best_epoch);
    w.pod<int32_t>(checkpoint.plateau_count);
    w.pod<int32_t>(checkpoint.stop_count);
    for (uint64_t s : checkpoint.rng_state) w.pod<uint64_t>(s);

    w.section(checkpoint.params);
    w.section(checkpoint.buffers);
    w.section(checkpoint.adam_m);
    w.section(checkpoint.adam_v);
    w.pod<uint8_t>(checkpoint.has_best ? 1 : 0);
    if (checkpoint.has_best) {
        w.section(checkpoint.best_params);
        w.section(checkpoint.best_buffers);
    }
    if (!w.good()) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "' (expected UNDRCKPT)");
    const uint32_t version = r.pod<uint32_t>();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " in '" + path + "' (expected " + std::to_string(kVersion) + ")");

    Checkpoint c;
    c.version = version;
    c.model.in_channels = r.pod<int32_t>();
    c.model.num_classes = r.pod<int32_t>();
    c.model.depth = r.pod<int32_t>();
    c.model.base_channels = r.pod<int32_t>();
    const uint32_t n_rates = r.pod<uint32_t>();
    if (n_rates > 64) throw std::runtime_error("checkpoint: corrupt dilation-rate count in '" + path + "'");
    c.model.dilation_rates.clear();
    for (uint32_t i = 0; i < n_rates; ++i) c.model.dilation_rates.push_back(r.pod<int32_t>());
    c.model.residual_mode = r.pod<uint8_t>() == 0 ? ResidualMode::add : ResidualMode::concat;
    c.model.seed = r.pod<uint64_t>();

    c.loss_kind = r.pod<uint8_t>() == 0 ? LossKind::dice : LossKind::tversky;
    c.stage = r.pod<int32_t>();
    c.epoch = r.pod<int32_t>();
    c.step = r.pod<uint64_t>();
    c.lr = r.pod<double>();
    c.best_val_dsc = r.pod<double>();
    c.best_epoch = r.pod<int32_t>();
    c.plateau_count = r.pod<int32_t>();
    c.stop_count = r.pod<int32_t>();
    for (auto& s : c.rng_state) s = r.pod<uint64_t>();

    c.params = r.section();
    c.buffers = r.section();
    c.adam_m = r.section();
    c.adam_v = r.section();
    c.has_best = r.pod<uint8_t>() != 0;
    if (c.has_best) {
        c.best_params = r.section();
        c.best_buffers = r.section();
    }
    return c;
}

NamedTensors clone_tensors(const NamedTensors& tensors) {
    NamedTensors out;
    for (const auto& [name, t] : tensors) out[name] = t.clone();
    return out;
}

NamedTensors buffers_from_state(const ModelState& state) {
    NamedTensors buffers;
    for (const auto& [name, bn] : state.bn_states) {
        if (!bn.initialized) continue;
        buffers[name + ".running_mean"] = bn.running_mean.clone();
        buffers[name + ".running_var"] = bn.running_var.clone();
    }
    return buffers;
}

ModelState model_from_checkpoint(const Checkpoint& checkpoint) {
    ModelState state = build_model(checkpoint.model);
    for (auto& [name, t] : state.params) {
        auto it = checkpoint.params.find(name);
        if (it == checkpoint.params.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (it->second.shape() != t.shape())
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                                     shape_str(it->second.shape()) + ", model expects " +
                                     shape_str(t.shape()));
        t = it->second.clone();
        t.set_requires_grad(true);
    }
    for (auto& [name, bn] : state.bn_states) {
        auto mean_it = checkpoint.buffers.find(name + ".running_mean");
        auto var_it = checkpoint.buffers.find(name + ".running_var");
        if (mean_it != checkpoint.buffers.end() && var_it != checkpoint.buffers.end()) {
            bn.running_mean = mean_it->second.clone();
            bn.running_var = var_it->second.clone();
            bn.initialized = true;
        }
    }
    return state;
}

}  // namespace oarseg
