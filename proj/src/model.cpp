#include "oarseg/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "oarseg/rng.hpp"

namespace oarseg {

void ModelConfig::validate() const {
    if (depth < 1) throw std::invalid_argument("model: depth must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("model: base_channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    if (in_channels < 1) throw std::invalid_argument("model: in_channels must be >= 1");
    if (dilation_rates.empty()) throw std::invalid_argument("model: dilation_rates must be nonempty");
    for (int r : dilation_rates)
        if (r < 1) throw std::invalid_argument("model: dilation rates must be >= 1");
}

namespace {

struct ChannelPlan {
    std::vector<int> enc_in;    // input channels of encoder block i (0-based)
    std::vector<int> enc_conv;  // conv channels of encoder block i (base * 2^i)
    std::vector<int> enc_out;   // block output channels (= skip channels)
    int bottleneck_in = 0;
    int bottleneck_out = 0;
    std::vector<int> dec_in;   // channels arriving from below at decoder block i
    std::vector<int> dec_out;  // decoder block output channels
};

ChannelPlan channel_plan(const ModelConfig& cfg) {
    ChannelPlan plan;
    int ch = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
        const int c = cfg.base_channels << i;
        plan.enc_in.push_back(ch);
        plan.enc_conv.push_back(c);
        const int out = cfg.residual_mode == ResidualMode::add ? c : c + ch;
        plan.enc_out.push_back(out);
        ch = out;
    }
    plan.bottleneck_in = ch;
    plan.bottleneck_out = cfg.base_channels << cfg.depth;
    plan.dec_in.assign(cfg.depth, 0);
    plan.dec_out.assign(cfg.depth, 0);
    int below = plan.bottleneck_out;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        plan.dec_in[i] = below;
        plan.dec_out[i] = cfg.base_channels << i;
        below = plan.dec_out[i];
    }
    return plan;
}

Tensor he_weights(Rng& rng, int co, int ci, int k) {
    Tensor w = Tensor::zeros({co, ci, k, k}, true);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    double* p = w.data();
    const int64_t n = w.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.normal(0.0, stddev);
    return w;
}

void add_conv(ModelState& state, Rng& rng, const std::string& name, int co, int ci, int k) {
    state.params[name + ".weight"] = he_weights(rng, co, ci, k);
    state.params[name + ".bias"] = Tensor::zeros({co}, true);
}

void add_bn(ModelState& state, const std::string& name, int c) {
    state.params[name + ".gamma"] = Tensor::full({c}, 1.0, true);
    state.params[name + ".beta"] = Tensor::zeros({c}, true);
    state.bn_states[name] = BatchNormState{};
}

const Tensor& param(ModelState& state, const std::string& name) {
    auto it = state.params.find(name);
    if (it == state.params.end()) throw std::logic_error("model: missing parameter " + name);
    return it->second;
}

Tensor conv_bn_relu(Tape* tape, ModelState& state, const std::string& conv_name,
                    const std::string& bn_name, const Tensor& x, int padding, int dilation, Mode mode) {
    Tensor y = conv2d(tape, x, param(state, conv_name + ".weight"), param(state, conv_name + ".bias"),
                      padding, dilation);
    y = batchnorm2d(tape, y, param(state, bn_name + ".gamma"), param(state, bn_name + ".beta"),
                    state.bn_states.at(bn_name), state.bn_options, mode);
    return relu(tape, y);
}

}  // namespace

ModelState build_model(const ModelConfig& config) {
    config.validate();
    tune_allocator();
    ModelState state;
    state.config = config;
    const ChannelPlan plan = channel_plan(config);
    Rng rng(config.seed);

    for (int i = 0; i < config.depth; ++i) {
        const std::string prefix = "enc" + std::to_string(i + 1);
        const int ci = plan.enc_in[i], c = plan.enc_conv[i];
        add_conv(state, rng, prefix + ".conv1", c, ci, 3);
        add_bn(state, prefix + ".bn1", c);
        add_conv(state, rng, prefix + ".conv2", c, c, 3);
        add_bn(state, prefix + ".bn2", c);
        if (config.residual_mode == ResidualMode::add && ci != c)
            add_conv(state, rng, prefix + ".proj", c, ci, 1);
    }

    for (size_t j = 0; j < config.dilation_rates.size(); ++j) {
        add_conv(state, rng, "bottleneck.dil" + std::to_string(j + 1), plan.bottleneck_out,
                 plan.bottleneck_in, 3);
    }

    for (int i = config.depth - 1; i >= 0; --i) {
        const std::string prefix = "dec" + std::to_string(i + 1);
        const int din = plan.dec_in[i], c = plan.dec_out[i], skip = plan.enc_out[i];
        add_conv(state, rng, prefix + ".upconv", c, din, 3);
        add_bn(state, prefix + ".upbn", c);
        add_conv(state, rng, prefix + ".conv1", c, c + skip, 3);
        add_bn(state, prefix + ".bn1", c);
        add_conv(state, rng, prefix + ".conv2", c, c, 3);
        add_bn(state, prefix + ".bn2", c);
    }

    add_conv(state, rng, "head", config.num_classes, plan.dec_out.empty() ? 0 : plan.dec_out[0], 1);
    return state;
}

Tensor encoder_block_forward(Tape* tape, ModelState& state, int level, const Tensor& x, Mode mode) {
    const std::string prefix = "enc" + std::to_string(level + 1);
    Tensor y = conv_bn_relu(tape, state, prefix + ".conv1", prefix + ".bn1", x, 1, 1, mode);
    y = conv_bn_relu(tape, state, prefix + ".conv2", prefix + ".bn2", y, 1, 1, mode);
    if (state.config.residual_mode == ResidualMode::add) {
        Tensor shortcut = x;
        if (x.dim(1) != y.dim(1))
            shortcut = conv2d(tape, x, param(state, prefix + ".proj.weight"),
                              param(state, prefix + ".proj.bias"), 0, 1);
        return add(tape, y, shortcut);
    }
    return concat_channels(tape, x, y);
}

Tensor bottleneck_forward(Tape* tape, ModelState& state, const Tensor& x) {
    Tensor acc;
    for (size_t j = 0; j < state.config.dilation_rates.size(); ++j) {
        const int rate = state.config.dilation_rates[j];
        const std::string name = "bottleneck.dil" + std::to_string(j + 1);
        Tensor y = conv2d(tape, x, param(state, name + ".weight"), param(state, name + ".bias"),
                          rate, rate);
        acc = acc.defined() ? add(tape, acc, y) : y;
    }
    return acc;
}

Tensor decoder_block_forward(Tape* tape, ModelState& state, int level, const Tensor& x,
                             const Tensor& skip, Mode mode) {
    const std::string prefix = "dec" + std::to_string(level + 1);
    Tensor y = upsample2d(tape, x);
    y = conv_bn_relu(tape, state, prefix + ".upconv", prefix + ".upbn", y, 1, 1, mode);
    y = concat_channels(tape, y, skip);
    y = conv_bn_relu(tape, state, prefix + ".conv1", prefix + ".bn1", y, 1, 1, mode);
    y = conv_bn_relu(tape, state, prefix + ".conv2", prefix + ".bn2", y, 1, 1, mode);
    return y;
}

Tensor head_forward(Tape* tape, ModelState& state, const Tensor& x) {
    Tensor y = conv2d(tape, x, param(state, "head.weight"), param(state, "head.bias"), 0, 1);
    return softmax_channels(tape, y);
}

Tensor forward(Tape* tape, ModelState& state, const Tensor& batch, Mode mode) {
    if (batch.rank() != 4)
        throw std::invalid_argument("forward: batch must be [N,C,H,W], got " + shape_str(batch.shape()));
    if (batch.dim(1) != state.config.in_channels)
        throw std::invalid_argument("forward: batch has " + std::to_string(batch.dim(1)) +
                                    " channels, model expects " + std::to_string(state.config.in_channels));
    const int divisor = state.config.spatial_divisor();
    if (batch.dim(2) % divisor != 0 || batch.dim(3) % divisor != 0)
        throw std::invalid_argument("forward: spatial dims " + std::to_string(batch.dim(2)) + "x" +
                                    std::to_string(batch.dim(3)) + " must be divisible by " +
                                    std::to_string(divisor));

    Tensor x = batch;
    std::vector<Tensor> skips;
    for (int i = 0; i < state.config.depth; ++i) {
        Tensor block = encoder_block_forward(tape, state, i, x, mode);
        skips.push_back(block);
        x = maxpool2d(tape, block);
    }
    x = bottleneck_forward(tape, state, x);
    for (int i = state.config.depth - 1; i >= 0; --i)
        x = decoder_block_forward(tape, state, i, x, skips[static_cast<size_t>(i)], mode);
    return head_forward(tape, state, x);
}

std::vector<uint8_t> predict_labels(const Tensor& probabilities) {
    if (probabilities.rank() != 4)
        throw std::invalid_argument("predict_labels: input must be [N,K,H,W], got " +
                                    shape_str(probabilities.shape()));
    const int n = probabilities.dim(0), k = probabilities.dim(1);
    const int64_t plane = static_cast<int64_t>(probabilities.dim(2)) * probabilities.dim(3);
    std::vector<uint8_t> labels(static_cast<size_t>(n) * static_cast<size_t>(plane));
    const double* p = probabilities.data();
    for (int ni = 0; ni < n; ++ni) {
        const int64_t base = static_cast<int64_t>(ni) * k * plane;
        for (int64_t i = 0; i < plane; ++i) {
            int best = 0;
            double best_v = p[base + i];
            for (int c = 1; c < k; ++c) {
                const double v = p[base + c * plane + i];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            labels[static_cast<size_t>(ni) * plane + i] = static_cast<uint8_t>(best);
        }
    }
    return labels;
}

int64_t total_parameters(const ParameterSet& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

std::string model_summary(const ModelConfig& config, int input_h, int input_w) {
    config.validate();
    const int divisor = config.spatial_divisor();
    if (input_h % divisor != 0 || input_w % divisor != 0)
        throw std::invalid_argument("summary: input dims must be divisible by " + std::to_string(divisor));
    ModelState state = build_model(config);
    const ChannelPlan plan = channel_plan(config);

    std::ostringstream os;
    os << std::left << std::setw(22) << "layer" << std::setw(22) << "output"
       << "params\n";
    auto row = [&os](const std::string& name, int c, int h, int w, int64_t p) {
        std::ostringstream shape;
        shape << c << "x" << h << "x" << w;
        os << std::left << std::setw(22) << name << std::setw(22) << shape.str() << p << "\n";
    };
    auto conv_params = [&state](const std::string& name) {
        return state.params.at(name + ".weight").numel() + state.params.at(name + ".bias").numel();
    };

    int h = input_h, w = input_w;
    for (int i = 0; i < config.depth; ++i) {
        const std::string p = "enc" + std::to_string(i + 1);
        const int c = plan.enc_conv[i];
        row(p + ".conv1+bn+relu", c, h, w, conv_params(p + ".conv1") + 2 * c);
        row(p + ".conv2+bn+relu", c, h, w, conv_params(p + ".conv2") + 2 * c);
        if (state.params.count(p + ".proj.weight"))
            row(p + ".proj", c, h, w, conv_params(p + ".proj"));
        row(p + ".residual", plan.enc_out[i], h, w, 0);
        h /= 2;
        w /= 2;
        row(p + ".maxpool", plan.enc_out[i], h, w, 0);
    }
    for (size_t j = 0; j < config.dilation_rates.size(); ++j) {
        const std::string name = "bottleneck.dil" + std::to_string(j + 1);
        row(name + " (rate " + std::to_string(config.dilation_rates[j]) + ")", plan.bottleneck_out, h,
            w, conv_params(name));
    }
    row("bottleneck.sum", plan.bottleneck_out, h, w, 0);
    for (int i = config.depth - 1; i >= 0; --i) {
        const std::string p = "dec" + std::to_string(i + 1);
        const int c = plan.dec_out[i];
        h *= 2;
        w *= 2;
        row(p + ".upsample", plan.dec_in[i], h, w, 0);
        row(p + ".upconv+bn+relu", c, h, w, conv_params(p + ".upconv") + 2 * c);
        row(p + ".concat", c + plan.enc_out[i], h, w, 0);
        row(p + ".conv1+bn+relu", c, h, w, conv_params(p + ".conv1") + 2 * c);
        row(p + ".conv2+bn+relu", c, h, w, conv_params(p + ".conv2") + 2 * c);
    }
    row("head.conv1x1+softmax", config.num_classes, h, w, conv_params("head"));
    os << "total parameters: " << total_parameters(state.params) << "\n";
    return os.str();
}

}  // namespace oarseg
