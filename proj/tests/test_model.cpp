#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oarseg/losses.hpp"
#include "oarseg/model.hpp"
#include "test_support.hpp"

using namespace oarseg;
using namespace oarseg_test;

namespace {

// Closed-form parameter count derived from the architecture description,
// independently of build_model's layer enumeration.
int64_t expected_parameter_count(const ModelConfig& c) {
    auto conv = [](int co, int ci, int k) { return static_cast<int64_t>(co) * ci * k * k + co; };
    auto bn = [](int ch) { return static_cast<int64_t>(2) * ch; };

    int64_t total = 0;
    int ch_in = c.in_channels;
    std::vector<int> skip_channels;
    for (int i = 0; i < c.depth; ++i) {
        const int ch = c.base_channels << i;
        total += conv(ch, ch_in, 3) + bn(ch);  // conv1
        total += conv(ch, ch, 3) + bn(ch);     // conv2
        int out = ch;
        if (c.residual_mode == ResidualMode::add) {
            if (ch_in != ch) total += conv(ch, ch_in, 1);  // projection
        } else {
            out = ch + ch_in;
        }
        skip_channels.push_back(out);
        ch_in = out;
    }
    const int bottleneck_out = c.base_channels << c.depth;
    total += static_cast<int64_t>(c.dilation_rates.size()) * conv(bottleneck_out, ch_in, 3);
    int below = bottleneck_out;
    for (int i = c.depth - 1; i >= 0; --i) {
        const int ch = c.base_channels << i;
        total += conv(ch, below, 3) + bn(ch);                                       // upconv
        total += conv(ch, ch + skip_channels[static_cast<size_t>(i)], 3) + bn(ch);  // conv1
        total += conv(ch, ch, 3) + bn(ch);                                          // conv2
        below = ch;
    }
    total += conv(c.num_classes, below, 1);  // head
    return total;
}

}  // namespace

TEST_CASE("default config parameter count matches the closed form") {
    ModelConfig config;
    ModelState state = build_model(config);
    const int64_t expected = expected_parameter_count(config);
    CHECK(total_parameters(state.params) == expected);
    CHECK(expected == 618109);  // hand-computed for the default architecture
}

TEST_CASE("parameter count formula holds across configurations") {
    ModelConfig a;
    a.depth = 2;
    a.base_channels = 4;
    a.num_classes = 3;
    CHECK(total_parameters(build_model(a).params) == expected_parameter_count(a));

    ModelConfig b;
    b.depth = 3;
    b.base_channels = 6;
    b.residual_mode = ResidualMode::concat;
    b.dilation_rates = {1, 2};
    CHECK(total_parameters(build_model(b).params) == expected_parameter_count(b));
}

TEST_CASE("smallest legal network builds and runs") {
    ModelConfig config;
    config.depth = 1;
    config.base_channels = 1;
    config.num_classes = 2;
    ModelState state = build_model(config);
    Rng rng(1);
    Tensor input = random_tensor({1, 1, 8, 8}, rng);
    Tensor out = forward(nullptr, state, input, Mode::train);
    CHECK(out.shape() == Shape{1, 2, 8, 8});
    CHECK(out.all_finite());
}

TEST_CASE("same seed gives bit-identical parameters") {
    ModelConfig config;
    config.seed = 1234;
    ModelState a = build_model(config);
    ModelState b = build_model(config);
    REQUIRE(a.params.size() == b.params.size());
    for (const auto& [name, t] : a.params) {
        const Tensor& other = b.params.at(name);
        REQUIRE(t.shape() == other.shape());
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == other.data()[i]);
    }
    ModelConfig other_seed = config;
    other_seed.seed = 99;
    ModelState c = build_model(other_seed);
    bool any_diff = false;
    for (const auto& [name, t] : a.params) {
        const Tensor& o = c.params.at(name);
        for (int64_t i = 0; i < t.numel() && !any_diff; ++i) any_diff = t.data()[i] != o.data()[i];
    }
    CHECK(any_diff);
}

TEST_CASE("forward at the 288x288 crop size") {
    ModelConfig config;
    ModelState state = build_model(config);
    Tensor input = Tensor::zeros({1, 1, 288, 288});
    Rng rng(5);
    for (int64_t i = 0; i < input.numel(); ++i) input.data()[i] = rng.normal(0, 1);
    Tensor out = forward(nullptr, state, input, Mode::train);
    CHECK(out.shape() == Shape{1, 5, 288, 288});

    const int64_t plane = 288 * 288;
    for (int64_t i = 0; i < plane; i += 4771) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += out.data()[c * plane + i];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("forward rejects indivisible spatial dims naming the divisor") {
    ModelConfig config;
    ModelState state = build_model(config);
    Tensor input = Tensor::zeros({1, 1, 30, 30});
    CHECK_THROWS_WITH_AS(forward(nullptr, state, input, Mode::train),
                         doctest::Contains("divisible by 16"), std::invalid_argument);
}

TEST_CASE("predict_labels argmax with low-index tie break") {
    Tensor onehot = Tensor::zeros({1, 3, 1, 2});
    onehot.at({0, 2, 0, 0}) = 1.0;
    onehot.at({0, 1, 0, 1}) = 1.0;
    const std::vector<uint8_t> labels = predict_labels(onehot);
    CHECK(labels[0] == 2);
    CHECK(labels[1] == 1);

    Tensor uniform = Tensor::full({1, 4, 2, 2}, 0.25);
    for (uint8_t l : predict_labels(uniform)) CHECK(l == 0);

    Tensor probs = Tensor::from_data({1, 5, 1, 1}, {0.1, 0.2, 0.4, 0.2, 0.1});
    CHECK(predict_labels(probs)[0] == 2);
}

TEST_CASE("bottleneck with only the rate-1 kernel equals a plain conv") {
    ModelConfig config;
    config.depth = 2;
    config.base_channels = 4;
    ModelState state = build_model(config);
    for (size_t j = 2; j <= config.dilation_rates.size(); ++j) {
        const std::string name = "bottleneck.dil" + std::to_string(j);
        Tensor& w = state.params.at(name + ".weight");
        Tensor& b = state.params.at(name + ".bias");
        for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = 0.0;
        for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] = 0.0;
    }

    Rng rng(6);
    Tensor x = random_tensor({2, 8, 6, 6}, rng);  // channels after the last encoder block
    Tensor via_bottleneck = bottleneck_forward(nullptr, state, x);
    Tensor plain = conv2d(nullptr, x, state.params.at("bottleneck.dil1.weight"),
                          state.params.at("bottleneck.dil1.bias"), 1, 1);
    REQUIRE(via_bottleneck.shape() == plain.shape());
    for (int64_t i = 0; i < plain.numel(); ++i) CHECK(via_bottleneck.data()[i] == plain.data()[i]);
}

TEST_CASE("eval-mode forward is a pure function") {
    ModelConfig config;
    config.depth = 2;
    config.base_channels = 4;
    ModelState state = build_model(config);
    Rng rng(7);
    Tensor warmup = random_tensor({2, 1, 16, 16}, rng);
    forward(nullptr, state, warmup, Mode::train);  // initialize running stats

    Tensor input = random_tensor({1, 1, 16, 16}, rng);
    Tensor a = forward(nullptr, state, input, Mode::eval);
    Tensor b = forward(nullptr, state, input, Mode::eval);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("gradient flows to every parameter") {
    for (ResidualMode mode : {ResidualMode::add, ResidualMode::concat}) {
        ModelConfig config;
        config.depth = 2;
        config.base_channels = 4;
        config.residual_mode = mode;
        ModelState state = build_model(config);

        Rng rng(8);
        Tensor input = random_tensor({2, 1, 16, 16}, rng);
        Tensor target = Tensor::zeros({2, 5, 16, 16});
        for (int n = 0; n < 2; ++n)
            for (int64_t i = 0; i < 256; ++i)
                target.data()[(n * 5 + static_cast<int>(rng.below(5))) * 256 + i] = 1.0;

        Tape tape;
        Tensor probs = forward(&tape, state, input, Mode::train);
        LossConfig lc;
        Tensor loss = soft_dice_loss(&tape, probs, target, lc);
        tape.backward(loss);

        for (const auto& [name, p] : state.params) {
            REQUIRE_MESSAGE(p.has_grad(), name);
            bool nonzero = false;
            for (int64_t i = 0; i < p.numel() && !nonzero; ++i) nonzero = p.grad()[i] != 0.0;
            CHECK_MESSAGE(nonzero, name);
        }
    }
}

TEST_CASE("full network gradients match finite differences") {
    // depth-4 default-shaped network on a 32x32 input, checked on a sample
    // of parameters against the central-difference oracle
    ModelConfig config;
    ModelState state = build_model(config);
    Rng rng(9);
    Tensor input = random_tensor({1, 1, 32, 32}, rng);
    Tensor target = Tensor::zeros({1, 5, 32, 32});
    for (int64_t i = 0; i < 1024; ++i)
        target.data()[static_cast<int64_t>(rng.below(5)) * 1024 + i] = 1.0;
    LossConfig lc;

    Tape tape;
    Tensor probs = forward(&tape, state, input, Mode::train);
    Tensor loss = soft_dice_loss(&tape, probs, target, lc);
    tape.backward(loss);

    auto loss_value = [&]() {
        Tensor p = forward(nullptr, state, input, Mode::train);
        return soft_dice_loss(nullptr, p, target, lc).data()[0];
    };

    std::vector<std::pair<std::string, int64_t>> elements;
    for (const auto& [name, p] : state.params)
        for (int64_t i = 0; i < p.numel(); ++i) elements.push_back({name, i});

    double worst = 0.0;
    const int samples = 50;
    for (int s = 0; s < samples; ++s) {
        const auto& [name, idx] = elements[rng.below(elements.size())];
        Tensor& p = state.params.at(name);
        const double orig = p.data()[idx];
        const double h = 1e-5;
        p.data()[idx] = orig + h;
        const double fp = loss_value();
        p.data()[idx] = orig - h;
        const double fm = loss_value();
        p.data()[idx] = orig;
        const double fd = (fp - fm) / (2 * h);
        const double analytic = p.grad()[idx];
        const double rel =
            std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-2});
        worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("model summary lists layers and the parameter total") {
    ModelConfig config;
    const std::string text = model_summary(config, 96, 96);
    CHECK(text.find("enc1.conv1") != std::string::npos);
    CHECK(text.find("bottleneck.dil4") != std::string::npos);
    CHECK(text.find("head.conv1x1+softmax") != std::string::npos);
    CHECK(text.find("total parameters: 618109") != std::string::npos);
    CHECK_THROWS_AS(model_summary(config, 30, 30), std::invalid_argument);
}

TEST_CASE("config validation") {
    ModelConfig bad;
    bad.depth = 0;
    CHECK_THROWS_AS(build_model(bad), std::invalid_argument);
    bad = ModelConfig{};
    bad.num_classes = 1;
    CHECK_THROWS_AS(build_model(bad), std::invalid_argument);
    bad = ModelConfig{};
    bad.dilation_rates = {};
    CHECK_THROWS_AS(build_model(bad), std::invalid_argument);
    bad = ModelConfig{};
    bad.dilation_rates = {1, 0};
    CHECK_THROWS_AS(build_model(bad), std::invalid_argument);
}
