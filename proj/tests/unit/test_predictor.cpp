#include <cmath>
#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "specs.hpp"
#include "test_util.hpp"
#include "textures.hpp"
#include "vstab/predictor.hpp"
#include "vstab/rng.hpp"

using namespace vstab;
using vstab::testing::TempDir;
using vstab::testing::tiny_spec;

namespace {

FrameStack random_stack(int level, std::uint64_t seed) {
    Rng rng(seed);
    FrameStack s;
    s.level = level;
    s.size = level_spec(level).size;
    s.interval = level_spec(level).interval;
    for (int k = 0; k < kStackDepth; ++k) {
        Frame f = Frame::filled(s.size, s.size, 1, 0);
        for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        s.frames.push_back(std::move(f));
    }
    return s;
}

// Direct loop evaluation of the level network, independent of the tape.
AffineParams naive_forward(const PredictorModel& model, const FrameStack& stack) {
    const auto& layers = model.spec().levels[stack.level - 1];
    int C = kStackDepth, H = stack.size, W = stack.size;
    std::vector<double> x;
    for (const auto& f : stack.frames) {
        for (auto p : f.pixels) x.push_back(p / 255.0);
    }
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const ConvLayer& L = layers[li];
        const Tensor& w = model.tensors()[model.tensor_index(stack.level, li)];
        const Tensor& b = model.tensors()[model.tensor_index(stack.level, li) + 1];
        const int Ho = (H - L.kernel) / L.stride + 1, Wo = (W - L.kernel) / L.stride + 1;
        std::vector<double> y(static_cast<std::size_t>(L.out_channels) * Ho * Wo);
        for (int o = 0; o < L.out_channels; ++o) {
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = b.data[o];
                    for (int c = 0; c < C; ++c) {
                        for (int i = 0; i < L.kernel; ++i) {
                            for (int j = 0; j < L.kernel; ++j) {
                                acc += w.data[((o * C + c) * L.kernel + i) * L.kernel + j] *
                                       x[(static_cast<std::size_t>(c) * H + oy * L.stride + i) * W + ox * L.stride + j];
                            }
                        }
                    }
                    if (L.activation == Activation::Relu) acc = std::max(acc, 0.0);
                    y[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox] = acc;
                }
            }
        }
        x = std::move(y);
        C = L.out_channels;
        H = Ho;
        W = Wo;
    }
    double out[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < H * W; ++i) out[c] += x[static_cast<std::size_t>(c) * H * W + i];
        out[c] = out[c] / (H * W) * model.spec().output_gain;
    }
    return {out[0], out[1], out[2]};
}

// Model whose every level emits a fixed output through the last-layer bias.
PredictorModel constant_model(const std::array<AffineParams, kLevelCount>& outputs) {
    PredictorModel m = PredictorModel::zeros(tiny_spec(1000.0));
    for (int l = 1; l <= kLevelCount; ++l) {
        Tensor& b = m.bias(l, 1);
        const AffineParams& o = outputs[l - 1];
        b.data = {o.theta / 1000.0, o.dx / 1000.0, o.dy / 1000.0};
    }
    return m;
}

}  // namespace

TEST(ConvSpec, OutputSize) {
    EXPECT_EQ(conv_output_size(30, 5, 2), 13);
    EXPECT_EQ(conv_output_size(256, 8, 8), 32);
    EXPECT_EQ(conv_output_size(125, 5, 4), 31);
    EXPECT_EQ(conv_output_size(3, 5, 1), 0);
}

TEST(ConvSpec, ToyIsValid) {
    const ConvSpec s = ConvSpec::toy();
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.output_gain, kParamScale);
    EXPECT_EQ(s.parameter_count(), PredictorModel(s, 1).parameter_count());
    EXPECT_NO_THROW(tiny_spec().validate());
    EXPECT_LE(tiny_spec().parameter_count(), 5000u);
}

TEST(ConvSpec, ValidationErrors) {
    ConvSpec s = tiny_spec();
    s.levels[0][0].in_channels = 3;
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
    s = tiny_spec();
    s.levels[1].back().out_channels = 4;
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
    s = tiny_spec();
    s.levels[0][0].kernel = 31;
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
    s = tiny_spec();
    s.levels[2].clear();
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
    s = tiny_spec(0.0);
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
    s = tiny_spec(std::nan(""));
    EXPECT_VSTAB_ERROR(s.validate(), ErrorCode::InvalidArgument);
}

TEST(ConvSpec, TextRoundTrip) {
    for (const ConvSpec& s : {ConvSpec::toy(), tiny_spec(), tiny_spec(0.1 + 0.2)}) {
        EXPECT_EQ(ConvSpec::parse(s.to_text()), s);
    }
    const ConvSpec p = ConvSpec::parse(
        "# comment\nlevel 1\nconv 24 3 3 3 none\nlevel 2\nconv 24 3 5 4 relu\nlevel 3\nconv 24 3 8 8 none\n");
    EXPECT_EQ(p.output_gain, 1.0);
    EXPECT_EQ(p.levels[0][0].activation, Activation::None);
    EXPECT_EQ(p.levels[1][0].stride, 4);
    EXPECT_VSTAB_ERROR(ConvSpec::parse("level 1\nconv 24 3 3 3 none\n"), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(ConvSpec::parse("level 9\n"), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(ConvSpec::parse("level 1\nconv 24 3 x 1 relu\n"), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(ConvSpec::parse("pool 2\n"), ErrorCode::InvalidArgument);
    EXPECT_VSTAB_ERROR(ConvSpec::parse("gain -1\n"), ErrorCode::InvalidArgument);
}

TEST(Model, InitialisationIsDeterministicAndBounded) {
    const ConvSpec s = ConvSpec::toy();
    const PredictorModel a(s, 3), b(s, 3), c(s, 4);
    EXPECT_EQ(a.tensors().size(), 18u);
    bool differs = false;
    for (std::size_t k = 0; k < a.tensors().size(); ++k) {
        EXPECT_EQ(a.tensors()[k].data, b.tensors()[k].data);
        differs = differs || a.tensors()[k].data != c.tensors()[k].data;
    }
    EXPECT_TRUE(differs);
    for (int l = 1; l <= kLevelCount; ++l) {
        const auto& layers = s.levels[l - 1];
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const double fan_in = layers[i].in_channels * layers[i].kernel * layers[i].kernel;
            const double head = i + 1 == layers.size() ? s.output_gain : 1.0;
            const double bound = std::sqrt(6.0 / fan_in) / head;
            const Tensor& w = a.tensors()[a.tensor_index(l, i)];
            EXPECT_EQ(w.shape, (std::vector<int>{layers[i].out_channels, layers[i].in_channels, layers[i].kernel,
                                                 layers[i].kernel}));
            double max_abs = 0.0;
            for (double v : w.data) {
                max_abs = std::max(max_abs, std::abs(v));
                EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
            }
            EXPECT_LE(max_abs, bound * (1 + 1e-6));
            EXPECT_GT(max_abs, bound * 0.5);
            for (double v : a.tensors()[a.tensor_index(l, i) + 1].data) EXPECT_EQ(v, 0.0);
        }
    }
    EXPECT_VSTAB_ERROR(a.tensor_index(1, 3), ErrorCode::IndexOutOfRange);
}

TEST(Model, ForwardMatchesNaiveLoops) {
    for (const ConvSpec& spec : {tiny_spec(), tiny_spec(1000.0), ConvSpec::toy()}) {
        const PredictorModel m(spec, 11);
        for (int l = 1; l <= kLevelCount; ++l) {
            const FrameStack s = random_stack(l, 50 + l);
            const AffineParams got = forward_level(m, s);
            const AffineParams want = naive_forward(m, s);
            const double tol = 1e-9 * std::max(1.0, spec.output_gain);
            EXPECT_NEAR(got.theta, want.theta, tol) << l;
            EXPECT_NEAR(got.dx, want.dx, tol) << l;
            EXPECT_NEAR(got.dy, want.dy, tol) << l;
        }
    }
}

TEST(Model, TapeForwardMatchesPlainForward) {
    PredictorModel m(ConvSpec::toy(), 2);
    const FrameStack s = random_stack(2, 9);
    Graph g;
    const Var out = forward_level(g, m, s);
    const AffineParams plain = forward_level(m, s);
    EXPECT_EQ(g.value(out).data, (std::vector<double>{plain.theta, plain.dx, plain.dy}));
}

TEST(Model, FreshToyModelStartsNearIdentity) {
    const PredictorModel m(ConvSpec::toy(), 1);
    for (int l = 1; l <= kLevelCount; ++l) {
        const AffineParams o = forward_level(m, random_stack(l, l));
        EXPECT_LT(std::abs(o.theta) + std::abs(o.dx) + std::abs(o.dy), 30.0) << l;
    }
}

TEST(Model, ZeroModelPredictsIdentity) {
    const PredictorModel m = PredictorModel::zeros(ConvSpec::toy());
    EXPECT_EQ(forward_level(m, random_stack(1, 1)), AffineParams{});
    HistoryBuffer h;
    const Frame f = vstab::testing::smooth_texture(96, 64, 1);
    h.push(f);
    const MultiscaleResult r = forward_multiscale(m, h, f);
    EXPECT_EQ(r.params.theta, 0.0);
    EXPECT_EQ(r.params.dx, 0.0);
    EXPECT_EQ(r.params.dy, 0.0);
}

TEST(Model, StackTensorScalesAndChecksShape) {
    FrameStack s = random_stack(1, 4);
    const Tensor t = stack_tensor(s);
    EXPECT_EQ(t.shape, (std::vector<int>{kStackDepth, 30, 30}));
    EXPECT_EQ(t.data[0], s.frames[0].pixels[0] / 255.0);
    EXPECT_EQ(t.data[23 * 900 + 5], s.frames[23].pixels[5] / 255.0);
    s.frames.pop_back();
    EXPECT_VSTAB_ERROR(stack_tensor(s), ErrorCode::ShapeMismatch);
    FrameStack wrong = random_stack(1, 4);
    wrong.size = 125;
    EXPECT_VSTAB_ERROR(forward_level(PredictorModel(tiny_spec(), 1), wrong), ErrorCode::ShapeMismatch);
}

TEST(Multiscale, DenormalizeScalesPerAxis) {
    const AffineParams p = denormalize({500.0, 3000.0, -1500.0}, 1, {1280, 720});
    EXPECT_DOUBLE_EQ(p.theta, 0.5);
    EXPECT_DOUBLE_EQ(p.dx, 3.0 * 1280 / 30);
    EXPECT_DOUBLE_EQ(p.dy, -1.5 * 720 / 30);
}

TEST(Multiscale, ComposesLevelOutputsInOrder) {
    const std::array<AffineParams, kLevelCount> outs{
        AffineParams{10.0, 200.0, -100.0}, AffineParams{-4.0, 50.0, 80.0}, AffineParams{2.0, -30.0, 10.0}};
    const PredictorModel m = constant_model(outs);
    HistoryBuffer h;
    const Frame f = vstab::testing::smooth_texture(160, 120, 2);
    h.push(f);
    const MultiscaleResult r = forward_multiscale(m, h, f);
    const RotationCenter c = frame_center(160, 120);
    // point-wise oracle: map through A1, then dA2, then dA3
    for (const Point2 p0 : {Point2{0, 0}, Point2{159, 0}, Point2{40, 100}}) {
        Point2 q = p0;
        for (int l = 1; l <= kLevelCount; ++l) {
            EXPECT_NEAR(r.level_outputs[l - 1].dx, outs[l - 1].dx, 1e-9);
            const double s = level_spec(l).size;
            const AffineParams px{outs[l - 1].theta / 1000, outs[l - 1].dx / 1000 * 160 / s,
                                  outs[l - 1].dy / 1000 * 120 / s};
            q = params_to_matrix(px, c).apply(q);
        }
        const Point2 got = params_to_matrix(r.params, c).apply(p0);
        EXPECT_NEAR(got.x, q.x, 1e-9);
        EXPECT_NEAR(got.y, q.y, 1e-9);
    }
    HistoryBuffer empty;
    EXPECT_VSTAB_ERROR(forward_multiscale(m, empty, f), ErrorCode::InsufficientHistory);
}

TEST(Checkpoint, RoundTripIsExact) {
    TempDir dir;
    PredictorModel m(ConvSpec::toy(), 8);
    save_checkpoint(m, dir / "m.ckpt");
    const PredictorModel r = load_checkpoint(dir / "m.ckpt", ConvSpec::toy());
    EXPECT_EQ(r.spec(), m.spec());
    for (std::size_t k = 0; k < m.tensors().size(); ++k) EXPECT_EQ(r.tensors()[k].data, m.tensors()[k].data);

    const std::string bytes = vstab::testing::read_file(dir / "m.ckpt");
    const std::string text = m.spec().to_text();
    ASSERT_GE(bytes.size(), 9u);
    EXPECT_EQ(bytes.substr(0, 5), "STBN1");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
    EXPECT_EQ(len, text.size());
    EXPECT_EQ(bytes.substr(9, len), text);
    EXPECT_EQ(bytes.size(), 9 + len + 4 * m.parameter_count());
    float first = 0.0f;
    std::memcpy(&first, bytes.data() + 9 + len, 4);
    EXPECT_EQ(static_cast<double>(first), m.tensors()[0].data[0]);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    TempDir dir;
    save_checkpoint(PredictorModel(tiny_spec(), 1), dir / "ok.ckpt");
    const std::string good = vstab::testing::read_file(dir / "ok.ckpt");
    vstab::testing::write_file(dir / "magic.ckpt", "XTBN1" + good.substr(5));
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "magic.ckpt"), ErrorCode::CorruptCheckpoint);
    vstab::testing::write_file(dir / "short.ckpt", good.substr(0, good.size() - 3));
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "short.ckpt"), ErrorCode::CorruptCheckpoint);
    vstab::testing::write_file(dir / "long.ckpt", good + "x");
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "long.ckpt"), ErrorCode::CorruptCheckpoint);
    vstab::testing::write_file(dir / "tiny.ckpt", "STB");
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "tiny.ckpt"), ErrorCode::CorruptCheckpoint);
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "absent.ckpt"), ErrorCode::IoFailure);
    EXPECT_VSTAB_ERROR(load_checkpoint(dir / "ok.ckpt", ConvSpec::toy()), ErrorCode::SpecMismatch);
    EXPECT_NO_THROW(load_checkpoint(dir / "ok.ckpt", tiny_spec()));
}
