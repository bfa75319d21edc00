#include "vstab/predictor.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vstab/error.hpp"
#include "vstab/rng.hpp"

namespace vstab {

namespace {

constexpr char kMagic[] = {'S', 'T', 'B', 'N', '1'};
constexpr std::array<int, 3> kCheckSizes{30, 125, 256};

}  // namespace

int conv_output_size(int in, int kernel, int stride) {
    if (in < kernel) return 0;
    return (in - kernel) / stride + 1;
}

ConvSpec ConvSpec::toy() {
    using A = Activation;
    ConvSpec s;
    s.levels[0] = {{kStackDepth, 16, 5, 2, A::Relu}, {16, 32, 5, 2, A::Relu}, {32, 3, 3, 2, A::None}};
    s.levels[1] = {{kStackDepth, 8, 5, 4, A::Relu}, {8, 16, 3, 2, A::Relu}, {16, 3, 1, 1, A::None}};
    s.levels[2] = {{kStackDepth, 8, 8, 8, A::Relu}, {8, 16, 3, 2, A::Relu}, {16, 3, 1, 1, A::None}};
    s.output_gain = kParamScale;
    return s;
}

void ConvSpec::validate() const {
    if (!std::isfinite(output_gain) || !(output_gain > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "conv spec: gain must be finite and positive");
    }
    for (int l = 0; l < kLevelCount; ++l) {
        const auto& layers = levels[static_cast<std::size_t>(l)];
        const std::string where = "conv spec level " + std::to_string(l + 1);
        if (layers.empty()) throw Error(ErrorCode::InvalidArgument, where + ": no layers");
        int channels = kStackDepth;
        for (const ConvLayer& layer : layers) {
            if (layer.in_channels != channels || layer.out_channels < 1 || layer.kernel < 1 || layer.stride < 1) {
                throw Error(ErrorCode::InvalidArgument, where + ": layer channels or geometry inconsistent");
            }
            channels = layer.out_channels;
        }
        if (channels != 3) throw Error(ErrorCode::InvalidArgument, where + ": last layer must emit 3 channels");
        for (int size : kCheckSizes) {
            int s = size;
            for (const ConvLayer& layer : layers) {
                s = conv_output_size(s, layer.kernel, layer.stride);
                if (s < 1) {
                    throw Error(ErrorCode::InvalidArgument,
                                where + ": empty feature map for input size " + std::to_string(size));
                }
            }
        }
    }
}

std::size_t ConvSpec::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layers : levels) {
        for (const ConvLayer& l : layers) {
            n += static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel + l.out_channels;
        }
    }
    return n;
}

std::string ConvSpec::to_text() const {
    std::ostringstream os;
    char gain[64];
    std::snprintf(gain, sizeof(gain), "%.17g", output_gain);
    os << "gain " << gain << "\n";
    for (int l = 0; l < kLevelCount; ++l) {
        os << "level " << (l + 1) << "\n";
        for (const ConvLayer& layer : levels[static_cast<std::size_t>(l)]) {
            os << "conv " << layer.in_channels << " " << layer.out_channels << " " << layer.kernel << " "
               << layer.stride << " " << (layer.activation == Activation::Relu ? "relu" : "none") << "\n";
        }
    }
    return os.str();
}

ConvSpec ConvSpec::parse(const std::string& text) {
    ConvSpec spec;
    std::istringstream is(text);
    std::string line;
    int current = 0;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word) || word[0] == '#') continue;
        if (word == "gain") {
            std::string v;
            if (!(ls >> v)) throw Error(ErrorCode::InvalidArgument, "conv spec: bad gain line '" + line + "'");
            try {
                spec.output_gain = std::stod(v);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidArgument, "conv spec: bad gain line '" + line + "'");
            }
        } else if (word == "level") {
            if (!(ls >> current) || current < 1 || current > kLevelCount) {
                throw Error(ErrorCode::InvalidArgument, "conv spec: bad level line '" + line + "'");
            }
        } else if (word == "conv") {
            ConvLayer layer;
            std::string act;
            if (current == 0 || !(ls >> layer.in_channels >> layer.out_channels >> layer.kernel >> layer.stride >> act) ||
                (act != "relu" && act != "none")) {
                throw Error(ErrorCode::InvalidArgument, "conv spec: bad conv line '" + line + "'");
            }
            layer.activation = act == "relu" ? Activation::Relu : Activation::None;
            spec.levels[static_cast<std::size_t>(current - 1)].push_back(layer);
        } else {
            throw Error(ErrorCode::InvalidArgument, "conv spec: unknown directive '" + word + "'");
        }
    }
    spec.validate();
    return spec;
}

PredictorModel::PredictorModel(ConvSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    for (const auto& layers : spec_.levels) {
        for (const ConvLayer& l : layers) {
            Tensor w({l.out_channels, l.in_channels, l.kernel, l.kernel});
            // The head is divided by the gain so a fresh model starts near the identity.
            const double head = &l == &layers.back() ? spec_.output_gain : 1.0;
            const double bound = std::sqrt(6.0 / (static_cast<double>(l.in_channels) * l.kernel * l.kernel)) / head;
            for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
            tensors_.push_back(std::move(w));
            tensors_.emplace_back(std::vector<int>{l.out_channels});
        }
    }
    quantize();
}

PredictorModel PredictorModel::zeros(ConvSpec spec) {
    PredictorModel m(std::move(spec), 0);
    for (Tensor& t : m.tensors_) std::fill(t.data.begin(), t.data.end(), 0.0);
    return m;
}

std::size_t PredictorModel::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

std::size_t PredictorModel::tensor_index(int level, std::size_t layer) const {
    level_spec(level);
    std::size_t off = 0;
    for (int l = 1; l < level; ++l) off += 2 * spec_.levels[static_cast<std::size_t>(l - 1)].size();
    if (layer >= spec_.levels[static_cast<std::size_t>(level - 1)].size()) {
        throw Error(ErrorCode::IndexOutOfRange, "layer index out of range");
    }
    return off + 2 * layer;
}

void PredictorModel::zero_grad() {
    for (Tensor& t : tensors_) t.zero_grad();
}

void PredictorModel::quantize() {
    for (Tensor& t : tensors_) {
        for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
    }
}

Tensor stack_tensor(const FrameStack& stack) {
    if (static_cast<int>(stack.frames.size()) != kStackDepth) {
        throw Error(ErrorCode::ShapeMismatch, "stack must hold " + std::to_string(kStackDepth) + " frames");
    }
    const int s = stack.size;
    Tensor t({kStackDepth, s, s});
    std::size_t k = 0;
    for (const Frame& f : stack.frames) {
        if (f.width != s || f.height != s || f.channels != 1) {
            throw Error(ErrorCode::ShapeMismatch, "stack frame is not a " + std::to_string(s) + "x" +
                                                      std::to_string(s) + " grayscale image");
        }
        for (std::uint8_t p : f.pixels) t.data[k++] = p / 255.0;
    }
    return t;
}

namespace {

template <typename Bind>
Var record_level(Graph& graph, const ConvSpec& spec, const FrameStack& stack, Bind bind) {
    const int level = stack.level;
    const LevelSpec& ls = level_spec(level);
    if (stack.size != ls.size) {
        throw Error(ErrorCode::ShapeMismatch, "stack size does not match level " + std::to_string(level));
    }
    const auto& layers = spec.levels[static_cast<std::size_t>(level - 1)];
    Var x = graph.constant(stack_tensor(stack));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto [w, b] = bind(level, i);
        x = graph.conv2d(x, w, b, layers[i].stride);
        if (layers[i].activation == Activation::Relu) x = graph.relu(x);
    }
    x = graph.spatial_mean(x);
    return spec.output_gain == 1.0 ? x : graph.scale(x, spec.output_gain);
}

}  // namespace

Var forward_level(Graph& graph, PredictorModel& model, const FrameStack& stack) {
    return record_level(graph, model.spec(), stack, [&](int level, std::size_t i) {
        return std::pair{graph.param(model.weight(level, i)), graph.param(model.bias(level, i))};
    });
}

AffineParams forward_level(const PredictorModel& model, const FrameStack& stack) {
    Graph g;
    const Var out = record_level(g, model.spec(), stack, [&](int level, std::size_t i) {
        const std::size_t k = model.tensor_index(level, i);
        return std::pair{g.constant(model.tensors()[k]), g.constant(model.tensors()[k + 1])};
    });
    const Tensor& t = g.value(out);
    return {t.data[0], t.data[1], t.data[2]};
}

AffineParams denormalize(const AffineParams& normalized, int level, Resolution to) {
    const AffineParams p{normalized.theta / kParamScale, normalized.dx / kParamScale, normalized.dy / kParamScale};
    return rescale_params(p, level_resolution(level), to);
}

MultiscaleResult forward_multiscale(const PredictorModel& model, const HistoryBuffer& history, const Frame& unstable) {
    if (history.empty()) {
        throw Error(ErrorCode::InsufficientHistory, "forward_multiscale: history is empty");
    }
    const Resolution full{unstable.width, unstable.height};
    const RotationCenter c = frame_center(full);
    MultiscaleResult r;
    AffineMatrix total = AffineMatrix::identity();
    for (int level = 1; level <= kLevelCount; ++level) {
        const Frame input = level == 1 ? unstable : warp(unstable, total);
        const AffineParams out = forward_level(model, build_stack(history, input, level));
        r.level_outputs[static_cast<std::size_t>(level - 1)] = out;
        total = compose(params_to_matrix(denormalize(out, level, full), c), total);
    }
    r.params = matrix_to_params(total, c);
    return r;
}

void save_checkpoint(const PredictorModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write checkpoint " + path.string());
    const std::string text = model.spec().to_text();
    os.write(kMagic, sizeof(kMagic));
    const auto len = static_cast<std::uint32_t>(text.size());
    const unsigned char lb[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                                 static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
    os.write(reinterpret_cast<const char*>(lb), 4);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor& t : model.tensors()) {
        for (double v : t.data) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            os.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!os) throw Error(ErrorCode::IoFailure, "failed writing checkpoint " + path.string());
}

PredictorModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto corrupt = [&](const std::string& why) {
        return Error(ErrorCode::CorruptCheckpoint, path.string() + ": " + why);
    };
    if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw corrupt("bad magic");
    }
    auto u32 = [&](std::size_t at) {
        const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + at);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    std::size_t pos = sizeof(kMagic);
    const std::uint32_t len = u32(pos);
    pos += 4;
    if (bytes.size() - pos < len) throw corrupt("truncated spec");
    ConvSpec spec;
    try {
        spec = ConvSpec::parse(std::string(bytes.data() + pos, len));
    } catch (const Error& e) {
        throw corrupt(std::string("unreadable spec: ") + e.what());
    }
    pos += len;
    PredictorModel model = PredictorModel::zeros(spec);
    const std::size_t need = model.parameter_count() * 4;
    if (bytes.size() - pos < need) throw corrupt("truncated weights");
    if (bytes.size() - pos > need) throw corrupt("trailing bytes");
    for (Tensor& t : model.tensors()) {
        for (double& v : t.data) {
            v = static_cast<double>(std::bit_cast<float>(u32(pos)));
            pos += 4;
            if (!std::isfinite(v)) throw corrupt("non-finite weight");
        }
    }
    return model;
}

PredictorModel load_checkpoint(const std::filesystem::path& path, const ConvSpec& expected) {
    PredictorModel m = load_checkpoint(path);
    if (!(m.spec() == expected)) {
        throw Error(ErrorCode::SpecMismatch, "checkpoint " + path.string() + " was saved with a different conv spec");
    }
    return m;
}

}  // namespace vstab
