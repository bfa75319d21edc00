#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstab/affine.hpp"
#include "vstab/autodiff.hpp"
#include "vstab/stacking.hpp"

namespace vstab {

enum class Activation { None, Relu };

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    Activation activation = Activation::Relu;

    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Per-level layer lists. Every layer uses VALID padding; the last layer
/// emits 3 channels that are averaged over space into (theta, dx, dy).
struct ConvSpec {
    std::array<std::vector<ConvLayer>, kLevelCount> levels;
    /// Fixed factor applied to the averaged head output. Targets live in the
    /// x1000 domain; a gain of 1000 lets the weights stay at unit scale.
    double output_gain = 1.0;

    /// Default toy network, small enough to train on a CPU in minutes.
    static ConvSpec toy();

    /// Throws InvalidArgument unless channel counts chain from kStackDepth to 3,
    /// every layer leaves a non-empty map for each of the input sizes 30, 125
    /// and 256, and the gain is finite and positive.
    void validate() const;
    std::size_t parameter_count() const;

    /// Text form used in checkpoints and config files:
    ///   gain <output_gain>
    ///   level 1
    ///   conv <in> <out> <kernel> <stride> <relu|none>
    ///   ...
    std::string to_text() const;
    static ConvSpec parse(const std::string& text);

    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Output side of a VALID convolution: floor((in - k) / stride) + 1.
int conv_output_size(int in, int kernel, int stride);

/// One parameter set shared by both siamese branches. Weights are held as
/// doubles but always rounded to float32 so checkpoints are lossless.
class PredictorModel {
public:
    PredictorModel() = default;
    /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases. The last layer
    /// of each level has its bound divided by the spec's output gain.
    PredictorModel(ConvSpec spec, std::uint64_t seed);
    static PredictorModel zeros(ConvSpec spec);

    const ConvSpec& spec() const noexcept { return spec_; }

    /// Weight and bias tensors in declaration order: level 1 layer 1 weight,
    /// bias, layer 2 weight, ...
    std::vector<Tensor>& tensors() noexcept { return tensors_; }
    const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
    std::size_t parameter_count() const;

    /// Index of a layer's weight tensor in tensors(); its bias follows.
    std::size_t tensor_index(int level, std::size_t layer) const;
    Tensor& weight(int level, std::size_t layer) { return tensors_[tensor_index(level, layer)]; }
    Tensor& bias(int level, std::size_t layer) { return tensors_[tensor_index(level, layer) + 1]; }

    void zero_grad();
    /// Rounds every weight to the nearest float32.
    void quantize();

private:
    ConvSpec spec_;
    std::vector<Tensor> tensors_;
};

/// Stack pixels as a [24, S, S] tensor scaled to [0, 1].
Tensor stack_tensor(const FrameStack& stack);

/// Records the level network on `graph` and returns the [3] output node in
/// the x1000 domain. Weights are bound as parameters of `model`.
Var forward_level(Graph& graph, PredictorModel& model, const FrameStack& stack);
/// Plain forward pass.
AffineParams forward_level(const PredictorModel& model, const FrameStack& stack);

/// Converts a x1000 level-domain prediction to pixels at `to`.
AffineParams denormalize(const AffineParams& normalized, int level, Resolution to);

struct MultiscaleResult {
    /// Stabilizing transform at full resolution about the frame center.
    AffineParams params;
    std::array<AffineParams, kLevelCount> level_outputs;
};

/// Level 1 runs on the raw unstable frame. Each later level sees the unstable
/// frame warped by everything predicted so far and adds a correction:
/// total = dA3 after dA2 after A1, composed as full-resolution matrices.
MultiscaleResult forward_multiscale(const PredictorModel& model, const HistoryBuffer& history, const Frame& unstable);

/// Binary checkpoint: "STBN1", u32 LE spec length, spec text, then every
/// tensor as LE float32 in declaration order.
void save_checkpoint(const PredictorModel& model, const std::filesystem::path& path);
/// Throws CorruptCheckpoint on bad magic, truncation or trailing bytes.
PredictorModel load_checkpoint(const std::filesystem::path& path);
/// As above, and throws SpecMismatch unless the stored spec equals `expected`.
PredictorModel load_checkpoint(const std::filesystem::path& path, const ConvSpec& expected);

}  // namespace vstab
