#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vstab/autodiff.hpp"
#include "vstab/motion.hpp"
#include "vstab/predictor.hpp"
#include "vstab/stacking.hpp"

namespace vstab {

/// Loss parts for one sample (or a batch mean). similarity_* are summed over
/// both branches and all levels; smoothness is unweighted.
struct LossBreakdown {
    double similarity_param = 0.0;
    double similarity_image = 0.0;
    double smoothness = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double alpha = 0.0;
};

/// Where the smoothness term's scene motion T_i comes from.
enum class SmoothnessTransform {
    Flow,      // estimate_transform between consecutive ground-truth stable frames
    Identity,  // static scenes: T_i is the identity
};

struct TrainConfig {
    double learning_rate = 0.001;
    double decay = 0.98;
    int decay_every = 5;
    int batch_size = 8;
    double stable_ratio = 0.2;
    double lambda = 10000.0;
    double alpha = 10000.0;
    std::uint64_t seed = 0;
    int epochs = 1;
    /// Unstable pairs drawn per epoch; 0 uses every consecutive pair.
    int pairs_per_epoch = 0;
    SmoothnessTransform smoothness_transform = SmoothnessTransform::Flow;
    ConvSpec spec = ConvSpec::toy();

    /// Throws InvalidArgument on non-positive rates, sizes or weights, or a
    /// stable ratio outside [0, 1].
    void check() const;
};

/// key=value lines mirroring TrainConfig (`spec` names a conv spec file or
/// "toy"; relative paths resolve against the config's directory). Blank lines
/// and '#' comments are ignored; unknown keys throw InvalidArgument.
TrainConfig read_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir = {});

/// lr0 * decay^floor(epoch / decay_every), epochs counted from 0.
double learning_rate_at(const TrainConfig& config, int epoch);

struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update of every tensor from its grad buffer. Moments
/// are allocated on first use; throws ShapeMismatch if tensors or gradients
/// stop matching them.
void adam_step(std::vector<Tensor>& weights, OptimizerState& state, double lr);

/// Single-channel [H,W] node scaled to [0, 1] carrying the frame's mask.
Var image_node(Graph& graph, const Frame& frame);

struct SimilarityTerms {
    Var param;  // MSE over the three normalized parameters
    Var image;  // alpha * mean squared pixel difference
};

/// Similarity terms for a normalized (x1000) prediction node. The image term
/// warps `unstable` by the prediction about `center` and compares it with
/// `stable` over every pixel.
SimilarityTerms similarity_terms(Graph& graph, Var pred, const AffineParams& truth, Var unstable, Var stable,
                                 const RotationCenter& center, double alpha);

/// Masked MSE between warp(warp(u_i, A_i), T) and warp(u_i1, A_i1) over the
/// pixels valid in both. Predictions are normalized (x1000).
Var smoothness_term(Graph& graph, Var pred_i, Var pred_i1, Var u_i, Var u_i1, const AffineMatrix& t,
                    const RotationCenter& center);

/// Stand-alone evaluations of the two terms at a frame's own resolution.
/// `total` holds param + image and smoothness stays 0.
LossBreakdown similarity_loss(const AffineParams& pred, const AffineParams& truth, const Frame& unstable,
                              const Frame& stable, double alpha);
double smoothness_loss(const AffineParams& pred_i, const AffineParams& pred_i1, const Frame& u_i, const Frame& u_i1,
                       const RigidEstimate& t);

/// Corpus item with everything the loss needs precomputed.
struct TrainingItem {
    CorpusItem item;
    /// Level frames of every stable and raw unstable frame, per level.
    std::array<std::vector<Frame>, kLevelCount> stable_levels;
    std::array<std::vector<Frame>, kLevelCount> unstable_levels;
    /// Full-resolution T_i from stable frame i to i + 1 (0-based).
    std::vector<AffineParams> motion;
    std::vector<bool> motion_fallback;

    std::size_t size() const noexcept { return item.unstable.size(); }
};

TrainingItem prepare_training_item(CorpusItem item, SmoothnessTransform mode, std::uint64_t seed);

/// Consecutive pair (frame, frame + 1), 1-based. Stable samples put the
/// ground-truth stable frames in the unstable slots and target the identity.
struct PairSample {
    std::size_t item = 0;
    int frame = 1;
    bool stable = false;
};

/// Network inputs of a pair, per level and branch. Filled on first use and
/// reused afterwards so repeated evaluations see identical stacks.
struct PairInputs {
    bool filled = false;
    std::array<std::array<FrameStack, 2>, kLevelCount> stacks;
};

/// Records the full siamese multi-level loss of one pair on `graph`:
/// sum over levels and both branches of the similarity terms plus lambda
/// times the smoothness term. Refined inputs for levels 2 and 3 are built
/// from the current predictions and treated as constants.
LossBreakdown record_pair_loss(Graph& graph, PredictorModel& model, const TrainingItem& item, const PairSample& sample,
                               const TrainConfig& config, PairInputs& inputs, Var* total);

struct LossLogRow {
    int epoch = 0;
    int batch = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<LossLogRow> log;
    /// Mean total loss per epoch.
    std::vector<double> epoch_loss;
};

void write_loss_log_header(std::ostream& os);
void write_loss_log_row(std::ostream& os, const LossLogRow& row);

/// Epoch e: shuffle all unstable pairs (seeded by (seed, e)), keep
/// pairs_per_epoch of them, add round(stable_ratio * count) stable samples,
/// shuffle again and take one Adam step per batch on the batch-mean loss.
/// Weights are rounded to float32 after every step. Throws EmptyCorpus when
/// no item has at least two frames.
TrainResult train(const std::vector<TrainingItem>& items, PredictorModel& model, const TrainConfig& config,
                  std::ostream* log = nullptr);

/// Loads every training-split entry of a corpus.
std::vector<TrainingItem> load_training_items(const CorpusManifest& corpus, const TrainConfig& config);

}  // namespace vstab
