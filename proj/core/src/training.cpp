#include "vstab/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "vstab/error.hpp"
#include "vstab/frameio.hpp"
#include "vstab/rng.hpp"

namespace vstab {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "config: " + key + " is not a number: '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "config: " + key + " is not an integer: '" + v + "'");
    }
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(v[i - 1], v[j]);
    }
}

Var sum_all(Graph& g, const std::vector<Var>& terms) {
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
    return acc;
}

}  // namespace

void TrainConfig::check() const {
    if (!(learning_rate > 0.0) || !(decay > 0.0) || decay_every < 1 || batch_size < 1 || epochs < 0 ||
        pairs_per_epoch < 0 || !(lambda >= 0.0) || !(alpha >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "train config: rates, sizes and weights must be positive");
    }
    if (!(stable_ratio >= 0.0 && stable_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "train config: stable_ratio must lie in [0, 1]");
    }
    spec.validate();
}

TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "config: expected key=value: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "learning_rate") {
            c.learning_rate = to_double(key, val);
        } else if (key == "decay") {
            c.decay = to_double(key, val);
        } else if (key == "decay_every") {
            c.decay_every = static_cast<int>(to_int(key, val));
        } else if (key == "batch_size") {
            c.batch_size = static_cast<int>(to_int(key, val));
        } else if (key == "stable_ratio") {
            c.stable_ratio = to_double(key, val);
        } else if (key == "lambda") {
            c.lambda = to_double(key, val);
        } else if (key == "alpha") {
            c.alpha = to_double(key, val);
        } else if (key == "seed") {
            c.seed = static_cast<std::uint64_t>(to_int(key, val));
        } else if (key == "epochs") {
            c.epochs = static_cast<int>(to_int(key, val));
        } else if (key == "pairs_per_epoch") {
            c.pairs_per_epoch = static_cast<int>(to_int(key, val));
        } else if (key == "smoothness_transform") {
            if (val == "flow") {
                c.smoothness_transform = SmoothnessTransform::Flow;
            } else if (val == "identity") {
                c.smoothness_transform = SmoothnessTransform::Identity;
            } else {
                throw Error(ErrorCode::InvalidArgument, "config: smoothness_transform must be flow or identity");
            }
        } else if (key == "spec") {
            if (val == "toy") {
                c.spec = ConvSpec::toy();
            } else {
                std::filesystem::path p(val);
                if (p.is_relative()) p = base_dir / p;
                std::ifstream f(p);
                if (!f) throw Error(ErrorCode::IoFailure, "config: cannot read spec file " + p.string());
                std::ostringstream ss;
                ss << f.rdbuf();
                c.spec = ConvSpec::parse(ss.str());
            }
        } else {
            throw Error(ErrorCode::InvalidArgument, "config: unknown key '" + key + "'");
        }
    }
    c.check();
    return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::IoFailure, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_train_config(ss.str(), path.parent_path());
}

double learning_rate_at(const TrainConfig& config, int epoch) {
    return config.learning_rate * std::pow(config.decay, epoch / config.decay_every);
}

void adam_step(std::vector<Tensor>& weights, OptimizerState& state, double lr) {
    if (state.m.empty()) {
        for (const Tensor& t : weights) {
            state.m.emplace_back(t.size(), 0.0);
            state.v.emplace_back(t.size(), 0.0);
        }
    }
    if (state.m.size() != weights.size()) {
        throw Error(ErrorCode::ShapeMismatch, "adam_step: optimizer state does not match the weights");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].grad.size() != weights[i].size() || state.m[i].size() != weights[i].size()) {
            throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient shape does not match tensor " + std::to_string(i));
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        Tensor& t = weights[i];
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double g = t.grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            t.data[j] -= lr * mh / (std::sqrt(vh) + state.epsilon);
        }
    }
}

Var image_node(Graph& graph, const Frame& frame) {
    const Frame gray = to_grayscale(frame);
    Tensor t({gray.height, gray.width});
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) t.data[i] = gray.pixels[i] / 255.0;
    return graph.constant(std::move(t), gray.valid);
}

SimilarityTerms similarity_terms(Graph& graph, Var pred, const AffineParams& truth, Var unstable, Var stable,
                                 const RotationCenter& center, double alpha) {
    const Var target = graph.constant(Tensor({3}, {truth.theta, truth.dx, truth.dy}));
    SimilarityTerms s;
    s.param = graph.mse(pred, target);
    const Var warped = graph.warp(unstable, graph.scale(pred, 1.0 / kParamScale), center);
    s.image = graph.scale(graph.mse(warped, stable), alpha);
    return s;
}

Var smoothness_term(Graph& graph, Var pred_i, Var pred_i1, Var u_i, Var u_i1, const AffineMatrix& t,
                    const RotationCenter& center) {
    const Var a = graph.warp_fixed(graph.warp(u_i, graph.scale(pred_i, 1.0 / kParamScale), center), t);
    const Var b = graph.warp(u_i1, graph.scale(pred_i1, 1.0 / kParamScale), center);
    return graph.masked_mse(a, b);
}

LossBreakdown similarity_loss(const AffineParams& pred, const AffineParams& truth, const Frame& unstable,
                              const Frame& stable, double alpha) {
    if (unstable.width != stable.width || unstable.height != stable.height) {
        throw Error(ErrorCode::DimensionMismatch, "similarity_loss: frames differ in size");
    }
    Graph g;
    const Var p = g.constant(Tensor({3}, {pred.theta, pred.dx, pred.dy}));
    const SimilarityTerms s = similarity_terms(g, p, truth, image_node(g, unstable), image_node(g, stable),
                                               frame_center(unstable.width, unstable.height), alpha);
    LossBreakdown b;
    b.alpha = alpha;
    b.similarity_param = g.scalar(s.param);
    b.similarity_image = g.scalar(s.image);
    b.total = b.similarity_param + b.similarity_image;
    return b;
}

double smoothness_loss(const AffineParams& pred_i, const AffineParams& pred_i1, const Frame& u_i, const Frame& u_i1,
                       const RigidEstimate& t) {
    if (u_i.width != u_i1.width || u_i.height != u_i1.height) {
        throw Error(ErrorCode::DimensionMismatch, "smoothness_loss: frames differ in size");
    }
    Graph g;
    const RotationCenter c = frame_center(u_i.width, u_i.height);
    const Var a = g.constant(Tensor({3}, {pred_i.theta, pred_i.dx, pred_i.dy}));
    const Var b = g.constant(Tensor({3}, {pred_i1.theta, pred_i1.dx, pred_i1.dy}));
    return g.scalar(smoothness_term(g, a, b, image_node(g, u_i), image_node(g, u_i1), params_to_matrix(t.params, c), c));
}

TrainingItem prepare_training_item(CorpusItem item, SmoothnessTransform mode, std::uint64_t seed) {
    TrainingItem t;
    t.item = std::move(item);
    const std::size_t n = t.item.unstable.size();
    for (int l = 1; l <= kLevelCount; ++l) {
        auto& st = t.stable_levels[static_cast<std::size_t>(l - 1)];
        auto& un = t.unstable_levels[static_cast<std::size_t>(l - 1)];
        for (std::size_t i = 0; i < n; ++i) {
            st.push_back(level_frame(t.item.stable[i], l));
            un.push_back(level_frame(t.item.unstable[i], l));
        }
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        AffineParams p;
        bool fallback = false;
        if (mode == SmoothnessTransform::Flow) {
            MotionOptions opt;
            opt.ransac.seed = mix_seed(seed, i);
            try {
                p = estimate_transform(t.item.stable[i], t.item.stable[i + 1], opt).params;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateFlow) throw;
                fallback = true;
            }
        }
        t.motion.push_back(p);
        t.motion_fallback.push_back(fallback);
    }
    return t;
}

LossBreakdown record_pair_loss(Graph& graph, PredictorModel& model, const TrainingItem& item, const PairSample& sample,
                               const TrainConfig& config, PairInputs& inputs, Var* total) {
    const int n = static_cast<int>(item.size());
    if (sample.frame < 1 || sample.frame + 1 > n) {
        throw Error(ErrorCode::IndexOutOfRange, "pair starting at frame " + std::to_string(sample.frame) +
                                                    " does not fit a " + std::to_string(n) + "-frame item");
    }
    const Frame& first = item.item.unstable[0];
    const Resolution full{first.width, first.height};
    const RotationCenter full_center = frame_center(full);

    std::vector<Var> params, images, smooths;
    std::array<Var, 2> prev_total{};
    std::array<AffineMatrix, 2> full_total{};
    for (int level = 1; level <= kLevelCount; ++level) {
        const auto li = static_cast<std::size_t>(level - 1);
        const LevelSpec& ls = level_spec(level);
        const Resolution res = level_resolution(level);
        const RotationCenter center = frame_center(res);
        std::array<Var, 2> norm{};
        std::array<Var, 2> u{};
        for (int k = 0; k < 2; ++k) {
            const auto fi = static_cast<std::size_t>(sample.frame - 1 + k);
            const Frame& u_level = sample.stable ? item.stable_levels[li][fi] : item.unstable_levels[li][fi];
            FrameStack& stack = inputs.stacks[li][static_cast<std::size_t>(k)];
            if (!inputs.filled) {
                stack = FrameStack{level, ls.interval, ls.size, {}};
                for (int idx : sample_indices(static_cast<int>(fi) + 1, ls.interval)) {
                    stack.frames.push_back(item.stable_levels[li][static_cast<std::size_t>(idx - 1)]);
                }
                if (level == 1) {
                    stack.frames.push_back(u_level);
                } else {
                    const Frame& src = sample.stable ? item.item.stable[fi] : item.item.unstable[fi];
                    stack.frames.push_back(level_frame(warp(src, full_total[static_cast<std::size_t>(k)]), level));
                }
            }
            const Var pred = forward_level(graph, model, stack);
            const Var delta = graph.scale(pred, 1.0 / kParamScale);
            Var t = delta;
            if (level > 1) {
                const double s = static_cast<double>(ls.size) / level_spec(level - 1).size;
                t = graph.compose_params(graph.mul_const(prev_total[static_cast<std::size_t>(k)], {1.0, s, s}), delta);
            }
            prev_total[static_cast<std::size_t>(k)] = t;
            norm[static_cast<std::size_t>(k)] = graph.scale(t, kParamScale);

            const Tensor& tv = graph.value(t);
            full_total[static_cast<std::size_t>(k)] =
                params_to_matrix(rescale_params({tv.data[0], tv.data[1], tv.data[2]}, res, full), full_center);

            const AffineParams truth =
                sample.stable ? AffineParams{} : training_target(item.item.trace, fi, full, level);
            u[static_cast<std::size_t>(k)] = image_node(graph, u_level);
            const Var s_img = image_node(graph, item.stable_levels[li][fi]);
            const SimilarityTerms sim =
                similarity_terms(graph, norm[static_cast<std::size_t>(k)], truth, u[static_cast<std::size_t>(k)], s_img,
                                 center, config.alpha);
            params.push_back(sim.param);
            images.push_back(sim.image);
        }
        const AffineParams motion =
            rescale_params(item.motion[static_cast<std::size_t>(sample.frame - 1)], full, res);
        smooths.push_back(
            smoothness_term(graph, norm[0], norm[1], u[0], u[1], params_to_matrix(motion, center), center));
    }
    inputs.filled = true;

    const Var p = sum_all(graph, params);
    const Var im = sum_all(graph, images);
    const Var sm = sum_all(graph, smooths);
    const Var tot = graph.add(graph.add(p, im), graph.scale(sm, config.lambda));
    if (total != nullptr) *total = tot;

    LossBreakdown b;
    b.lambda = config.lambda;
    b.alpha = config.alpha;
    b.similarity_param = graph.scalar(p);
    b.similarity_image = graph.scalar(im);
    b.smoothness = graph.scalar(sm);
    b.total = graph.scalar(tot);
    return b;
}

void write_loss_log_header(std::ostream& os) { os << "epoch,batch,sim_param,sim_img,smooth,total,lr\n"; }

void write_loss_log_row(std::ostream& os, const LossLogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.batch, r.loss.similarity_param,
                  r.loss.similarity_image, r.loss.smoothness, r.loss.total, r.lr);
    os << buf;
}

TrainResult train(const std::vector<TrainingItem>& items, PredictorModel& model, const TrainConfig& config,
                  std::ostream* log) {
    config.check();
    std::vector<PairSample> pairs;
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (int f = 1; f + 1 <= static_cast<int>(items[i].size()); ++f) pairs.push_back({i, f, false});
    }
    if (pairs.empty()) throw Error(ErrorCode::EmptyCorpus, "training corpus has no consecutive frame pairs");

    if (log != nullptr) write_loss_log_header(*log);
    TrainResult result;
    OptimizerState state;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<PairSample> order = pairs;
        shuffle(order, rng);
        if (config.pairs_per_epoch > 0 && static_cast<std::size_t>(config.pairs_per_epoch) < order.size()) {
            order.resize(static_cast<std::size_t>(config.pairs_per_epoch));
        }
        const auto n_stable = static_cast<std::size_t>(std::llround(config.stable_ratio * static_cast<double>(order.size())));
        for (std::size_t j = 0; j < n_stable; ++j) {
            PairSample s = pairs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pairs.size() - 1)))];
            s.stable = true;
            order.push_back(s);
        }
        shuffle(order, rng);

        const double lr = learning_rate_at(config, epoch);
        double epoch_total = 0.0;
        int batch = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size), ++batch) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double inv = 1.0 / static_cast<double>(end - start);
            model.zero_grad();
            LossBreakdown mean;
            mean.lambda = config.lambda;
            mean.alpha = config.alpha;
            for (std::size_t s = start; s < end; ++s) {
                Graph g;
                PairInputs in;
                Var total;
                const LossBreakdown b = record_pair_loss(g, model, items[order[s].item], order[s], config, in, &total);
                g.backward(g.scale(total, inv));
                mean.similarity_param += b.similarity_param * inv;
                mean.similarity_image += b.similarity_image * inv;
                mean.smoothness += b.smoothness * inv;
                mean.total += b.total * inv;
                epoch_total += b.total;
            }
            adam_step(model.tensors(), state, lr);
            model.quantize();
            const LossLogRow row{epoch, batch, mean, lr};
            if (log != nullptr) write_loss_log_row(*log, row);
            result.log.push_back(row);
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
    }
    return result;
}

std::vector<TrainingItem> load_training_items(const CorpusManifest& corpus, const TrainConfig& config) {
    std::vector<TrainingItem> items;
    for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
        const CorpusEntry& e = corpus.entries[i];
        if (e.split != Split::Train) continue;
        items.push_back(prepare_training_item(load_corpus_item(corpus, e), config.smoothness_transform,
                                              mix_seed(config.seed, 1000 + i)));
    }
    if (items.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no training items");
    return items;
}

}  // namespace vstab
