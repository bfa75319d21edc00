// Command-line front end: synth, stabilize, train, eval, estimate, trace.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vstab/error.hpp"
#include "vstab/frameio.hpp"
#include "vstab/metrics.hpp"
#include "vstab/motion.hpp"
#include "vstab/predictor.hpp"
#include "vstab/rng.hpp"
#include "vstab/stabilizer.hpp"
#include "vstab/synthesis.hpp"
#include "vstab/training.hpp"

namespace fs = std::filesystem;
using namespace vstab;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::vector<double> split_numbers(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw UsageError("bad number '" + item + "' in " + what);
        }
    }
    return out;
}

Resolution parse_resolution(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw UsageError("resolution must look like WxH, got '" + s + "'");
    try {
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw UsageError("resolution must look like WxH, got '" + s + "'");
    }
}

// small | medium | large | custom:THETA_DEG,DX,DY[,IMIN,IMAX]
IntensityProfile parse_profile(const std::string& s) {
    if (s.rfind("custom:", 0) != 0) {
        try {
            return IntensityProfile::named(s);
        } catch (const Error&) {
            throw UsageError("unknown profile '" + s + "'");
        }
    }
    const std::vector<double> v = split_numbers(s.substr(7), "profile");
    if (v.size() != 3 && v.size() != 5) throw UsageError("custom profile needs 3 or 5 numbers");
    IntensityProfile p;
    p.name = "custom";
    p.sigma_theta = radians(v[0]);
    p.sigma_dx = v[1];
    p.sigma_dy = v[2];
    if (v.size() == 5) {
        p.interval_min = static_cast<int>(v[3]);
        p.interval_max = static_cast<int>(v[4]);
    }
    return p;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    os << text;
}

struct SynthArgs {
    std::vector<std::string> stable;
    std::vector<std::string> profiles{"medium"};
    std::string out;
    double validation_fraction = 0.0;
};

int run_synth(const SynthArgs& a, std::uint64_t seed) {
    std::vector<fs::path> inputs(a.stable.begin(), a.stable.end());
    std::vector<IntensityProfile> profiles;
    for (const std::string& p : a.profiles) profiles.push_back(parse_profile(p));
    CorpusOptions opt;
    opt.validation_fraction = a.validation_fraction;
    const CorpusManifest m = synthesize_corpus(inputs, profiles, seed, a.out, opt);
    std::cout << "wrote " << m.entries.size() << " items to " << a.out << "\n";
    return 0;
}

struct StabilizeArgs {
    std::string input;
    std::string output;
    std::string mode = "online";
    std::string predictor = "classical";
    std::string checkpoint;
    std::string log;
    std::string merge_log;
};

int run_stabilize(const StabilizeArgs& a, std::uint64_t seed) {
    if (a.predictor == "model" && a.checkpoint.empty()) throw UsageError("--predictor model requires --checkpoint");
    const FrameSequence seq = load_sequence(a.input);
    std::unique_ptr<Predictor> predictor;
    if (a.predictor == "model") {
        predictor = std::make_unique<LearnedPredictor>(load_checkpoint(a.checkpoint));
    } else {
        predictor = std::make_unique<ClassicalPredictor>(seed);
    }
    const StabilizationResult r =
        a.mode == "chunked" ? stabilize_chunked(seq, *predictor, seed) : stabilize_online(seq, *predictor);
    save_sequence(r.frames, a.output);
    const fs::path log = a.log.empty() ? fs::path(a.output) / "transforms.csv" : fs::path(a.log);
    write_transform_log(r.log, log);
    if (!a.merge_log.empty()) write_transform_log(r.merges, a.merge_log);
    std::cout << "stabilized " << r.frames.size() << " frames into " << a.output << "\n";
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string corpus;
    std::string checkpoint;
    std::string loss_log;
    std::string init;
};

int run_train(const TrainArgs& a, std::uint64_t seed, bool seed_given) {
    TrainConfig config = read_train_config(a.config);
    if (seed_given) config.seed = seed;
    const std::vector<TrainingItem> items = load_training_items(read_corpus(a.corpus), config);
    PredictorModel model = a.init.empty() ? PredictorModel(config.spec, mix_seed(config.seed, 0x696e6974ULL))
                                          : load_checkpoint(a.init, config.spec);
    std::ofstream log;
    if (!a.loss_log.empty()) {
        log.open(a.loss_log);
        if (!log) throw Error(ErrorCode::IoFailure, "cannot write " + a.loss_log);
    }
    const TrainResult r = train(items, model, config, a.loss_log.empty() ? nullptr : &log);
    save_checkpoint(model, a.checkpoint);
    std::cout << "trained " << config.epochs << " epochs";
    if (!r.epoch_loss.empty()) std::cout << ", final epoch loss " << fmt(r.epoch_loss.back());
    std::cout << "\n";
    return 0;
}

struct EvalArgs {
    std::string input;
    std::string metric = "both";
    bool include_dc = false;
    bool masked = false;
    std::string output;
};

int run_eval(const EvalArgs& a, std::uint64_t seed) {
    const FrameSequence seq = load_sequence(a.input);
    std::ostringstream os;
    if (a.metric == "fidelity" || a.metric == "both") {
        const FidelityReport f = fidelity(seq, a.masked);
        os << "pair_index,psnr_db\n";
        for (std::size_t i = 0; i < f.psnr_db.size(); ++i) os << i << "," << fmt(f.psnr_db[i]) << "\n";
        os << "mean," << fmt(f.mean_db) << "\n";
        os << "infinite_count," << f.infinite_count << "\n";
    }
    if (a.metric == "stability" || a.metric == "both") {
        StabilityOptions opt;
        opt.include_dc = a.include_dc;
        const StabilityReport s = stability(seq, opt, seed);
        os << "component,ratio\n";
        os << "rotation," << fmt(s.ratios[0]) << "\n";
        os << "dx," << fmt(s.ratios[1]) << "\n";
        os << "dy," << fmt(s.ratios[2]) << "\n";
        os << "score," << fmt(s.score) << "\n";
    }
    write_text(a.output, os.str());
    return 0;
}

struct EstimateArgs {
    std::string prev;
    std::string next;
    std::string output;
};

int run_estimate(const EstimateArgs& a, std::uint64_t seed) {
    const Frame prev = read_pnm(a.prev);
    const Frame next = read_pnm(a.next);
    MotionOptions opt;
    opt.ransac.seed = seed;
    const RigidEstimate e = estimate_transform(prev, next, opt);
    std::ostringstream os;
    os << "theta_deg,dx,dy,inliers,tracked,mean_residual\n";
    os << fmt(degrees(e.params.theta)) << "," << fmt(e.params.dx) << "," << fmt(e.params.dy) << "," << e.inliers << ","
       << e.tracked << "," << fmt(e.mean_residual) << "\n";
    write_text(a.output, os.str());
    return 0;
}

struct TraceArgs {
    std::string input;
    std::string output;
    std::string resolution;
    int frames = 0;
    std::string profile = "medium";
};

int run_trace_inspect(const TraceArgs& a) {
    const JitterTrace t = read_trace(a.input);
    double max_abs[3] = {0, 0, 0};
    for (const AffineParams& p : t.params) {
        max_abs[0] = std::max(max_abs[0], std::abs(degrees(p.theta)));
        max_abs[1] = std::max(max_abs[1], std::abs(p.dx));
        max_abs[2] = std::max(max_abs[2], std::abs(p.dy));
    }
    std::cout << "frames," << t.size() << "\n"
              << "profile," << t.profile.name << "\n"
              << "seed," << t.seed << "\n"
              << "resolution," << t.resolution.width << "x" << t.resolution.height << "\n"
              << "center," << fmt(t.center.rx) << "," << fmt(t.center.ry) << "\n"
              << "max_abs_theta_deg," << fmt(max_abs[0]) << "\n"
              << "max_abs_dx," << fmt(max_abs[1]) << "\n"
              << "max_abs_dy," << fmt(max_abs[2]) << "\n";
    return 0;
}

int run_trace_convert(const TraceArgs& a) {
    JitterTrace t = read_trace(a.input);
    if (!a.resolution.empty()) {
        const Resolution to = parse_resolution(a.resolution);
        for (std::size_t i = 0; i < t.size(); ++i) t.params[i] = t.params_at(i, to);
        t.center = t.center_at(to);
        t.resolution = to;
    }
    write_trace(t, a.output);
    return 0;
}

int run_trace_generate(const TraceArgs& a, std::uint64_t seed) {
    if (a.frames < 1) throw UsageError("--frames must be at least 1");
    const Resolution res = a.resolution.empty() ? Resolution{1280, 720} : parse_resolution(a.resolution);
    write_trace(generate_trace(a.frames, parse_profile(a.profile), seed, res), a.output);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video stabilization toolkit: jitter synthesis, online/chunked stabilization, training, metrics"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Synthesize a jittered corpus from stable sequences");
    c_synth->add_option("--stable", synth.stable, "Stable sequence directories or manifests")->required();
    c_synth->add_option("--profile", synth.profiles, "small | medium | large | custom:DEG,DX,DY[,IMIN,IMAX]")
        ->capture_default_str();
    c_synth->add_option("--out", synth.out, "Corpus output directory")->required();
    c_synth->add_option("--validation-fraction", synth.validation_fraction, "Share of items held out")
        ->check(CLI::Range(0.0, 1.0));

    StabilizeArgs stab;
    auto* c_stab = app.add_subcommand("stabilize", "Stabilize a frame sequence");
    c_stab->add_option("--input", stab.input, "Input sequence directory or manifest")->required();
    c_stab->add_option("--output", stab.output, "Output sequence directory")->required();
    c_stab->add_option("--mode", stab.mode)->check(CLI::IsMember({"online", "chunked"}))->capture_default_str();
    c_stab->add_option("--predictor", stab.predictor)
        ->check(CLI::IsMember({"classical", "model"}))
        ->capture_default_str();
    c_stab->add_option("--checkpoint", stab.checkpoint, "Model checkpoint for --predictor model");
    c_stab->add_option("--log", stab.log, "Transform log path (default <output>/transforms.csv)");
    c_stab->add_option("--merge-log", stab.merge_log, "Chunk merge transforms (chunked mode)");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the multi-scale predictor on a corpus");
    c_train->add_option("--config", tr.config, "key=value training config")->required();
    c_train->add_option("--corpus", tr.corpus, "Corpus directory")->required();
    c_train->add_option("--checkpoint", tr.checkpoint, "Output checkpoint")->required();
    c_train->add_option("--loss-log", tr.loss_log, "Loss log CSV");
    c_train->add_option("--init", tr.init, "Start from this checkpoint");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Fidelity and stability metrics of a sequence");
    c_eval->add_option("--input", ev.input, "Sequence directory or manifest")->required();
    c_eval->add_option("--metric", ev.metric)
        ->check(CLI::IsMember({"fidelity", "stability", "both"}))
        ->capture_default_str();
    c_eval->add_flag("--include-dc", ev.include_dc, "Count the DC bin in the stability denominator");
    c_eval->add_flag("--masked", ev.masked, "PSNR over jointly valid pixels only");
    c_eval->add_option("--output", ev.output, "CSV report path (default stdout)");

    EstimateArgs est;
    auto* c_est = app.add_subcommand("estimate", "Rigid transform between two frames");
    c_est->add_option("prev", est.prev, "Previous frame (PGM/PPM)")->required();
    c_est->add_option("next", est.next, "Next frame (PGM/PPM)")->required();
    c_est->add_option("--output", est.output, "CSV path (default stdout)");

    TraceArgs ta;
    auto* c_trace = app.add_subcommand("trace", "Inspect, convert or generate jitter traces");
    c_trace->require_subcommand(1);
    auto* c_inspect = c_trace->add_subcommand("inspect", "Summarize a trace file");
    c_inspect->add_option("input", ta.input)->required();
    auto* c_convert = c_trace->add_subcommand("convert", "Re-express a trace at another resolution");
    c_convert->add_option("input", ta.input)->required();
    c_convert->add_option("output", ta.output)->required();
    c_convert->add_option("--resolution", ta.resolution, "Target WxH");
    auto* c_generate = c_trace->add_subcommand("generate", "Write a fresh trace");
    c_generate->add_option("output", ta.output)->required();
    c_generate->add_option("--frames", ta.frames)->required();
    c_generate->add_option("--profile", ta.profile)->capture_default_str();
    c_generate->add_option("--resolution", ta.resolution, "WxH (default 1280x720)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (c_synth->parsed()) return run_synth(synth, seed);
        if (c_stab->parsed()) return run_stabilize(stab, seed);
        if (c_train->parsed()) return run_train(tr, seed, seed_opt->count() > 0);
        if (c_eval->parsed()) return run_eval(ev, seed);
        if (c_est->parsed()) return run_estimate(est, seed);
        if (c_inspect->parsed()) return run_trace_inspect(ta);
        if (c_convert->parsed()) return run_trace_convert(ta);
        if (c_generate->parsed()) return run_trace_generate(ta, seed);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsageError;
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsageError;
}
