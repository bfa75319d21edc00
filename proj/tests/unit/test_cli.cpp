#include <cstdlib>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "textures.hpp"
#include "vstab/frameio.hpp"
#include "vstab/stabilizer.hpp"
#include "vstab/synthesis.hpp"

#ifndef VSTAB_CLI_PATH
#error "VSTAB_CLI_PATH must point at the vstab executable"
#endif

using namespace vstab;
using vstab::testing::read_file;
using vstab::testing::smooth_texture;
using vstab::testing::TempDir;
using vstab::testing::write_file;

namespace {

/// Runs the CLI with `args`, stdout and stderr captured to files in `dir`.
int run_cli(const TempDir& dir, const std::string& args) {
    const std::string cmd = std::string("\"") + VSTAB_CLI_PATH + "\" " + args + " > \"" + (dir / "stdout").string() +
                            "\" 2> \"" + (dir / "stderr").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

void write_sequence(const std::filesystem::path& dir, int frames, int w, int h, bool still = false) {
    FrameSequence seq;
    for (int i = 0; i < frames; ++i) seq.frames.push_back(smooth_texture(w, h, still ? 1 : 1 + i, 1, 6, 12.0));
    save_sequence(seq, dir);
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
    TempDir dir;
    EXPECT_EQ(run_cli(dir, ""), 1);
    EXPECT_EQ(run_cli(dir, "frobnicate"), 1);
    EXPECT_EQ(run_cli(dir, "stabilize --input x"), 1);
    EXPECT_EQ(run_cli(dir, "stabilize --input x --output y --mode sideways"), 1);
    EXPECT_EQ(run_cli(dir, "stabilize --input x --output y --predictor model"), 1);
    EXPECT_NE(read_file(dir / "stderr").find("--checkpoint"), std::string::npos);
    EXPECT_EQ(run_cli(dir, "trace generate " + q(dir / "t.csv") + " --frames 5 --profile wobbly"), 1);
    EXPECT_EQ(run_cli(dir, "trace generate " + q(dir / "t.csv") + " --frames 5 --resolution 12by7"), 1);
    EXPECT_EQ(run_cli(dir, "--help"), 0);
    EXPECT_NE(read_file(dir / "stdout").find("stabilize"), std::string::npos);
}

TEST(Cli, DataErrorsExitWithTwo) {
    TempDir dir;
    EXPECT_EQ(run_cli(dir, "eval --input " + q(dir / "nowhere")), 2);
    EXPECT_NE(read_file(dir / "stderr").find("error ["), std::string::npos);
    write_file(dir / "bad.pgm", "P5\n2 2\n255\n");
    EXPECT_EQ(run_cli(dir, "estimate " + q(dir / "bad.pgm") + " " + q(dir / "bad.pgm")), 2);
    write_sequence(dir / "short", 1, 32, 32);
    EXPECT_EQ(run_cli(dir, "eval --input " + q(dir / "short")), 2);
}

TEST(Cli, TraceGenerateInspectConvert) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "--seed 4 trace generate " + q(dir / "t.csv") + " --frames 30 --profile custom:0.5,3,2"),
              0);
    const JitterTrace t = read_trace(dir / "t.csv");
    EXPECT_EQ(t.size(), 30u);
    EXPECT_EQ(t.seed, 4u);
    EXPECT_EQ(t.resolution, (Resolution{1280, 720}));
    ASSERT_EQ(run_cli(dir, "trace inspect " + q(dir / "t.csv")), 0);
    const std::string out = read_file(dir / "stdout");
    EXPECT_NE(out.find("frames,30\n"), std::string::npos);
    EXPECT_NE(out.find("profile,custom\n"), std::string::npos);
    EXPECT_NE(out.find("resolution,1280x720\n"), std::string::npos);
    ASSERT_EQ(run_cli(dir, "trace convert " + q(dir / "t.csv") + " " + q(dir / "h.csv") + " --resolution 640x360"), 0);
    const JitterTrace h = read_trace(dir / "h.csv");
    EXPECT_EQ(h.resolution, (Resolution{640, 360}));
    EXPECT_NEAR(h.params[7].dx, t.params[7].dx / 2, 1e-9);
    EXPECT_NEAR(h.params[7].theta, t.params[7].theta, 1e-12);
}

TEST(Cli, EvalReportsInfiniteMarker) {
    TempDir dir;
    write_sequence(dir / "still", 20, 48, 48, true);
    ASSERT_EQ(run_cli(dir, "eval --metric fidelity --input " + q(dir / "still") + " --output " + q(dir / "r.csv")), 0);
    const std::string r = read_file(dir / "r.csv");
    EXPECT_EQ(r.substr(0, 18), "pair_index,psnr_db");
    EXPECT_NE(r.find("0,inf\n"), std::string::npos);
    EXPECT_NE(r.find("mean,inf\n"), std::string::npos);
    EXPECT_NE(r.find("infinite_count,19\n"), std::string::npos);
    ASSERT_EQ(run_cli(dir, "eval --input " + q(dir / "still")), 0);
    const std::string both = read_file(dir / "stdout");
    EXPECT_NE(both.find("component,ratio\n"), std::string::npos);
    EXPECT_NE(both.find("score,"), std::string::npos);
}

TEST(Cli, EstimateRecoversShift) {
    TempDir dir;
    const Frame scene = smooth_texture(200, 160, 2, 1, 6, 12.0);
    write_pnm(scene, dir / "a.pgm");
    write_pnm(warp(scene, AffineMatrix::translation(3, -2)), dir / "b.pgm");
    ASSERT_EQ(run_cli(dir, "estimate " + q(dir / "a.pgm") + " " + q(dir / "b.pgm")), 0);
    std::istringstream is(read_file(dir / "stdout"));
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    EXPECT_EQ(header, "theta_deg,dx,dy,inliers,tracked,mean_residual");
    double theta = 0, dx = 0, dy = 0;
    char c = 0;
    std::istringstream rs(row);
    rs >> theta >> c >> dx >> c >> dy;
    EXPECT_NEAR(theta, 0.0, 0.05);
    EXPECT_NEAR(dx, 3.0, 0.1);
    EXPECT_NEAR(dy, -2.0, 0.1);
}

TEST(Cli, SynthStabilizeChunked) {
    TempDir dir;
    write_sequence(dir / "stable", 40, 96, 64, true);
    ASSERT_EQ(run_cli(dir, "--seed 2 synth --stable " + q(dir / "stable") + " --profile small --out " + q(dir / "corpus")),
              0);
    const CorpusManifest m = read_corpus(dir / "corpus");
    ASSERT_EQ(m.entries.size(), 1u);
    const std::filesystem::path unstable = m.unstable_dir(m.entries[0]);
    ASSERT_EQ(run_cli(dir, "stabilize --mode chunked --input " + q(unstable) + " --output " + q(dir / "out") +
                               " --merge-log " + q(dir / "merges.csv")),
              0);
    const TransformLog log = read_transform_log(dir / "out" / "transforms.csv");
    EXPECT_EQ(log.size(), 40u);
    const TransformLog merges = read_transform_log(dir / "merges.csv");
    ASSERT_EQ(merges.size(), 1u);
    EXPECT_EQ(merges[0].frame, 32);
    // replaying the log reproduces the written pixels; PNM carries no mask
    const FrameSequence written = load_sequence(dir / "out");
    const FrameSequence replayed = apply_transform_log(load_sequence(unstable), log);
    ASSERT_EQ(written.size(), 40u);
    for (std::size_t i = 0; i < 40; ++i) EXPECT_TRUE(replayed[i].pixels == written[i].pixels) << i;
}
