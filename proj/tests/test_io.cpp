#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gensart/experiment.hpp"

using namespace gensart;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gensart-test-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_file(const fs::path& p, const std::string& text) {
  io::write_text(p.string(), text);
  return p.string();
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const char* exe = std::getenv("GENSART_CLI");
  if (!exe) return {};
  const std::string out = (dir / "stdout.txt").string(), err = (dir / "stderr.txt").string();
  int rc = std::system((std::string(exe) + " " + args + " > " + out + " 2> " + err).c_str());
  CliResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = io::read_text(out);
  r.err = io::read_text(err);
  return r;
}

std::string small_config(const fs::path& out_dir, const std::string& extra_plan = "", int n_angles = 24,
                         const std::string& fidelity = "l2") {
  return "[geometry]\nn = 48\nn_angles = " + std::to_string(n_angles) +
         "\n\n[phantom]\ncount = 4\nseed = 2\n\n[noise]\ngaussian_rel = 0.01\nseed = 5\n\n[fidelity]\nkind = " +
         fidelity + "\n\n[penalty]\nalpha = 5\n\n[plan]\n" + extra_plan + "\n[output]\ndir = " + out_dir.string() + "\n";
}

}  // namespace

TEST(Raw, RoundTripIsBitIdentical) {
  auto dir = scratch("raw");
  io::RawArray a;
  a.shape = {3, 4, 5};
  a.spacing = 0.25;
  a.kind = "volume";
  std::mt19937_64 rng(1);
  std::normal_distribution<float> N(0, 1);
  for (int i = 0; i < 60; ++i) a.values.push_back(N(rng));
  a.meta["note"] = "x";
  const std::string p = (dir / "a.raw").string();
  io::write_raw(p, a);
  io::RawArray b = io::read_raw(p);
  EXPECT_EQ(b.values, a.values);
  EXPECT_EQ(b.shape, a.shape);
  EXPECT_EQ(b.spacing, 0.25);
  EXPECT_EQ(b.kind, "volume");
  EXPECT_EQ(b.meta["note"], "x");
  const std::string bytes = io::read_text(p);
  io::write_raw(p, b);
  EXPECT_EQ(io::read_text(p), bytes);
  EXPECT_EQ(bytes.size(), 240u);
}

TEST(Raw, DetectsCorruption) {
  auto dir = scratch("corrupt");
  io::RawArray a{{2, 2}, 1.0, "phantom", {1, 2, 3, 4}};
  const std::string p = (dir / "a.raw").string();
  io::write_raw(p, a);
  std::string bytes = io::read_text(p);
  bytes[5] ^= 0x10;
  io::write_text(p, bytes);
  EXPECT_THROW(io::read_raw(p), ConfigError);
  io::write_text(p, bytes.substr(0, 12));
  EXPECT_THROW(io::read_raw(p), ConfigError);
  EXPECT_THROW(io::read_raw((dir / "missing.raw").string()), ConfigError);
}

TEST(Pgm, HeaderPixelsAndSidecar) {
  auto dir = scratch("pgm");
  const std::string p = (dir / "s.pgm").string();
  io::write_pgm(p, 3, 2, Vec{0, 1, 2, 3, 4, 10}, 0.0, 4.0);
  const std::string bytes = io::read_text(p);
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.substr(0, head.size()), head);
  const std::string px = bytes.substr(head.size());
  ASSERT_EQ(px.size(), 6u);
  EXPECT_EQ(static_cast<unsigned char>(px[0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(px[2]), 128);
  EXPECT_EQ(static_cast<unsigned char>(px[5]), 255);  // clipped
  auto side = io::json::parse(io::read_text(p + ".json"));
  EXPECT_EQ(side["window_min"], 0.0);
  EXPECT_EQ(side["window_max"], 4.0);
}

TEST(Compare, Examples) {
  Vec truth = {0.0, 1.0, 2.0, 3.0, 4.0};
  std::vector<std::uint8_t> mask;
  auto same = io::compare(truth, truth, mask);
  EXPECT_TRUE(std::isinf(same.psnr));
  EXPECT_EQ(same.rel_l2, 0.0);
  EXPECT_NEAR(same.correlation, 1.0, 1e-15);
  EXPECT_EQ(io::format_number(same.psnr), "inf");
  auto zero = io::compare(Vec(5, 0.0), truth, mask);
  EXPECT_NEAR(zero.rel_l2, 1.0, 1e-15);
  // only masked entries count
  auto masked = io::compare(Vec{9, 1, 2, 3, 9}, truth, {0, 1, 1, 1, 0});
  EXPECT_TRUE(std::isinf(masked.psnr));
  EXPECT_THROW(io::compare(Vec(4, 0.0), truth, mask), ConfigError);
}

TEST(Compare, NoisePsnrMatchesAnalytic) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0, 1);
  std::normal_distribution<double> N(0, 0.05);
  Vec truth(20000), a(20000);
  for (size_t i = 0; i < truth.size(); ++i) {
    truth[i] = U(rng);
    a[i] = truth[i] + N(rng);
  }
  double lo = *std::min_element(truth.begin(), truth.end()), hi = *std::max_element(truth.begin(), truth.end());
  EXPECT_NEAR(io::compare(a, truth, {}).psnr, 20 * std::log10((hi - lo) / 0.05), 0.5);
}

TEST(Config, SchemaIsEnforced) {
  auto dir = scratch("config");
  auto unknown = write_file(dir / "u.ini", "[geometry]\nn = 8\nn_angles = 4\ncolour = red\n");
  try {
    load_experiment(unknown);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("geometry.colour"), std::string::npos);
  }
  auto missing = write_file(dir / "m.ini", "[geometry]\nn = 8\n");
  try {
    load_experiment(missing);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("geometry.n_angles"), std::string::npos);
  }
  auto bad = write_file(dir / "b.ini", "[geometry]\nn = eight\nn_angles = 4\n");
  EXPECT_THROW(load_experiment(bad), ConfigError);
}

TEST(Config, CrossChecks) {
  auto dir = scratch("cross");
  auto lq_fan = write_file(dir / "a.ini", "[geometry]\nmode = fan\nn = 16\nn_angles = 4\n[penalty]\nfamily = lq\nq = 1.5\n");
  EXPECT_THROW(load_experiment(lq_fan), ConfigError);
  auto bright = write_file(dir / "b.ini", "[geometry]\nn = 16\nn_angles = 4\n[fidelity]\nkind = poisson_bright\n");
  EXPECT_THROW(load_experiment(bright), ConfigError);
  auto fbp_fan = write_file(dir / "c.ini", "[geometry]\nmode = fan\nn = 16\nn_angles = 4\n[plan]\npipeline = fbp\n");
  EXPECT_THROW(load_experiment(fbp_fan), ConfigError);
  auto ok = write_file(dir / "d.ini", "[geometry]\nn = 16\nn_angles = 4\n");
  Experiment e = load_experiment(ok);
  EXPECT_EQ(e.views.size(), 4u);
  EXPECT_EQ(e.sinogram_shape(), (std::vector<int>{4, e.views[0].n_u}));
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& entry : fs::directory_iterator(GENSART_SOURCE_DIR "/configs"))
    if (entry.path().extension() == ".ini") {
      EXPECT_NO_THROW(load_experiment(entry.path().string())) << entry.path();
    }
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!std::getenv("GENSART_CLI")) GTEST_SKIP() << "GENSART_CLI not set";
  }
};

TEST_F(Cli, MissingKeyExitsWithTwo) {
  auto dir = scratch("cli-missing");
  auto cfg = write_file(dir / "c.ini", "[geometry]\nn = 32\n");
  auto r = cli("simulate " + cfg, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("geometry.n_angles"), std::string::npos) << r.err;
}

TEST_F(Cli, SimulateIsDeterministic) {
  auto dir = scratch("cli-det");
  auto cfg = write_file(dir / "c.ini", small_config(dir / "out"));
  ASSERT_EQ(cli("simulate " + cfg, dir).code, 0);
  const auto phantom = io::read_text((dir / "out/phantom.raw").string());
  const auto sino = io::read_text((dir / "out/sino.raw").string());
  ASSERT_EQ(cli("simulate " + cfg, dir).code, 0);
  EXPECT_EQ(io::read_text((dir / "out/phantom.raw").string()), phantom);
  EXPECT_EQ(io::read_text((dir / "out/sino.raw").string()), sino);
  EXPECT_TRUE(fs::exists(dir / "out/meta.json"));
}

TEST_F(Cli, MismatchedSinogramExitsWithTwo) {
  auto dir = scratch("cli-mismatch");
  auto sim = write_file(dir / "a.ini", small_config(dir / "a", "", 24));
  auto rec = write_file(dir / "b.ini", small_config(dir / "b", "", 30));
  ASSERT_EQ(cli("simulate " + sim, dir).code, 0);
  auto r = cli("reconstruct " + rec + " " + (dir / "a/sino.raw").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, ZeroIterationsReturnInitialGuess) {
  auto dir = scratch("cli-zero");
  auto cfg = write_file(dir / "a.ini", small_config(dir / "a"));
  ASSERT_EQ(cli("simulate " + cfg, dir).code, 0);
  const std::string init = (dir / "a/phantom.raw").string();
  auto rec = write_file(dir / "b.ini", small_config(dir / "b", "k_stop = 0\ninit = " + init + "\n"));
  ASSERT_EQ(cli("reconstruct " + rec + " " + (dir / "a/sino.raw").string(), dir).code, 0);
  EXPECT_EQ(io::read_raw((dir / "b/volume.raw").string()).values, io::read_raw(init).values);
  auto c = cli("compare " + (dir / "b/volume.raw").string() + " --truth " + init, dir);
  EXPECT_EQ(c.code, 0);
  EXPECT_NE(c.out.find("inf"), std::string::npos) << c.out;
}

TEST_F(Cli, MetricsHaveOneRowPerStep) {
  auto dir = scratch("cli-metrics");
  auto cfg = write_file(dir / "a.ini", small_config(dir / "a", "k_stop = 7\n", 24, "huber"));
  ASSERT_EQ(cli("simulate " + cfg, dir).code, 0);
  ASSERT_EQ(cli("reconstruct " + cfg + " " + (dir / "a/sino.raw").string(), dir).code, 0);
  std::istringstream is(io::read_text((dir / "a/metrics.csv").string()));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iter,view,residual,objective,update_norm");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 7);
}

TEST_F(Cli, FbpWritesVolumeAndSlice) {
  auto dir = scratch("cli-fbp");
  auto cfg = write_file(dir / "a.ini", small_config(dir / "a", "pipeline = fbp\n", 60));
  ASSERT_EQ(cli("simulate " + cfg, dir).code, 0);
  ASSERT_EQ(cli("reconstruct " + cfg + " " + (dir / "a/sino.raw").string(), dir).code, 0);
  EXPECT_EQ(io::read_raw((dir / "a/volume.raw").string()).shape, (std::vector<int>{48, 48}));
  EXPECT_TRUE(fs::exists(dir / "a/slice.pgm"));
  EXPECT_TRUE(fs::exists(dir / "a/slice.pgm.json"));
}

TEST_F(Cli, OracleSmoke) {
  auto dir = scratch("cli-oracle");
  auto r = cli("oracle --prox-cases 20 --systems 3", dir);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
}
