// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdiff/checksum.hpp"
#include "cdiff/cli.hpp"
#include "cdiff/config.hpp"
#include "cdiff/image.hpp"
#include "cdiff/rng.hpp"

using namespace cdiff;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cdiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cdiff_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
  const Config c = parse_config_text("");
  EXPECT_EQ(c.seed, 2025u);
  EXPECT_EQ(c.train.seed, 2025u);
  EXPECT_EQ(c.vae.seed, 2025u);
  EXPECT_EQ(c.T, 1000);
  EXPECT_EQ(c.inference_steps, 50);
  EXPECT_EQ(c.train.iterations, 5000u);
  EXPECT_EQ(c.train.loss.beta, 1.0);
  EXPECT_EQ(parse_config("").to_text(), c.to_text());
}

TEST(Config, ValuesParseAndRoundTrip) {
  const Config c = parse_config_text("# comment\nloss.beta = 0\nrun.seed = 7  # trailing\n\ntrain.lr = 1e-3\n");
  EXPECT_EQ(c.train.loss.beta, 0.0);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.scene.seed, 7u);
  EXPECT_EQ(c.train.lr_init, 1e-3);
  EXPECT_EQ(parse_config_text(c.to_text()).to_text(), c.to_text());
}

TEST(Config, ErrorsNameTheKey) {
  try {
    parse_config_text("diffusion.T = abc\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("diffusion.T"), std::string::npos) << m;
    EXPECT_NE(m.find("run.cfg:1"), std::string::npos) << m;
  }
  try {
    parse_config_text("\nmodel.depth = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown key 'model.depth'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("loss.beta\n"), ConfigError);
  EXPECT_THROW(parse_config_text("loss.tau = \n"), ConfigError);
  EXPECT_THROW(parse_config_text("inference.steps = 1001\n"), ConfigError);
  EXPECT_THROW(parse_config_text("train.warmup_steps = 5000\n"), ConfigError);
  EXPECT_THROW(parse_config(scratch("absent") / "x.cfg"), ConfigError);
}

TEST(Rng, DerivedStreamsAreKeyedAndStable) {
  EXPECT_EQ(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
  auto r1 = make_rng(5, "x", 3), r2 = make_rng(5, "x", 3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(r1(), r2());
}

TEST(Checksum, KnownVectorsAndSensitivity) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const unsigned char*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const Tensor a({2, 2}, 1.0f);
  const std::string base = checksum({{"w", a}});
  EXPECT_NE(checksum({{"v", a}}), base);
  EXPECT_NE(checksum({{"w", Tensor({4}, 1.0f)}}), base);
  Tensor b = a.clone();
  b.data()[3] = std::nextafter(1.0f, 2.0f);
  EXPECT_NE(checksum({{"w", b}}), base);
}

TEST(Pnm, RoundTripQuantizes) {
  const fs::path dir = scratch("pnm");
  fs::create_directories(dir);
  Tensor rgb({3, 2, 3});
  for (std::size_t i = 0; i < rgb.numel(); ++i) rgb.data()[i] = static_cast<float>(i) / 17.0f;
  write_pnm(dir / "a.ppm", rgb);
  const Tensor back = read_pnm(dir / "a.ppm");
  ASSERT_EQ(back.shape(), rgb.shape());
  for (std::size_t i = 0; i < rgb.numel(); ++i) {
    EXPECT_NEAR(back[i], std::round(rgb[i] * 255.0f) / 255.0f, 1e-7f);
  }
  Tensor grey({1, 2, 2}, std::vector<float>{-1.0f, 0.0f, 0.5f, 2.0f});
  write_pnm(dir / "g.pgm", grey);
  const Tensor g = read_pnm(dir / "g.pgm");
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[3], 1.0f);
  EXPECT_EQ(slurp(dir / "g.pgm").substr(0, 2), "P5");
  std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_THROW(read_pnm(dir / "bad.pgm"), ImageIoError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\n" << std::string(3, 'x');
  EXPECT_THROW(read_pnm(dir / "short.pgm"), ImageIoError);
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), ImageIoError);
  fs::remove_all(dir);
}

TEST(Cli, VersionAndUsageExitCodes) {
  CliResult r = cli({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("cdiff 0.1.0"), std::string::npos);
  r = cli({"sample", "--out", scratch("nock").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error\tusage\t", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--count", "x", "--out", scratch("nan").string()}).code, 2);
}

TEST(Cli, RuntimeErrorsAreCategorised) {
  const fs::path dir = scratch("cfgerr");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.cfg") << "diffusion.T = abc\n";
  CliResult r = cli({"gen-data", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error\tconfig\t", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("diffusion.T"), std::string::npos);
  r = cli({"sample", "--checkpoint", (dir / "nothing").string(), "--input", (dir / "none.pgm").string(), "--out",
           (dir / "s").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
  fs::remove_all(dir);
}

TEST(Cli, GenDataIsReproducibleAndManifested) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(cli({"gen-data", "--count", "12", "--out", a.string()}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--count", "12", "--out", b.string()}).code, 0);
  EXPECT_TRUE(RunManifest::verify(a).empty());
  const RunManifest ma = RunManifest::read(a), mb = RunManifest::read(b);
  EXPECT_EQ(ma.seed, 2025u);
  EXPECT_EQ(ma.checksums, mb.checksums);
  EXPECT_EQ(ma.config_text, mb.config_text);
  EXPECT_EQ(ma.checksums.size(), 1u + 3u * 12u);
  for (const auto& [rel, sum] : ma.checksums) EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
  EXPECT_FALSE(ma.started.empty());

  const std::string victim = ma.checksums.begin()->first;
  std::ofstream(a / victim, std::ios::app) << "x";
  std::ofstream(a / "stray.txt") << "y";
  const auto bad = RunManifest::verify(a);
  EXPECT_EQ(bad.size(), 2u);
  EXPECT_NE(std::find(bad.begin(), bad.end(), victim), bad.end());
  fs::remove_all(a);
  fs::remove_all(b);
}
