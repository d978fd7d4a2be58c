#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include "mhsa/checkpoint.hpp"
#include "mhsa/config.hpp"
#include "mhsa/errors.hpp"
#include "test_util.hpp"

using namespace mhsa;

TEST_CASE("empty document gives the reference defaults") {
  const RunConfig c = parse_run_config("");
  CHECK(c.branch.heads == 8);
  CHECK(c.loss.lambda1 == 1e-4);
  CHECK(c.loss.lambda2 == 1.0);
  CHECK(c.loss.lambda3 == 1e-3);
  CHECK(c.loss.gamma == 1e-3);
  CHECK(c.loss.margin == 3.0);
  CHECK(c.sampler.ids_per_batch == 8);
  CHECK(c.sampler.instances_per_id == 4);
}

TEST_CASE("the shipped reference config parses to the defaults") {
  const RunConfig a = load_run_config(MHSA_SOURCE_DIR "/configs/reference.yaml");
  CHECK(dump_run_config(a) == dump_run_config(RunConfig{}));
}

TEST_CASE("unknown and malformed keys are rejected") {
  CHECK_THROWS_AS(parse_run_config("sed: 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("branch:\n  headz: 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("branch:\n  heads: four\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("branch:\n  fusion: average\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("loss:\n  margin: -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("branch:\n  heads: 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("data:\n  n_ids: 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("- 1\n- 2\n"), ConfigError);
}

TEST_CASE("dump and parse round trip") {
  RunConfig c;
  c.seed = 77;
  c.branch.heads = 3;
  c.branch.fusion = FusionMode::concat;
  c.loss.lambda1 = 1.0 / 3.0;
  c.schedule.decay = {{10, 2e-4}};
  c.data.occlusion_prob = 0.125;
  c.eval_variant = Variant::local;
  const RunConfig back = parse_run_config(dump_run_config(c));
  CHECK(dump_run_config(back) == dump_run_config(c));
  CHECK(back.loss.lambda1 == c.loss.lambda1);
  CHECK(back.branch.heads == 3);
  CHECK(back.eval_variant == Variant::local);
}

TEST_CASE("sweep parameters accept the published grids") {
  RunConfig c;
  for (double v : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) CHECK_NOTHROW(apply_sweep_value(c, "lambda1", v));
  for (double v : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) CHECK_NOTHROW(apply_sweep_value(c, "lambda3", v));
  for (double v : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) CHECK_NOTHROW(apply_sweep_value(c, "gamma", v));
  for (double v : {0.0, 0.5, 1.0, 2.0}) CHECK_NOTHROW(apply_sweep_value(c, "lambda2", v));
  apply_sweep_value(c, "K", 4);
  CHECK(c.branch.heads == 4);
  CHECK_THROWS_AS(apply_sweep_value(c, "K", 2.5), ConfigError);
  CHECK_THROWS_AS(apply_sweep_value(c, "K", 0), ConfigError);
  CHECK_THROWS_AS(apply_sweep_value(c, "margin", 1.0), ConfigError);
}

namespace {

namespace fs = std::filesystem;

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / "mhsa_test_cli.log";
  const std::string cmd = std::string("\"") + MHSA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream f(log);
    *output = {std::istreambuf_iterator<char>(f), {}};
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

const char* kSmallConfig =
    "data:\n  n_ids: 8\n  test_ids: 4\nschedule:\n  epochs: 2\n  decay: []\n";

fs::path write_config(const fs::path& dir, const std::string& text) {
  std::ofstream(dir / "c.yaml") << text;
  return dir / "c.yaml";
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("cli: gen-data, train, eval, export-attn") {
  const fs::path dir = testutil::temp_dir("cli");
  const fs::path cfg = write_config(dir, kSmallConfig);
  std::string out;
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), &out) == 0);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  const std::string manifest = slurp(dir / "data" / "manifest.json");
  CHECK(manifest.find("\"samples\": 80") != std::string::npos);
  CHECK(run("gen-data --config " + q(cfg) + " --out " + q(dir / "data"), &out) == 2);
  CHECK(out.find("--force") != std::string::npos);
  const std::string train_bytes = slurp(dir / "data" / "train.mhsa");
  REQUIRE(run("gen-data --force --config " + q(cfg) + " --out " + q(dir / "data")) == 0);
  CHECK(slurp(dir / "data" / "train.mhsa") == train_bytes);

  REQUIRE(run("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " + q(dir / "r1"), &out) == 0);
  REQUIRE(run("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " + q(dir / "r2")) == 0);
  CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r2" / "metrics.csv"));
  CHECK(slurp(dir / "r1" / "checkpoint.mhsa") == slurp(dir / "r2" / "checkpoint.mhsa"));

  const std::string ckpt = q(dir / "r1" / "checkpoint.mhsa");
  REQUIRE(run("eval --checkpoint " + ckpt + " --data " + q(dir / "data") + " --variant local", &out) == 0);
  CHECK(out.find("Rank-1") != std::string::npos);
  const std::string first = slurp(dir / "r1" / "eval_local_saffm.csv");
  REQUIRE(run("eval --checkpoint " + ckpt + " --data " + q(dir / "data") + " --variant local") == 0);
  CHECK(slurp(dir / "r1" / "eval_local_saffm.csv") == first);
  CHECK(first.rfind("rank,accuracy\n", 0) == 0);

  REQUIRE(run("eval --checkpoint " + ckpt + " --data " + q(dir / "data") + " --variant dagger", &out) == 0);
  CHECK(out.find("warning") != std::string::npos);
  CHECK(fs::exists(dir / "r1" / "eval_full_saffm.csv"));
  CHECK(run("eval --checkpoint " + ckpt + " --data " + q(dir / "data") + " --variant best") == 2);

  REQUIRE(run("export-attn --checkpoint " + ckpt + " --data " + q(dir / "data") + " --sample 0 --out " +
                  q(dir / "attn"), &out) == 0);
  for (int k = 0; k < 8; ++k) CHECK(fs::exists(dir / "attn" / ("head" + std::to_string(k) + ".pgm")));
  CHECK(fs::exists(dir / "attn" / "attention.csv"));
  CHECK(out.find("occlusion score") != std::string::npos);
  CHECK(run("export-attn --checkpoint " + ckpt + " --data " + q(dir / "data") + " --sample 999 --out " +
            q(dir / "attn")) == 2);
}

TEST_CASE("cli: uniform-attention checkpoint exports flat heatmaps") {
  const fs::path dir = testutil::temp_dir("cli_flat");
  const fs::path cfg = write_config(dir, kSmallConfig);
  REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(dir / "data")) == 0);
  const RunConfig rc = parse_run_config(kSmallConfig);
  ModelConfig mc = rc.train_config().model;
  mc.num_classes = 8;
  Rng rng(1);
  Model m = Model::init(mc, rng);
  m.branch.w2.fill(0.0);
  save_checkpoint(dir / "flat.mhsa", m);
  REQUIRE(run("export-attn --checkpoint " + q(dir / "flat.mhsa") + " --data " + q(dir / "data") +
              " --sample 1 --out " + q(dir / "attn")) == 0);
  const std::string pgm = slurp(dir / "attn" / "head3.pgm");
  const std::size_t header = std::string("P5\n4 6\n255\n").size();
  REQUIRE(pgm.size() == header + 24);
  for (std::size_t i = header; i < pgm.size(); ++i) CHECK(static_cast<unsigned char>(pgm[i]) == 128);
}

TEST_CASE("cli: exit codes") {
  const fs::path dir = testutil::temp_dir("cli_codes");
  CHECK(run("") == 2);
  CHECK(run("train --config " + q(dir / "missing.yaml") + " --data x --out y") == 2);
  CHECK(run("train --config " + q(write_config(dir, "bogus: 1\n")) + " --data x --out y") == 2);
  CHECK(run("gradcheck --seed 3") == 0);
  std::string out;
  CHECK(run("gradcheck --corrupt-analytic", &out) == 4);
  CHECK(out.find("gradient check failed for") != std::string::npos);

  // Inputs this large overflow the squared distances on the first batch.
  const RunConfig rc = parse_run_config(kSmallConfig);
  Dataset d = generate_dataset(rc.data_spec());
  for (auto& s : d.train.samples)
    for (double& v : s.input.values()) v = 1e160;
  save_dataset(d, dir / "data");
  const fs::path cfg = write_config(dir, kSmallConfig);
  CHECK(run("train --config " + q(cfg) + " --data " + q(dir / "data") + " --out " + q(dir / "run"), &out) == 3);
  CHECK(fs::exists(dir / "run" / "checkpoint.mhsa"));
  CHECK(out.find("last good checkpoint kept") != std::string::npos);
}

TEST_CASE("cli: sweep over K writes one row per value and is reproducible") {
  const fs::path dir = testutil::temp_dir("cli_sweep");
  const fs::path cfg = write_config(dir, kSmallConfig);
  REQUIRE(run("sweep --param K --values 1,2,4,8 --config " + q(cfg) + " --out " + q(dir / "a")) == 0);
  REQUIRE(run("sweep --param K --values 1,2,4,8 --config " + q(cfg) + " --out " + q(dir / "b")) == 0);
  const std::string csv = slurp(dir / "a" / "sweep_K.csv");
  CHECK(csv == slurp(dir / "b" / "sweep_K.csv"));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "value,rank1,rank5,rank10,mAP");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 4);
  CHECK(run("sweep --param margin --values 1 --config " + q(cfg) + " --out " + q(dir / "c")) == 2);
}
