#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ifs/config.hpp"
#include "testutil.hpp"

using testutil::TempDir;

#ifndef IFS_CLI_PATH
#define IFS_CLI_PATH "ifs"
#endif

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IFS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("empty config file yields the documented defaults", "[cli]") {
  TempDir dir;
  const auto path = dir.file("empty.cfg");
  std::ofstream(path) << "# nothing but a comment\n\n";
  auto cfg = ifs::parse_config(path);
  CHECK(cfg.train.epochs == 40);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.base_lr == 0.001);
  CHECK(cfg.train.beta1 == 0.9);
  CHECK(cfg.train.beta2 == 0.999);
  CHECK(cfg.train.T == 6);
  CHECK(cfg.train.num_classes == 4);
  CHECK(cfg.train.tasks.app);
  CHECK(cfg.train.tasks.adv);
  CHECK(cfg.train.lsgan_real_is_zero);
  CHECK(cfg.train.flip == ifs::FlipMode::off);
  CHECK(cfg.clips == 1000);
}

TEST_CASE("overrides beat file values and are validated", "[cli]") {
  TempDir dir;
  const auto path = dir.file("a.cfg");
  std::ofstream(path) << "base_lr = 0.001\nepochs = 10\n";
  auto cfg = ifs::parse_config(path, {{"base_lr", "0.01"}});
  CHECK(cfg.train.base_lr == 0.01);
  CHECK(cfg.train.epochs == 10);

  CHECK_THROWS_AS(ifs::parse_config(path, {{"no_such_key", "1"}}), ifs::ConfigError);
}

TEST_CASE("bad config values name the offending line", "[cli]") {
  TempDir dir;
  const auto path = dir.file("bad.cfg");
  std::ofstream(path) << "epochs = 10\nepochs = banana\n";
  try {
    ifs::parse_config(path);
    FAIL("expected ConfigError");
  } catch (const ifs::ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  const auto unknown = dir.file("unknown.cfg");
  std::ofstream(unknown) << "\nnot_a_key = 3\n";
  try {
    ifs::parse_config(unknown);
    FAIL("expected ConfigError");
  } catch (const ifs::ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("not_a_key") != std::string::npos);
  }
}

TEST_CASE("every config value round-trips through serialization", "[cli]") {
  TempDir dir;
  ifs::RunConfig cfg;
  cfg.train.epochs = 17;
  cfg.train.base_lr = 0.00125;
  cfg.train.tasks.app = false;
  cfg.train.tasks.color = false;
  cfg.train.input_mode = ifs::InputMode::motion_only;
  cfg.train.flip = ifs::FlipMode::swap_lr;
  cfg.train.seed = 123456789ULL;
  cfg.speed_max = 2.75;
  cfg.samples_per_video = 9;

  const auto path = dir.file("round.cfg");
  ifs::write_config(path, cfg);
  auto back = ifs::parse_config(path);
  CHECK(ifs::serialize_config(back) == ifs::serialize_config(cfg));
}

TEST_CASE("gen-data is deterministic across invocations", "[cli]") {
  TempDir a, b;
  const std::string args_a =
      "gen-data --out " + a.path.string() + " --classes 4 --clips 12 --seed 7";
  const std::string args_b =
      "gen-data --out " + b.path.string() + " --classes 4 --clips 12 --seed 7";
  REQUIRE(run_cli(args_a) == 0);
  REQUIRE(run_cli(args_b) == 0);
  for (const auto& entry : std::filesystem::directory_iterator(a.path)) {
    const auto name = entry.path().filename().string();
    CHECK(slurp(entry.path().string()) == slurp((b.path / name).string()));
  }
}

TEST_CASE("encode then inspect --decode reproduces the clip bitwise", "[cli]") {
  TempDir dir;
  REQUIRE(run_cli("gen-data --out " + dir.path.string() + " --clips 4 --seed 3") == 0);
  const auto clip = (dir.path / "clip_00000.rvid").string();
  const auto cvid = dir.file("x.cvid");
  const auto back = dir.file("x.decoded.rvid");
  REQUIRE(run_cli("encode --in " + clip + " --out " + cvid + " --block 8 --search 4") == 0);
  REQUIRE(run_cli("inspect --decode " + cvid + " --out " + back) == 0);
  CHECK(slurp(clip) == slurp(back));
}

TEST_CASE("exit codes follow the contract", "[cli]") {
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("gen-data") == 1);                          // missing required --out
  CHECK(run_cli("encode --in missing.rvid --out o.cvid") == 1);  // unreadable input
  TempDir dir;
  CHECK(run_cli("gen-data --out " + dir.path.string() +
                " --clips 4 --seed 1 --set height=8 --set width=8") == 1);  // bad geometry
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("documented quickstart sequence runs end to end", "[cli][slow]") {
  // Mirrors the README quickstart commands; keep the two in sync.
  TempDir dir;
  auto in_dir = [&](const std::string& args) {
    const std::string cmd =
        "cd " + dir.path.string() + " && " + IFS_CLI_PATH " " + args + " > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  REQUIRE(in_dir("gen-data --out data --clips 80 --classes 4 --seed 7") == 0);
  REQUIRE(in_dir("train-ifs --data data/manifest.txt --out runs/ifs "
                 "--tasks app,cat,mot --regs adv,color --epochs 3 --seed 3 "
                 "--set base_width=8 --set n_res_blocks=1") == 0);
  REQUIRE(in_dir("train-classifier --data data/manifest.txt --out runs/cls --source ifs "
                 "--generator runs/ifs/ifs_best.ckpt --epochs 4 --seed 5 "
                 "--set base_width=8") == 0);
  REQUIRE(in_dir("evaluate --classifier runs/cls/classifier_best.ckpt "
                 "--data data/manifest.txt --source ifs --generator runs/ifs/ifs_best.ckpt "
                 "--samples 4 --report runs/report.txt") == 0);
  CHECK(std::filesystem::exists(dir.path / "runs/report.txt"));

  REQUIRE(in_dir("encode --in data/clip_00000.rvid --out clip.cvid --block 8 --search 4") == 0);
  REQUIRE(in_dir("inspect --decode clip.cvid --out clip.decoded.rvid") == 0);
  CHECK(slurp((dir.path / "data/clip_00000.rvid").string()) ==
        slurp((dir.path / "clip.decoded.rvid").string()));
  REQUIRE(in_dir("synthesize --ckpt runs/ifs/ifs_best.ckpt --in data/clip_00001.rvid "
                 "--out frame.ppm") == 0);
  REQUIRE(in_dir("inspect --ckpt runs/ifs/ifs_best.ckpt --clip data/clip_00002.rvid "
                 "--out-dir panels") == 0);
  CHECK(std::filesystem::exists(dir.path / "panels/synthetic.ppm"));
  CHECK(std::filesystem::exists(dir.path / "panels/est_motion_t2.ppm"));
  CHECK(std::filesystem::exists(dir.path / "panels/gt_residual_t3.ppm"));
}
