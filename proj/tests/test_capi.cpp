// Exercises the shared library through its C interface and the CLI through its
// exit codes. Links only liblm2d.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lm2d/lm2d.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  Scratch() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("lm2d_capi_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path path;
};

struct Config {
  Config() { REQUIRE(lm2d_config_create(&c) == LM2D_OK); }
  ~Config() { lm2d_config_destroy(c); }
  lm2d_config* c = nullptr;
};

std::string last_error() { return lm2d_last_error(); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LM2D_CLI_PATH) + " " + args + " --log-level off >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// A 3-clip synthetic dataset shared by the cases below.
const fs::path& dataset() {
  static Scratch dir;
  static const bool made = [] {
    Config cfg;
    lm2d_set_log_level("off");
    REQUIRE(lm2d_config_set(cfg.c, "synthetic.n_clips", "3") == LM2D_OK);
    REQUIRE(lm2d_make_synthetic(cfg.c, dir.path.c_str()) == LM2D_OK);
    return true;
  }();
  (void)made;
  return dir.path;
}

}  // namespace

TEST_CASE("version and log level") {
  CHECK(std::string(lm2d_version()).size() > 0);
  CHECK(lm2d_set_log_level("warn") == LM2D_OK);
  CHECK(lm2d_set_log_level("loud") == LM2D_ERR_USAGE);
  CHECK(last_error().find("loud") != std::string::npos);
  lm2d_set_log_level("off");
}

TEST_CASE("config handle: set, get, render and digest") {
  Config cfg;
  CHECK(lm2d_config_set(cfg.c, "seed", "42") == LM2D_OK);
  CHECK(lm2d_config_set(cfg.c, "model.colour", "red") == LM2D_ERR_USAGE);
  CHECK(last_error() == "unknown configuration key 'model.colour'");

  char small[2];
  size_t needed = 0;
  CHECK(lm2d_config_get(cfg.c, "seed", small, sizeof small, &needed) == LM2D_OK);
  CHECK(needed == 2);
  CHECK(std::string(small) == "4");
  char buf[64];
  CHECK(lm2d_config_get(cfg.c, "seed", buf, sizeof buf, &needed) == LM2D_OK);
  CHECK(std::string(buf) == "42");
  CHECK(lm2d_config_get(cfg.c, "nope", buf, sizeof buf, &needed) == LM2D_ERR_USAGE);

  CHECK(lm2d_config_render(cfg.c, nullptr, 0, &needed) == LM2D_OK);
  std::vector<char> text(needed + 1);
  CHECK(lm2d_config_render(cfg.c, text.data(), text.size(), &needed) == LM2D_OK);
  CHECK(std::string(text.data()).find("seed=42\n") != std::string::npos);

  CHECK(lm2d_config_digest(cfg.c, buf, sizeof buf, &needed) == LM2D_OK);
  CHECK(needed == 64);
}

TEST_CASE("config files: unknown keys and missing files") {
  Scratch dir;
  std::ofstream(dir.path / "bad.conf") << "seed=1\nmystery=2\n";
  Config cfg;
  CHECK(lm2d_config_load_file(cfg.c, (dir.path / "bad.conf").c_str()) == LM2D_ERR_USAGE);
  CHECK(last_error().find(":2: unknown configuration key 'mystery'") != std::string::npos);
  CHECK(lm2d_config_load_file(cfg.c, (dir.path / "absent.conf").c_str()) == LM2D_ERR_USAGE);
}

TEST_CASE("null handles are usage errors") {
  CHECK(lm2d_config_create(nullptr) == LM2D_ERR_USAGE);
  CHECK(lm2d_config_set(nullptr, "seed", "1") == LM2D_ERR_USAGE);
  CHECK(lm2d_motion_load(nullptr, nullptr) == LM2D_ERR_USAGE);
  lm2d_config_destroy(nullptr);
  lm2d_motion_destroy(nullptr);
}

TEST_CASE("motion handle reads generated clips") {
  lm2d_motion* m = nullptr;
  REQUIRE(lm2d_motion_load((dataset() / "clips" / "syn0000.msq").c_str(), &m) == LM2D_OK);
  CHECK(lm2d_motion_frames(m) == 360);
  CHECK(lm2d_motion_fps(m) == 60.0);
  std::vector<double> pose(147), pos(72);
  CHECK(lm2d_motion_pose(m, 0, pose.data()) == LM2D_OK);
  CHECK(lm2d_motion_positions(m, 10, pos.data()) == LM2D_OK);
  CHECK(lm2d_motion_pose(m, 360, pose.data()) == LM2D_ERR_USAGE);
  double bone = 1.0;
  CHECK(lm2d_motion_bone_error(m, &bone) == LM2D_OK);
  CHECK(bone < 1e-5);
  lm2d_motion_destroy(m);

  CHECK(lm2d_motion_load((dataset() / "clips" / "syn0000.wav").c_str(), &m) == LM2D_ERR_DATA);
  CHECK(lm2d_motion_load((dataset() / "missing.msq").c_str(), &m) == LM2D_ERR_DATA);
}

TEST_CASE("workflow errors map to status codes") {
  Scratch out;
  Config cfg;
  const std::string manifest = (dataset() / "manifest.jsonl").string();
  fs::create_directories(out.path / "empty");
  CHECK(lm2d_evaluate(cfg.c, manifest.c_str(), (out.path / "empty").c_str(), nullptr, (out.path / "ev").c_str()) ==
        LM2D_ERR_DATA);
  CHECK(last_error().find("syn0000") != std::string::npos);
  CHECK(lm2d_sample(cfg.c, manifest.c_str(), manifest.c_str(), 1, (out.path / "s").c_str()) == LM2D_ERR_DATA);
  CHECK(lm2d_train(cfg.c, (out.path / "none.jsonl").c_str(), (out.path / "t").c_str()) == LM2D_ERR_DATA);
}

TEST_CASE("CLI exit codes follow the status codes") {
  Scratch out;
  const std::string manifest = (dataset() / "manifest.jsonl").string();
  CHECK(run_cli("") == LM2D_ERR_USAGE);
  CHECK(run_cli("--version") == LM2D_OK);
  CHECK(run_cli("train --manifest " + manifest + " --set nope=1 --out " + (out.path / "t").string()) ==
        LM2D_ERR_USAGE);
  CHECK(run_cli("train --manifest " + (out.path / "absent").string() + " --out x") == LM2D_ERR_USAGE);
  CHECK(run_cli("sample --manifest " + manifest + " --checkpoint " + manifest + " --out " +
                (out.path / "s").string()) == LM2D_ERR_DATA);
  CHECK(run_cli("make-synthetic --set synthetic.n_clips=1 --out " + (out.path / "syn").string()) == LM2D_OK);
  CHECK(fs::exists(out.path / "syn" / "config.resolved"));
  CHECK(fs::exists(out.path / "syn" / "run.log"));
}
