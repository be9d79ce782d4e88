#include <set>

#include "doctest.h"
#include "divmix/cli.hpp"
#include "divmix/error.hpp"
#include "divmix/log.hpp"
#include "support.hpp"

using namespace divmix;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "divmix");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  log::set_level(log::Level::info);
  return code;
}

// Small, fast settings written next to the outputs.
fs::path small_config(const testing::TempDir& dir) {
  const json cfg = {{"out", "out"},
                    {"synth", {{"train_count", 12}, {"test_count", 4}, {"image_side", 32}}},
                    {"gist", {{"image_side", 32}, {"orientations_per_scale", {4, 4}}, {"blocks", 2}}},
                    {"diversity", {{"bins", 10}, {"k", 5}}},
                    {"sweep", {{"p_grid", {0, 1}}, {"n_grid", {4}}, {"seeds", {0}}}},
                    {"train", {{"epochs", 5}}}};
  testing::write_text(dir / "cfg.json", cfg.dump());
  return dir / "cfg.json";
}

std::set<std::string> tree(const fs::path& root) {
  std::set<std::string> s;
  for (const auto& e : fs::recursive_directory_iterator(root)) s.insert(fs::relative(e.path(), root).string());
  return s;
}

// Runs with cwd inside `dir` so stray relative writes would show up there.
struct Cwd {
  fs::path saved = fs::current_path();
  explicit Cwd(const fs::path& p) { fs::current_path(p); }
  ~Cwd() { fs::current_path(saved); }
};

}  // namespace

TEST_CASE("config loading") {
  testing::TempDir dir("cfg");
  SUBCASE("defaults and relative paths") {
    testing::write_text(dir / "c.json", R"({"out": "o", "gist": {"blocks": 2}})");
    const auto cfg = cli::load_config(dir / "c.json");
    CHECK(cfg.at("gist").at("blocks") == 2);
    CHECK(cfg.at("gist").at("image_side") == 128);
    CHECK(fs::path(cfg.at("out").get<std::string>()) == fs::absolute(dir / "o"));
  }
  SUBCASE("unknown keys are rejected") {
    testing::write_text(dir / "c.json", R"({"gist": {"blokcs": 2}})");
    try {
      cli::load_config(dir / "c.json");
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("gist.blokcs") != std::string::npos);
    }
  }
  SUBCASE("missing and malformed files") {
    CHECK_THROWS_AS(cli::load_config(dir / "nope.json"), ValidationError);
    testing::write_text(dir / "bad.json", "{");
    CHECK_THROWS_AS(cli::load_config(dir / "bad.json"), ValidationError);
  }
  SUBCASE("overrides") {
    auto cfg = cli::default_config();
    cli::apply_override(cfg, "gist.blocks=2");
    cli::apply_override(cfg, "synth.train_distribution=parent");
    cli::apply_override(cfg, "sweep.n_grid=[5,10]");
    CHECK(cfg.at("gist").at("blocks") == 2);
    CHECK(cfg.at("synth").at("train_distribution") == "parent");
    CHECK(cfg.at("sweep").at("n_grid") == json{5, 10});
    CHECK_THROWS_AS(cli::apply_override(cfg, "gist.nope=1"), ValidationError);
    CHECK_THROWS_AS(cli::apply_override(cfg, "gist=1"), ValidationError);
    CHECK_THROWS_AS(cli::apply_override(cfg, "blocks"), ValidationError);
  }
}

TEST_CASE("exit codes") {
  testing::TempDir dir("exit");
  Cwd cwd(dir.path());
  CHECK(run_cli({}) == 1);                // no subcommand
  CHECK(run_cli({"frobnicate"}) == 1);    // unknown subcommand
  CHECK(run_cli({"synth", "--bogus"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"sweep", "--help"}) == 0);
  CHECK(run_cli({"--version"}) == 0);
  CHECK(run_cli({"synth", "--config", "missing.json", "-q"}) == 1);
  CHECK(run_cli({"synth", "--set", "synth.nope=3", "-q"}) == 1);
  CHECK(run_cli({"synth", "--set", "synth.objects=[\"spaceship\"]", "-q"}) == 1);
  CHECK(run_cli({"gist", "-q"}) == 1);  // no manifest configured
}

TEST_CASE("pipeline through the binary entry point") {
  testing::TempDir dir("pipe");
  Cwd cwd(dir.path());
  const auto cfg = small_config(dir);

  REQUIRE(run_cli({"synth", "--config", cfg.string(), "-q"}) == 0);
  const fs::path out = dir / "out";
  const auto manifest = out / "manifest.jsonl";
  REQUIRE(fs::exists(manifest));
  CHECK(testing::count_lines(manifest) == 2 * (12 + 4) + 1);  // class header line first

  SUBCASE("synth is reproducible") {
    const auto first = testing::read_text(manifest);
    const auto files = tree(out);
    REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", (dir / "again").string(), "-q", "--threads", "1"}) ==
            0);
    CHECK(testing::read_text(dir / "again" / "manifest.jsonl") == first);
    for (const auto& f : files) {
      if (f.size() < 4 || f.substr(f.size() - 4) != ".png") continue;
      CHECK_MESSAGE(testing::read_text(out / f) == testing::read_text(dir / "again" / f), f);
    }
  }
  SUBCASE("diversity tables") {
    REQUIRE(run_cli({"diversity", "--config", cfg.string(), "--set", "manifest=out/manifest.jsonl", "--out",
                     "div", "-q"}) == 0);
    const fs::path d = dir / "div";
    CHECK(testing::count_lines(d / "histogram.csv") == 11);
    CHECK(testing::count_lines(d / "spectrum.csv") == 6);
    CHECK(testing::count_lines(d / "embedding.csv") == 32 + 1);
    std::ifstream in(d / "diversity.json");
    const auto j = json::parse(in);
    CHECK(j.contains("per_class"));
    const auto echo = json::parse(testing::read_text(d / "config.json"));
    CHECK(echo.at("command") == "diversity");
    CHECK(echo.at("diversity").at("bins") == 10);
    long long total = 0;
    std::ifstream h(d / "histogram.csv");
    std::string line;
    std::getline(h, line);
    while (std::getline(h, line)) total += std::stoll(line.substr(line.rfind(',') + 1));
    CHECK(total == 32 * 31 / 2);
  }
  SUBCASE("gist, partition and sweep") {
    const std::string m = "manifest=out/manifest.jsonl";
    REQUIRE(run_cli({"gist", "--config", cfg.string(), "--set", m, "--out", "g", "-q"}) == 0);
    CHECK(testing::count_lines(dir / "g" / "descriptors.csv") == 32 + 1);
    REQUIRE(run_cli({"partition", "--config", cfg.string(), "--set", m, "--out", "p", "-q"}) == 0);
    CHECK(testing::count_lines(dir / "p" / "partition.csv") == 24 + 1);
    REQUIRE(run_cli({"sweep", "--config", cfg.string(), "--set", m, "--set", "test_manifest=out/manifest.jsonl",
                     "--out", "s", "-q"}) == 0);
    CHECK(fs::exists(dir / "s" / "cells.csv"));
    CHECK(fs::exists(dir / "s" / "claims.csv"));
    CHECK(testing::count_lines(dir / "s" / "cells.csv") == 1 + 2 + 1 + 1);  // p=0, p=1, random, original

    // the pools hold 6 records per class, so n = 7 cannot be drawn
    CHECK(run_cli({"sweep", "--config", cfg.string(), "--set", m, "--set", "test_manifest=out/manifest.jsonl",
                   "--set", "sweep.n_grid=[7]", "--out", "s2", "-q"}) == 1);
  }
  SUBCASE("compare") {
    REQUIRE(run_cli({"compare", "--config", cfg.string(), "--set", "compare.manifest_a=out/manifest.jsonl", "--set",
                     "compare.manifest_b=out/manifest.jsonl", "--set", "compare.name_b=same", "--out", "c",
                     "-q"}) == 0);
    CHECK(fs::exists(dir / "c" / "comparison.json"));
    CHECK(fs::exists(dir / "c" / "histogram_same.csv"));
  }
  SUBCASE("unreadable images exit with 2") {
    for (const auto& e : fs::recursive_directory_iterator(out))
      if (e.path().extension() == ".png") {
        testing::write_text(e.path(), "not a png");
        break;
      }
    CHECK(run_cli({"gist", "--config", cfg.string(), "--set", "manifest=out/manifest.jsonl", "--out", "g", "-q"}) ==
          2);
  }
  // nothing besides the config and the requested output directories
  const std::set<std::string> allowed{"cfg.json", "out", "again", "div", "g", "p", "s", "s2", "c"};
  for (const auto& e : fs::directory_iterator(dir.path())) {
    const auto name = e.path().filename().string();
    CHECK_MESSAGE(allowed.count(name) == 1, name);
  }
}
