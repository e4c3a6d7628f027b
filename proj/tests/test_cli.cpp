#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "eve/dataset.hpp"
#include "eve/frames_io.hpp"
#include "support.hpp"

using namespace eve;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), "-q");
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string clip(const char* name) { return (test::fixture_dir() / name).string(); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<std::string> small_edit(const std::string& output) {
  return {"edit", "--video", clip("clip_b"), "--frames", "4", "--resolution", "32", "--steps", "4",
          "--prompt", "a blue wave", "-o", output};
}

}  // namespace

TEST_CASE("exit codes") {
  test::TempDir dir;
  const auto out = (dir / "o").string();
  CHECK(run_cli({"edit", "--video", clip("clip_a"), "--steps", "0", "-o", out}).code == cli::kExitConfig);
  CHECK(run_cli({"edit", "--bogus"}).code == cli::kExitConfig);
  CHECK(run_cli({"edit", "--video", clip("clip_a"), "--attn", "xa", "-o", out}).code == cli::kExitConfig);
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
  const auto missing = run_cli({"edit", "--video", (dir / "none").string(), "--resolution", "32", "-o", out});
  CHECK(missing.code == cli::kExitIo);
  CHECK(missing.err.find("load") != std::string::npos);
  CHECK(run_cli({"edit", "--video", clip("clip_a"), "--frames", "9", "--resolution", "32", "-o", out}).code ==
        cli::kExitIo);
  CHECK(run_cli({"edit", "--video", clip("clip_a"), "--resolution", "32", "--depth-backend", "http", "--depth-url",
                 "http://127.0.0.1:1", "--steps", "2", "-o", out})
            .code == cli::kExitBackend);
  CHECK(run_cli({"eval", "--frames", clip("clip_a"), "--pc", "-o", out}).code == cli::kExitConfig);
  CHECK(cli::exit_code(ErrorKind::numeric) == cli::kExitFailure);
}

TEST_CASE("edit through flags and through a config file agree") {
  test::TempDir dir;
  const auto a = run_cli(small_edit((dir / "flags").string()));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("flags") != std::string::npos);

  std::ofstream(dir / "edit.toml") << "[edit]\nvideo = \"" << clip("clip_b")
                                   << "\"\nframes = 4\nresolution = 32\nsteps = 4\nprompt = \"a blue wave\"\n";
  const auto b = run_cli({"--config", (dir / "edit.toml").string(), "edit", "-o", (dir / "file").string()});
  REQUIRE(b.code == 0);

  std::ofstream(dir / "flat.toml") << "video = \"" << clip("clip_b")
                                   << "\"\nframes = 4\nresolution = 32\nsteps = 4\nprompt = \"a blue wave\"\n";
  const auto c = run_cli({"--config", (dir / "flat.toml").string(), "edit", "-o", (dir / "flat").string()});
  REQUIRE(c.code == 0);

  auto strip = [](json j) {
    j.erase("timings_seconds");
    return j;
  };
  const auto ja = strip(read_json(dir / "flags" / "result.json"));
  CHECK(ja == strip(read_json(dir / "file" / "result.json")));
  CHECK(ja == strip(read_json(dir / "flat" / "result.json")));
  for (const char* other : {"file", "flat"}) {
    for (int k = 0; k < 4; ++k) {
      const std::string name = "00" + std::to_string(k) + ".png";
      CHECK(read_image(dir / "flags" / "frames" / name) == read_image(dir / other / "frames" / name));
    }
  }

  std::ofstream(dir / "bad.toml") << "[edit]\nbogus = 1\n";
  CHECK(run_cli({"--config", (dir / "bad.toml").string(), "edit", "-o", (dir / "bad").string()}).code ==
        cli::kExitConfig);
}

TEST_CASE("invert command") {
  test::TempDir dir;
  const auto r = run_cli({"invert", "--video", clip("clip_c"), "--frames", "2", "--resolution", "32", "--steps", "5",
                          "--reconstruct", "-o", (dir / "inv").string()});
  REQUIRE(r.code == 0);
  const auto j = read_json(dir / "inv" / "result.json");
  CHECK(j["command"] == "invert");
  CHECK(j["noise_evaluations"]["inversion"] == 5);
  CHECK(j["inversion_rms"].size() == 5);
  CHECK(fs::exists(dir / "inv" / "frames" / "001.png"));
  const auto longer = run_cli({"invert", "--video", clip("clip_c"), "--frames", "2", "--resolution", "32", "--steps",
                               "25", "--reconstruct", "-o", (dir / "inv25").string()});
  REQUIRE(longer.code == 0);
  const double coarse = j["reconstruction_rmse"].get<double>();
  const double fine = read_json(dir / "inv25" / "result.json")["reconstruction_rmse"].get<double>();
  CHECK(std::isfinite(coarse));
  CHECK(fine < coarse);
}

TEST_CASE("eval command") {
  test::TempDir dir;
  const auto frames = dir / "same";
  fs::create_directories(frames);
  const Image img = test::synthetic_frame(2, 32, 32);
  for (int k = 0; k < 4; ++k) write_png(frames / ("f" + std::to_string(k) + ".png"), img);

  const auto r = run_cli({"eval", "--frames", frames.string(), "--prompt", "a blob", "--pairs-csv", "-o",
                          (dir / "m").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("TC 100.00") != std::string::npos);
  CHECK(r.out.find("PC ") != std::string::npos);
  const auto j = read_json(dir / "m" / "metrics.json");
  CHECK(j["temporal_consistency"].get<double>() == doctest::Approx(100.0));
  CHECK(j["pairs"].size() == 3);
  CHECK(fs::exists(dir / "m" / "pairs.csv"));

  const auto no_tc = run_cli({"eval", "--frames", frames.string(), "--prompt", "a blob", "--no-tc", "-o",
                              (dir / "n").string()});
  REQUIRE(no_tc.code == 0);
  CHECK(no_tc.out.find("TC") == std::string::npos);
  CHECK(run_cli({"eval", "--frames", (dir / "missing").string(), "-o", (dir / "x").string()}).code == cli::kExitIo);
}

TEST_CASE("dataset commands") {
  test::TempDir dir;
  for (int i = 0; i < 3; ++i) test::write_synthetic_video(dir / "videos" / ("v" + std::to_string(i)), 2, 16, 16);
  const auto manifest = (dir / "manifest.jsonl").string();
  const auto built = run_cli({"dataset-build", "--videos", (dir / "videos").string(), "--source", "davis", "-o",
                              manifest});
  REQUIRE(built.code == 0);
  CHECK(built.out.find("records 3 failures 0") != std::string::npos);
  auto records = read_manifest(manifest);
  REQUIRE(records.size() == 3);
  CHECK(records[0].source == VideoSource::davis);

  const auto shown = run_cli({"dataset-review", "--manifest", manifest, "--id", "v1"});
  REQUIRE(shown.code == 0);
  CHECK(shown.out.find("v1") != std::string::npos);
  CHECK(shown.out.find("000.png") != std::string::npos);
  CHECK(read_manifest(manifest) == records);

  REQUIRE(run_cli({"dataset-review", "--manifest", manifest, "--id", "v1", "--decision", "approve", "--note", "ok"})
              .code == 0);
  records = read_manifest(manifest);
  CHECK(records[1].verified);
  CHECK(records[1].note == "ok");
  CHECK(run_cli({"dataset-review", "--manifest", manifest, "--id", "v7"}).code == cli::kExitConfig);

  fs::create_directories(dir / "videos" / "empty");
  const auto partial = run_cli({"dataset-build", "--videos", (dir / "videos").string(), "-o",
                                (dir / "partial.jsonl").string()});
  CHECK(partial.code == cli::kExitBackend);
  CHECK(read_manifest(dir / "partial.jsonl").size() == 3);
}

TEST_CASE("ablation grid") {
  const auto grid = cli::ablation_grid("table1");
  REQUIRE(grid.size() == 6);
  std::set<std::pair<bool, AttentionMode>> configs;
  for (const auto& c : grid) configs.insert({c.depth_guidance, c.attention});
  CHECK(configs.size() == 6);
  CHECK_THROWS(cli::ablation_grid("table9"));

  test::TempDir dir;
  const auto r = run_cli({"ablate", "--video", clip("clip_a"), "--frames", "2", "--resolution", "32", "--steps", "2",
                          "-o", (dir / "grid").string()});
  REQUIRE(r.code == 0);
  const auto index = read_json(dir / "grid" / "grid.json");
  REQUIRE(index["cells"].size() == 6);
  for (const auto& cell : index["cells"]) {
    CHECK(cell["status"] == "ok");
    const auto res = read_json(dir / "grid" / cell["dir"].get<std::string>() / "result.json");
    CHECK(res["config"]["dmg"] == cell["dmg"]);
    CHECK(res["config"]["attn"] == cell["attn"]);
  }
}
