#include <fstream>

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/pipeline.hpp"
#include "quakesense/synth.hpp"
#include "support.hpp"

using namespace quakesense;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Config;
}

ScenarioOptions small() {
  ScenarioOptions o;
  o.zones = 4;
  o.points_per_zone = 6;
  return o;
}

}  // namespace

TEST_CASE("steps refuse to run without their predecessor") {
  qs_test::TempDir dir("pipe_dep");
  const auto info = write_scenario(dir.path(), small());
  const auto c = load_config(info.config);
  try {
    cmd_fuse(c);
    FAIL("fuse ran without sample");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dependency);
    CHECK(exit_code(e.kind()) == 1);
    CHECK(std::string(e.what()).find("quakesense sample --config") != std::string::npos);
  }
  CHECK(kind_of([&] { cmd_export(c); }) == ErrorKind::Dependency);
}

TEST_CASE("steps are reused until inputs or config change") {
  qs_test::TempDir dir("pipe_reuse");
  const auto info = write_scenario(dir.path(), small());
  const auto c = load_config(info.config);
  CHECK_FALSE(cmd_sample(c).reused);
  CHECK_FALSE(cmd_fuse(c).reused);
  CHECK(cmd_sample(c).reused);
  CHECK(cmd_fuse(c).reused);
  PipelineOptions force;
  force.force = true;
  CHECK_FALSE(cmd_sample(c, force).reused);
  // The forced rerun writes an identical key, so fuse stays valid.
  CHECK(cmd_fuse(c).reused);

  ConfigOverrides o;
  o.seed = 1234;
  const auto reseeded = load_config(info.config, o);
  CHECK(kind_of([&] { cmd_fuse(reseeded); }) == ErrorKind::Dependency);
  CHECK_FALSE(cmd_sample(reseeded).reused);
  CHECK_FALSE(cmd_fuse(reseeded).reused);

  // Editing an input file invalidates the step that read it.
  std::ofstream(dir / "vs30.asc", std::ios::app) << "\n";
  CHECK(kind_of([&] { cmd_simulate(reseeded); }) == ErrorKind::Dependency);
  CHECK_FALSE(cmd_fuse(reseeded).reused);

  fs::remove(step_dir(reseeded, Step::Sample) / "points.jsonl");
  CHECK(kind_of([&] { cmd_fuse(reseeded, force); }) == ErrorKind::Dependency);
}

TEST_CASE("full run writes a conserving manifest") {
  qs_test::TempDir dir("pipe_run");
  auto o = small();
  o.missing_image_rate = 0.25;
  o.vs30_nodata_patch = true;
  o.garbage_rate = 0.1;
  const auto info = write_scenario(dir.path(), o);
  const auto c = load_config(info.config);
  const auto steps = cmd_run(c);
  CHECK(steps.size() == 6);
  const auto m = json::parse(read_text_file(step_dir(c, Step::Export) / "manifest.json"));
  CHECK(m["details"]["status"] == "ok");
  std::size_t requested = 0;
  for (const auto& [zone, n] : m["counts"].items()) {
    CHECK(n["requested"] == n["fused_ok"].get<std::size_t>() + n["fused_rejected"].get<std::size_t>());
    CHECK(n["fused_ok"] == n["predicted"].get<std::size_t>() + n["failed"].get<std::size_t>());
    requested += n["requested"].get<std::size_t>();
  }
  CHECK(requested == 24);
  CHECK(fs::exists(step_dir(c, Step::Analyze) / "scatter.csv"));
  CHECK(fs::exists(step_dir(c, Step::Export) / "choropleth_zip.geojson"));

  // A rerun reuses everything but export, which restamps the manifest.
  const auto again = cmd_run(c);
  for (std::size_t i = 0; i < 5; ++i) CHECK(again[i].reused);
}

TEST_CASE("transport failures abort the run with exit code 3") {
  qs_test::TempDir dir("pipe_transport");
  auto o = small();
  o.model_endpoint = "http://127.0.0.1:9/v1/chat/completions";
  o.model_id = "unreachable";
  o.api_key_env = "QS_PIPELINE_TEST_KEY";
  const auto info = write_scenario(dir.path(), o);
  ::setenv("QS_PIPELINE_TEST_KEY", "dummy", 1);
  auto doc = json::parse(read_text_file(info.config));
  doc["model"]["retry"] = {{"max_attempts", 1}, {"base_backoff_ms", 0}};
  doc["model"]["timeout_ms"] = 500;
  const auto c = parse_config(doc, dir.path());
  try {
    cmd_run(c);
    FAIL("run succeeded against a closed port");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Transport);
    CHECK(exit_code(e.kind()) == 3);
  }
  const auto m = json::parse(read_text_file(step_dir(c, Step::Export) / "manifest.json"));
  CHECK(m["details"]["status"] == "failed");
  ::unsetenv("QS_PIPELINE_TEST_KEY");
}

TEST_CASE("sweep shares sampling and fusion") {
  qs_test::TempDir dir("pipe_sweep");
  const auto info = write_scenario(dir.path(), small());
  auto doc = json::parse(read_text_file(info.config));
  doc["sweep"] = json::array({{{"name", "base"}},
                              {{"name", "no_building"}, {"prompt", {{"sections", {"geospatial", "socioeconomic", "visual"}}}}},
                              {{"name", "icl"}, {"prompt", {{"icl_mmi_guide", true}}}}});
  const auto c = parse_config(doc, dir.path());
  const auto v = sweep_variant(c, doc["sweep"][1]);
  CHECK(v.output_dir == c.output_dir / "sweep" / "no_building");
  CHECK(v.cache_dir == c.cache_dir);
  CHECK(v.prompt.sections.size() == 3);

  cmd_sweep(c);
  for (const char* name : {"base", "no_building", "icl"}) {
    const auto out = c.output_dir / "sweep" / name;
    CHECK(fs::is_symlink(out / "sample"));
    CHECK(fs::exists(out / "export" / "manifest.json"));
  }
  const auto summary = json::parse(read_text_file(c.output_dir / "sweep" / "summary.json"));
  CHECK(summary.size() == 3);
  CHECK(fs::exists(c.output_dir / "sweep" / "summary.txt"));
}

TEST_CASE("exit codes by error kind") {
  CHECK(exit_code(ErrorKind::Config) == 1);
  CHECK(exit_code(ErrorKind::Dependency) == 1);
  CHECK(exit_code(ErrorKind::Transport) == 3);
  CHECK(exit_code(ErrorKind::Parse) == 2);
  CHECK(exit_code(ErrorKind::Conservation) == 2);
}
