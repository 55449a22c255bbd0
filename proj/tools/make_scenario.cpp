// make_scenario: writes the synthetic radial scenario used by the tests, so
// the pipeline can be tried without any real data.

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "quakesense/error.hpp"
#include "quakesense/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic radial earthquake scenario"};
  std::string dir;
  quakesense::ScenarioOptions o;
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--zones", o.zones, "Number of zones (1-50)");
  app.add_option("--points", o.points_per_zone, "Sample points per zone");
  app.add_option("--seed", o.seed, "Seed for the scenario and the sampler");
  app.add_option("--missing-images", o.missing_image_rate, "Fraction of samples without an image");
  app.add_flag("--vs30-nodata", o.vs30_nodata_patch, "Put a nodata patch over part of the second zone");
  app.add_option("--garbage", o.garbage_rate, "Fraction of mock responses forced unparseable");
  app.add_flag("--bank", o.demonstration_bank, "Write a demonstration bank from a second event");
  app.add_option("--endpoint", o.model_endpoint, "Live chat-completions endpoint instead of the mock");
  app.add_option("--model", o.model_id, "Model id for the live endpoint");
  app.add_option("--api-key-env", o.api_key_env, "Environment variable holding the API key");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto info = quakesense::write_scenario(dir, o);
    fmt::print("{}\n", info.config.string());
    return 0;
  } catch (const quakesense::Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return quakesense::exit_code(e.kind());
  }
}
