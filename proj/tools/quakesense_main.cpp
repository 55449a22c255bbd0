// quakesense: command-line front end for the pipeline steps.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "quakesense/config.hpp"
#include "quakesense/error.hpp"
#include "quakesense/pipeline.hpp"

namespace qs = quakesense;

int main(int argc, char** argv) {
  CLI::App app{"Earthquake intensity simulation from fused geospatial features and language models"};
  app.require_subcommand(1);

  std::string config;
  bool force = false;
  qs::ConfigOverrides ov;
  std::size_t rag_k = 0;
  std::uint64_t seed = 0;

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"sample", "Draw sample points inside every zone"},
      {"fuse", "Assemble per-sample features from the data sources"},
      {"simulate", "Prompt the model for every fused sample"},
      {"evaluate", "Aggregate predictions per zone and score against DYFI"},
      {"analyze", "TF-IDF of model reasoning and the distance/VS30 scatter export"},
      {"export", "Write the choropleth GeoJSON and run manifest"},
      {"run", "All steps in order"},
      {"sweep", "Shared sampling and fusion, then simulate..export per sweep entry"},
  };
  for (const auto& s : subs) {
    CLI::App* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sc->add_flag("--force", force, "Recompute even when the step's artifacts are up to date");
    sc->add_option("--ablate", ov.ablate, "Drop a prompt section (geospatial, building, socioeconomic, visual)")
        ->check(CLI::IsMember({"geospatial", "building", "socioeconomic", "visual"}));
    sc->add_flag("--redact-location", ov.redact_location, "Redact city, state and epicenter place names in prompts");
    sc->add_flag("--icl", ov.icl, "Embed the full MMI scale guide in the prompt");
    sc->add_option("--rag-k", rag_k, "Reference cases per prompt from the demonstration bank");
    sc->add_option("--seed", seed, "Sampling seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--rag-k") > 0) ov.rag_k = rag_k;
  if (chosen->count("--seed") > 0) ov.seed = seed;

  try {
    const qs::RunConfig cfg = qs::load_config(config, ov);
    const qs::PipelineOptions opts{force, &std::cerr};
    const std::string name = chosen->get_name();
    if (name == "run" || name == "sweep") {
      const auto outcomes = name == "run" ? qs::cmd_run(cfg, opts) : qs::cmd_sweep(cfg, opts);
      if (name == "sweep") fmt::print("{}\n", outcomes.back().summary);
      else fmt::print("run complete: {}\n", (cfg.output_dir / "export" / "manifest.json").string());
      return 0;
    }
    qs::StepOutcome out;
    if (name == "sample") out = qs::cmd_sample(cfg, opts);
    else if (name == "fuse") out = qs::cmd_fuse(cfg, opts);
    else if (name == "simulate") out = qs::cmd_simulate(cfg, opts);
    else if (name == "evaluate") out = qs::cmd_evaluate(cfg, opts);
    else if (name == "analyze") out = qs::cmd_analyze(cfg, opts);
    else out = qs::cmd_export(cfg, opts);
    fmt::print("{}\n", out.summary);
    return 0;
  } catch (const qs::Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return qs::exit_code(e.kind());
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 2;
  }
}
