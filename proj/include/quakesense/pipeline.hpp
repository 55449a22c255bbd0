#pragma once

// The pipeline steps behind the CLI subcommands. Each step writes its
// artifacts under <output_dir>/<step>/ together with a stamp.json recording
// the config section, input file hashes and predecessor stamp it was built
// from; an up-to-date step is reused unless forced.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "quakesense/config.hpp"

namespace quakesense {

enum class Step { Sample, Fuse, Simulate, Evaluate, Analyze, Export };

std::string_view to_string(Step s);

struct StepOutcome {
  Step step;
  bool reused = false;
  std::string summary;
};

struct PipelineOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress notes; silent when null
};

std::filesystem::path step_dir(const RunConfig& cfg, Step s);

StepOutcome cmd_sample(const RunConfig& cfg, const PipelineOptions& opts = {});
StepOutcome cmd_fuse(const RunConfig& cfg, const PipelineOptions& opts = {});
StepOutcome cmd_simulate(const RunConfig& cfg, const PipelineOptions& opts = {});
StepOutcome cmd_evaluate(const RunConfig& cfg, const PipelineOptions& opts = {});
StepOutcome cmd_analyze(const RunConfig& cfg, const PipelineOptions& opts = {});
StepOutcome cmd_export(const RunConfig& cfg, const PipelineOptions& opts = {});

// All six steps in order. If a step throws, a manifest with status "failed"
// is still written (unfinished samples counted as "aborted") before the
// error propagates.
std::vector<StepOutcome> cmd_run(const RunConfig& cfg, const PipelineOptions& opts = {});

// Runs sample and fuse once, then simulate..export for every sweep entry in
// <output_dir>/sweep/<name>/ with sample/ and fuse/ symlinked to the shared
// artifacts. Writes sweep/summary.txt and sweep/summary.json.
std::vector<StepOutcome> cmd_sweep(const RunConfig& cfg, const PipelineOptions& opts = {});

// Config for one sweep entry, as cmd_sweep builds it.
RunConfig sweep_variant(const RunConfig& base, const nlohmann::json& entry);

}  // namespace quakesense
