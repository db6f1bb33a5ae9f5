#pragma once

#include "fviz/manifest.hpp"

namespace fviz {

struct RunOutcome {
  int exit_code = 0;
  std::string failed_stage;  // empty on success
  std::string message;
  std::string out_dir;
};

// Runs the full experiment described by the manifest: data, baseline,
// embedding reference, attack, score tables, reports, grids, summary.
// Partial artifacts are kept on failure and the failing stage is recorded
// in the outcome and the summary file.
RunOutcome run_pipeline(const RunManifest& manifest);

}  // namespace fviz
