#pragma once

#include "vip/pipeline.hpp"
#include "vip/toy.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace vip {

// Exit codes: 0 ok, 1 runtime failure, 2 usage, 3 invalid configuration.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Plot-ready CSVs. Toy: counts.csv (arm,mode0..,ood) plus loss_<arm>.csv.
// Manifest: stage_metrics.csv, stage_counts.csv and loss_stage_<i>.csv, the
// latter copied from the run directory holding the manifest.
std::vector<std::filesystem::path> export_toy(const ToyReport& r, const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> export_manifest(const RunManifest& m, const std::filesystem::path& run_dir,
                                                   const std::filesystem::path& out_dir);
// Dispatches on the file content (manifest vs toy report).
std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& input,
                                                    const std::filesystem::path& out_dir);

}  // namespace vip
