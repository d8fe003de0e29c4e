#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "transunet/run_config.hpp"

namespace transunet {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitRuntime = 4,
};

// ConfigError -> 2, DataError -> 3, anything else -> 4.
int exit_code_for(const std::exception& e);

// Entry point behind the `transunet` executable. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Binary PPM of one slice: min-max scaled grey intensity, foreground labels
// blended with a per-class colour.
void write_overlay_ppm(const std::filesystem::path& path, const Tensor<float>& image,
                       const std::vector<std::uint8_t>& labels);

// Train/val cases for a run: loaded from data_dir or generated in memory,
// resampled to the model input size.
struct RunData {
  std::vector<EvalCase> train;
  std::vector<EvalCase> val;
};
RunData load_run_data(const RunConfig& config);

// What `eval` runs: cases of one split ("all" for every case) resampled to
// the model input size, predicted slice by slice.
MetricReport evaluate_directory(const std::filesystem::path& data_dir, const std::string& split,
                                const SlicePredictor& predictor, const ModelConfig& model);

}  // namespace transunet
