#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geca/checkpoint.hpp"
#include "geca/dataset.hpp"
#include "geca/expansion.hpp"
#include "geca/metrics.hpp"
#include "geca/run_config.hpp"

namespace geca {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int bad_input = 2;
inline constexpr int corrupt = 3;
inline constexpr int numeric = 4;
}  // namespace exit_code

/// Generator checkpoint plus the sampling setup it implies.
struct LoadedModel {
  TrainState<float> state;
  nlohmann::json header;
  NoiseSchedule schedule;  // training schedule, possibly respaced per sample.steps
  std::vector<int> timestep_map;
  Index height = 0;
  Index width = 0;
};

LoadedModel load_model(const std::filesystem::path& checkpoint, const RunConfig& config);
SamplerConfig sampler_for(const LoadedModel& model, const RunConfig& config);

LabeledDataset cmd_toy(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

/// Trains on data.manifest, writing checkpoints and `train_log.csv` to
/// train.out_dir. Returns the last batch loss.
double cmd_train(const RunConfig& config, const std::optional<std::filesystem::path>& resume, std::ostream& log);

struct SampleRequest {
  std::filesystem::path checkpoint;
  std::string label = "null";
  int n = 1;
  std::vector<int> sweep;  // more than one entry: contact sheet per image
  std::filesystem::path out_dir = "samples";
};

/// Image i uses seed + i. Writes images and `metadata.json`.
std::vector<std::filesystem::path> cmd_sample(const RunConfig& config, const SampleRequest& request, std::ostream& log);

/// MMD between real images of data.manifest and samples under each
/// inheritance mode, with identical seeds and labels for every mode.
std::vector<std::pair<std::string, double>> cmd_ablate(const RunConfig& config, const std::filesystem::path& checkpoint,
                                                       const std::filesystem::path& out_csv, std::ostream& log);

SynthesisReport cmd_expand(const RunConfig& config, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir, std::ostream& log);

struct ClassificationResult {
  MetricsRecord baseline;
  std::optional<MetricsRecord> augmented;
};

/// Baseline on data.manifest and, when `synthetic` is given, the same
/// training split plus every synthetic item, each averaged over
/// classify.repeats seeds. Writes `out_csv` and a per-label companion.
ClassificationResult cmd_classify(const RunConfig& config, const std::optional<std::filesystem::path>& synthetic,
                                  const std::filesystem::path& out_csv, std::ostream& log);

/// Full command-line front end; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace geca
