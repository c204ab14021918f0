#pragma once

// Label-distribution-preserving dataset expansion with a trained generator.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "geca/dataset.hpp"
#include "geca/sampler.hpp"

namespace geca {

/// Synthetic items to generate, per label combination (bit string).
struct ExpansionPlan {
  int k = 5;
  std::size_t num_labels = 0;
  std::map<std::string, long> combinations;

  long total() const;
  std::vector<long> label_counts() const;
};

/// k * n_c items for every observed combination c with count n_c.
ExpansionPlan plan_expansion(const LabeledDataset& dataset, int k);

struct SynthesisOptions {
  Index height = 16;
  Index width = 16;
  Index batch = 8;     // trajectories sampled together
  int threads = 0;     // 0: hardware concurrency
  std::function<void(const std::string&)> log;
};

struct SynthesisReport {
  LabeledDataset dataset;  // synthetic items only, flagged
  long planned = 0;
  long failed = 0;
};

/// Samples every planned item and writes images plus `manifest.csv` into
/// `out_dir`. Batch b uses seed config.seed + b, so results do not depend on
/// the thread count. A batch whose trajectory fails is skipped and counted.
SynthesisReport synthesize(const ExpansionPlan& plan, const ThetaParams<float>& params, const SamplerConfig& config,
                           const NoiseSchedule& schedule, const SynthesisOptions& options,
                           const std::filesystem::path& out_dir);

}  // namespace geca
