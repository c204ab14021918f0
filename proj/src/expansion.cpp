#include "geca/expansion.hpp"

#include <atomic>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "geca/image_io.hpp"

namespace geca {

long ExpansionPlan::total() const {
  long n = 0;
  for (const auto& [combo, count] : combinations) n += count;
  return n;
}

std::vector<long> ExpansionPlan::label_counts() const {
  std::vector<long> counts(num_labels, 0);
  for (const auto& [combo, count] : combinations)
    for (std::size_t l = 0; l < combo.size() && l < counts.size(); ++l)
      if (combo[l] == '1') counts[l] += count;
  return counts;
}

ExpansionPlan plan_expansion(const LabeledDataset& dataset, int k) {
  if (k < 1) throw ConfigError("expansion factor k must be at least 1");
  if (dataset.empty()) throw InputError("cannot plan expansion of an empty dataset");
  dataset.validate();
  ExpansionPlan plan;
  plan.k = k;
  plan.num_labels = dataset.num_labels();
  for (const auto& [combo, count] : dataset.combination_counts()) plan.combinations[combo] = count * k;
  return plan;
}

SynthesisReport synthesize(const ExpansionPlan& plan, const ThetaParams<float>& params, const SamplerConfig& config,
                           const NoiseSchedule& schedule, const SynthesisOptions& options,
                           const std::filesystem::path& out_dir) {
  if (options.batch < 1) throw ConfigError("synthesis batch must be positive");
  config.validate(schedule.T);
  SynthesisReport report;
  report.planned = plan.total();

  std::vector<Label> queue;
  for (const auto& [combo, count] : plan.combinations)
    for (long i = 0; i < count; ++i) queue.push_back(Label::parse(combo));
  const auto batches = static_cast<std::size_t>((static_cast<Index>(queue.size()) + options.batch - 1) / options.batch);

  std::vector<std::vector<DatasetItem>> done(batches);
  std::atomic<std::size_t> next{0};
  std::atomic<long> failed{0};
  std::mutex log_mutex;
  const auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(msg);
  };

  const auto worker = [&] {
    for (std::size_t b = next++; b < batches; b = next++) {
      const std::size_t lo = b * static_cast<std::size_t>(options.batch);
      const std::size_t hi = std::min(queue.size(), lo + static_cast<std::size_t>(options.batch));
      const std::vector<Label> labels(queue.begin() + static_cast<long>(lo), queue.begin() + static_cast<long>(hi));
      SamplerConfig c = config;
      c.seed = config.seed + b;
      Rng rng(c.seed);
      try {
        const TensorF out = sample_batch(params, labels, options.height, options.width, c, schedule, rng);
        const Index per = options.height * options.width * params.config.layout.n_in;
        for (std::size_t i = lo; i < hi; ++i) {
          std::ostringstream name;
          name << "images/syn_" << std::setw(6) << std::setfill('0') << i << (params.config.layout.n_in == 3 ? ".ppm" : ".pgm");
          TensorF img({options.height, options.width, params.config.layout.n_in},
                      out.array().segment(static_cast<Index>(i - lo) * per, per));
          save_image(out_dir / name.str(), img);
          done[b].push_back({name.str(), queue[i], true});
        }
      } catch (const SamplingError& e) {
        failed += static_cast<long>(hi - lo);
        log("synthesis batch " + std::to_string(b) + " skipped: " + e.what());
      }
    }
  };

  std::filesystem::create_directories(out_dir / "images");
  unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads) : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(batches, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  for (auto& items : done)
    for (auto& it : items) report.dataset.items.push_back(std::move(it));
  report.dataset.label_names.resize(plan.num_labels);
  for (std::size_t l = 0; l < plan.num_labels; ++l) report.dataset.label_names[l] = "label" + std::to_string(l);
  report.dataset.manifest = out_dir / "manifest.csv";
  save_manifest(report.dataset, report.dataset.manifest);
  report.failed = failed;
  log("synthesized " + std::to_string(report.dataset.size()) + " of " + std::to_string(report.planned) +
      " planned items");
  return report;
}

}  // namespace geca
