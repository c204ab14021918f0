#include "geca/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"

#include "geca/classifier.hpp"
#include "geca/image_io.hpp"
#include "geca/mmd.hpp"

namespace geca {

namespace fs = std::filesystem;

namespace {

Index pooling_grid(Index height, Index width) {
  for (Index g = 8; g > 1; --g)
    if (height % g == 0 && width % g == 0) return g;
  return 1;
}

std::string zero_pad(std::size_t i, int width = 3) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

LabeledDataset load_training_manifest(const RunConfig& config) {
  const std::string& manifest = config.text("data.manifest");
  if (manifest.empty()) throw ConfigError("data.manifest is not set");
  if (!fs::exists(manifest)) throw InputError("manifest not found: " + manifest);
  LabeledDataset d = load_manifest(manifest);
  if (d.empty()) throw InputError("manifest " + manifest + " lists no images");
  return d;
}

}  // namespace

LoadedModel load_model(const fs::path& checkpoint, const RunConfig& config) {
  if (!fs::exists(checkpoint)) throw InputError("checkpoint not found: " + checkpoint.string());
  LoadedModel m;
  m.state = load_train_state(checkpoint, nullptr, &m.header);
  try {
    const auto& run = m.header.at("run");
    m.schedule = build_schedule(parse_schedule_kind(run.at("schedule").get<std::string>()), run.at("T").get<int>());
    m.height = run.at("height").get<Index>();
    m.width = run.at("width").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact("checkpoint " + checkpoint.string() + " lacks run metadata: " + e.what());
  }
  if (const long steps = config.integer("sample.steps"); steps > 0 && steps != m.schedule.T) {
    auto r = respace(m.schedule, static_cast<int>(steps));
    m.schedule = std::move(r.schedule);
    m.timestep_map = std::move(r.timesteps);
  }
  return m;
}

SamplerConfig sampler_for(const LoadedModel& model, const RunConfig& config) {
  SamplerConfig c = config.sampler_config();
  c.timestep_map = model.timestep_map;
  c.validate(model.schedule.T);
  return c;
}

LabeledDataset cmd_toy(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  const long n = config.integer("toy.n"), size = config.integer("toy.size"), labels = config.integer("toy.labels");
  if (n < 1) throw ConfigError("toy.n must be positive");
  LabeledDataset d = make_toy_dataset(static_cast<std::size_t>(n), size, size, static_cast<int>(labels),
                                      config.uinteger("seed"), out_dir);
  const auto counts = d.label_counts();
  log << "wrote " << d.size() << " images to " << d.manifest.string() << "\nlabel counts:";
  for (std::size_t l = 0; l < counts.size(); ++l) log << ' ' << d.label_names[l] << '=' << counts[l];
  log << "\nhash " << std::hex << dataset_hash(d) << std::dec << '\n';
  return d;
}

double cmd_train(const RunConfig& config, const std::optional<fs::path>& resume, std::ostream& log) {
  const TrainConfig tc = config.train_config();
  const LabeledDataset data = load_training_manifest(config);
  const std::vector<TensorF> images = data.load_images();
  const std::vector<Label> labels = data.labels();
  const Index height = images[0].dim(0), width = images[0].dim(1), channels = images[0].dim(2);
  const ThetaConfig theta = config.theta_config(channels, static_cast<Index>(data.num_labels()));
  const fs::path out_dir = config.text("train.out_dir");
  fs::create_directories(out_dir);

  Rng rng(tc.seed);
  TrainState<float> state;
  if (resume) {
    if (!fs::exists(*resume)) throw InputError("checkpoint not found: " + resume->string());
    state = load_train_state(*resume, &rng);
    if (!(to_json(state.params.config) == to_json(theta)))
      throw ConfigError("checkpoint " + resume->string() + " was trained with a different model config");
    log << "resuming from step " << state.step << '\n';
  } else {
    state.params = ThetaParams<float>::init(theta, rng);
  }
  {
    std::ofstream(out_dir / "config.resolved") << config.dump();
  }
  log << "# resolved config\n" << config.dump() << "# " << images.size() << " images " << height << 'x' << width
      << 'x' << channels << ", " << state.params.parameter_count() << " parameters\n";

  const nlohmann::json run = {{"schedule", to_string(tc.schedule)}, {"T", tc.T}, {"height", height},
                              {"width", width}, {"config", config.dump()}};
  std::ofstream csv(out_dir / "train_log.csv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) csv << "step,loss,seconds\n";
  log << "step,loss,seconds\n";
  const auto start = std::chrono::steady_clock::now();
  double last = std::numeric_limits<double>::quiet_NaN();
  train<float>(images, labels, state, tc, rng, [&](long step, double loss) {
    last = loss;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream line;
    line << step << ',' << std::setprecision(6) << loss << ',' << std::fixed << std::setprecision(2) << secs << '\n';
    log << line.str() << std::flush;
    csv << line.str();
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0)
      save_train_state(out_dir / ("checkpoint_" + std::to_string(step) + ".geca"), state, &rng, run);
  });
  save_train_state(out_dir / "model.geca", state, &rng, run);
  log << "final loss " << last << " at step " << state.step << "; saved " << (out_dir / "model.geca").string() << '\n';
  return last;
}

std::vector<fs::path> cmd_sample(const RunConfig& config, const SampleRequest& request, std::ostream& log) {
  if (request.n < 1) throw ConfigError("--n must be positive");
  const LoadedModel model = load_model(request.checkpoint, config);
  SamplerConfig sc = sampler_for(model, config);
  const Label label = Label::parse(request.label);
  if (!label.is_null() && static_cast<Index>(label.size()) != model.state.params.config.num_labels)
    throw InputError("label " + request.label + " has " + std::to_string(label.size()) + " bits, model expects " +
                     std::to_string(model.state.params.config.num_labels));
  const std::uint64_t seed = sc.seed;
  const auto ext = model.state.params.config.layout.n_in == 3 ? ".ppm" : ".pgm";
  fs::create_directories(request.out_dir);

  nlohmann::json meta = {{"checkpoint", request.checkpoint.string()}, {"label", label.to_string()},
                         {"mode", to_string(sc.mode)},                 {"guidance", sc.guidance},
                         {"variant", to_string(sc.variant)},           {"T", model.schedule.T},
                         {"fire_rate", sc.fire_rate},                  {"images", nlohmann::json::array()}};
  std::vector<fs::path> written;
  for (int i = 0; i < request.n; ++i) {
    sc.seed = seed + static_cast<std::uint64_t>(i);
    fs::path file;
    if (request.sweep.size() > 1) {
      const auto imgs = m_sweep(model.state.params, label, model.height, model.width, sc, model.schedule, request.sweep);
      file = request.out_dir / ("sweep_" + zero_pad(static_cast<std::size_t>(i)) + ext);
      save_image(file, contact_sheet(imgs));
      meta["images"].push_back({{"file", file.filename().string()}, {"seed", sc.seed}, {"M", request.sweep}});
    } else {
      if (request.sweep.size() == 1) sc.updates = request.sweep[0];
      const TensorF img = sample(model.state.params, label, model.height, model.width, sc, model.schedule);
      file = request.out_dir / ("sample_" + zero_pad(static_cast<std::size_t>(i)) + ext);
      save_image(file, img);
      meta["images"].push_back({{"file", file.filename().string()}, {"seed", sc.seed}, {"M", sc.updates}});
    }
    log << "wrote " << file.string() << '\n';
    written.push_back(file);
  }
  std::ofstream(request.out_dir / "metadata.json") << meta.dump(2) << '\n';
  return written;
}

std::vector<std::pair<std::string, double>> cmd_ablate(const RunConfig& config, const fs::path& checkpoint,
                                                       const fs::path& out_csv, std::ostream& log) {
  const LoadedModel model = load_model(checkpoint, config);
  const LabeledDataset data = load_training_manifest(config);
  const auto n = static_cast<std::size_t>(std::min<long>(config.integer("ablate.n"), static_cast<long>(data.size())));
  if (n < 2) throw ConfigError("ablation needs at least 2 samples");
  const LabeledDataset real = subset(data, [&] {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }());
  const std::vector<TensorF> real_images = real.load_images();
  const Index grid = pooling_grid(model.height, model.width);
  const Eigen::MatrixXd real_features = pooled_features(real_images, grid);
  const std::vector<Label> labels = real.labels();
  const SamplerConfig base = sampler_for(model, config);
  constexpr std::size_t kBatch = 8;

  std::vector<std::pair<std::string, double>> rows;
  for (auto mode : {InheritanceMode::None, InheritanceMode::OutOnly, InheritanceMode::OutAndHidden,
                    InheritanceMode::HiddenOnly}) {
    SamplerConfig sc = base;
    sc.mode = mode;
    std::vector<TensorF> synth;
    for (std::size_t lo = 0; lo < n; lo += kBatch) {
      const std::size_t hi = std::min(n, lo + kBatch);
      sc.seed = base.seed + lo;
      Rng rng(sc.seed);
      const std::vector<Label> batch_labels(labels.begin() + static_cast<long>(lo), labels.begin() + static_cast<long>(hi));
      const TensorF out = sample_batch(model.state.params, batch_labels, model.height, model.width, sc, model.schedule, rng);
      const Index per = out.size() / out.dim(0);
      for (Index b = 0; b < out.dim(0); ++b)
        synth.emplace_back(Shape{out.dim(1), out.dim(2), out.dim(3)}, out.array().segment(b * per, per));
    }
    const double score = mmd_score(real_features, pooled_features(synth, grid));
    if (!std::isfinite(score)) throw SamplingError("non-finite MMD for mode " + to_string(mode), 0);
    log << to_string(mode) << ',' << score << '\n';
    rows.emplace_back(to_string(mode), score);
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  std::ofstream csv(out_csv);
  csv << "mode,mmd\n" << std::setprecision(9);
  for (const auto& [mode, score] : rows) csv << mode << ',' << score << '\n';
  return rows;
}

SynthesisReport cmd_expand(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                           std::ostream& log) {
  const long k = config.integer("expand.k");
  if (k < 1) throw ConfigError("expand.k must be at least 1 (got " + std::to_string(k) + ")");
  const LoadedModel model = load_model(checkpoint, config);
  const LabeledDataset data = load_training_manifest(config);
  if (static_cast<Index>(data.num_labels()) != model.state.params.config.num_labels)
    throw InputError("dataset label count does not match the checkpoint");
  const ExpansionPlan plan = plan_expansion(data, static_cast<int>(k));
  SynthesisOptions opts;
  opts.height = model.height;
  opts.width = model.width;
  opts.batch = config.integer("expand.batch");
  opts.threads = static_cast<int>(config.integer("expand.threads"));
  opts.log = [&log](const std::string& msg) { log << msg << '\n'; };
  SynthesisReport report = synthesize(plan, model.state.params, sampler_for(model, config), model.schedule, opts, out_dir);
  report.dataset.label_names = data.label_names;

  LabeledDataset augmented = merge(data, report.dataset);
  save_manifest(augmented, out_dir / "augmented.csv");
  const auto planned = plan.label_counts(), got = report.dataset.label_counts(), orig = data.label_counts();
  log << "label,original,planned,synthesized\n";
  for (std::size_t l = 0; l < planned.size(); ++l)
    log << data.label_names[l] << ',' << orig[l] << ',' << planned[l] << ',' << got[l] << '\n';
  log << "synthetic manifest " << (out_dir / "manifest.csv").string() << ", augmented manifest "
      << (out_dir / "augmented.csv").string() << " (" << augmented.size() << " items)\n";
  return report;
}

ClassificationResult cmd_classify(const RunConfig& config, const std::optional<fs::path>& synthetic,
                                  const fs::path& out_csv, std::ostream& log) {
  const LabeledDataset data = load_training_manifest(config);
  const std::uint64_t seed = config.uinteger("seed");
  LabeledDataset train_pool, test;
  if (const std::string& t = config.text("data.test_manifest"); !t.empty()) {
    if (!fs::exists(t)) throw InputError("manifest not found: " + t);
    train_pool = subset(data, [&] {
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), 0);
      return idx;
    }());
    test = load_manifest(t);
  } else {
    const auto [test_idx, train_idx] = random_split(data.size(), config.real("classify.test_fraction"), seed);
    train_pool = subset(data, train_idx);
    test = subset(data, test_idx);
  }
  if (test.size() < 2) throw InputError("classification needs a test set of at least 2 items");

  std::optional<LabeledDataset> syn;
  if (synthetic) {
    if (!fs::exists(*synthetic)) throw InputError("manifest not found: " + synthetic->string());
    syn = load_manifest(*synthetic);
    if (syn->num_labels() != data.num_labels() && !syn->empty())
      throw InputError("synthetic manifest label count differs from the training data");
  }
  const std::vector<TensorF> pool_images = train_pool.load_images(), test_images = test.load_images();
  const std::vector<Label> pool_labels = train_pool.labels(), test_labels = test.labels();
  std::vector<TensorF> syn_images;
  std::vector<Label> syn_labels;
  if (syn) syn_images = syn->load_images(), syn_labels = syn->labels();

  ClassifierConfig cc = config.classifier_config(pool_images[0].dim(2), static_cast<Index>(data.num_labels()));
  const long repeats = config.integer("classify.repeats");
  if (repeats < 1) throw ConfigError("classify.repeats must be positive");
  std::vector<MetricsRecord> base_runs, aug_runs;
  for (long r = 0; r < repeats; ++r) {
    cc.seed = seed + static_cast<std::uint64_t>(r);
    const auto [val_idx, tr_idx] = random_split(pool_images.size(), config.real("classify.val_fraction"), cc.seed);
    std::vector<TensorF> tr_x, val_x;
    std::vector<Label> tr_y, val_y;
    for (auto i : tr_idx) tr_x.push_back(pool_images[i]), tr_y.push_back(pool_labels[i]);
    for (auto i : val_idx) val_x.push_back(pool_images[i]), val_y.push_back(pool_labels[i]);

    const auto base = train_classifier(tr_x, tr_y, val_x, val_y, cc);
    base_runs.push_back(evaluate(base, test_images, test_labels));
    log << "repeat " << r << " baseline   " << metrics_csv_row(base_runs.back()) << '\n';
    if (syn) {
      tr_x.insert(tr_x.end(), syn_images.begin(), syn_images.end());
      tr_y.insert(tr_y.end(), syn_labels.begin(), syn_labels.end());
      const auto aug = train_classifier(tr_x, tr_y, val_x, val_y, cc);
      aug_runs.push_back(evaluate(aug, test_images, test_labels));
      log << "repeat " << r << " augmented  " << metrics_csv_row(aug_runs.back()) << '\n';
    }
  }
  ClassificationResult result{average(base_runs), {}};
  if (syn) result.augmented = average(aug_runs);
  for (const auto& w : result.baseline.warnings) log << "warning: " << w << '\n';

  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  std::ofstream csv(out_csv);
  csv << "setting," << kMetricsHeader << '\n' << "baseline," << metrics_csv_row(result.baseline) << '\n';
  if (result.augmented) csv << "augmented," << metrics_csv_row(*result.augmented) << '\n';
  fs::path per_label = out_csv;
  per_label.replace_filename(out_csv.stem().string() + "_per_label.csv");
  std::ofstream pl(per_label);
  pl << "setting,label,Sen,Spe,AUC,F1,F1_sen_spe,AP\n" << std::fixed << std::setprecision(6);
  const auto emit = [&](const char* setting, const MetricsRecord& m) {
    for (std::size_t l = 0; l < m.per_label.size(); ++l) {
      const auto& x = m.per_label[l];
      pl << setting << ',' << data.label_names[l] << ',' << x.sensitivity << ',' << x.specificity << ',' << x.auc << ','
         << x.f1 << ',' << x.f1_sen_spe << ',' << x.ap << '\n';
    }
  };
  emit("baseline", result.baseline);
  if (result.augmented) emit("augmented", *result.augmented);
  log << "setting," << kMetricsHeader << "\nbaseline," << metrics_csv_row(result.baseline) << '\n';
  if (result.augmented) log << "augmented," << metrics_csv_row(*result.augmented) << '\n';
  return result;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Growing images with a diffusion-trained neural cellular automaton", "geca"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "key = value run configuration");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--seed", seed, "global seed");

  std::string out_path, checkpoint, resume, label = "null", m_list, manifest;
  std::optional<std::string> mode;
  std::optional<double> w;
  std::optional<long> t_steps, k, n;

  auto* toy = app.add_subcommand("toy", "render the procedural multi-label dataset");
  toy->add_option("--out", out_path, "output directory")->required();
  toy->add_option("--n", n, "number of images");

  auto* train_cmd = app.add_subcommand("train", "train the update rule");
  train_cmd->add_option("--manifest", manifest, "training manifest");
  train_cmd->add_option("--out", out_path, "checkpoint directory");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");

  auto* sample_cmd = app.add_subcommand("sample", "generate images");
  sample_cmd->add_option("--checkpoint", checkpoint)->required();
  sample_cmd->add_option("--label", label, "bit string such as 10100, or null");
  sample_cmd->add_option("--n", n, "number of images");
  sample_cmd->add_option("--mode", mode, "inheritance mode: none, out, out+h, h");
  sample_cmd->add_option("--w", w, "guidance scale");
  sample_cmd->add_option("--m", m_list, "cell updates per timestep; a list (6,12,24) renders a sweep");
  sample_cmd->add_option("--t", t_steps, "sampling timesteps (respaced from the training schedule)");
  sample_cmd->add_option("--out", out_path, "output directory");

  auto* ablate_cmd = app.add_subcommand("ablate", "MMD of samples under every inheritance mode");
  ablate_cmd->add_option("--checkpoint", checkpoint)->required();
  ablate_cmd->add_option("--manifest", manifest, "real images");
  ablate_cmd->add_option("--n", n, "samples per mode");
  ablate_cmd->add_option("--out", out_path, "CSV path");

  auto* expand_cmd = app.add_subcommand("expand", "synthesize a label-preserving expansion");
  expand_cmd->add_option("--checkpoint", checkpoint)->required();
  expand_cmd->add_option("--manifest", manifest, "original dataset");
  expand_cmd->add_option("--k", k, "expansion factor");
  expand_cmd->add_option("--out", out_path, "output directory")->required();

  auto* classify_cmd = app.add_subcommand("classify", "baseline vs augmented classifier metrics");
  classify_cmd->add_option("--manifest", manifest, "original training data");
  std::string test_manifest;
  classify_cmd->add_option("--test", test_manifest, "held-out manifest");
  std::string syn_manifest;
  classify_cmd->add_option("--synthetic", syn_manifest, "synthetic manifest to add to training");
  classify_cmd->add_option("--out", out_path, "metrics CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::ok : exit_code::bad_input;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& o : overrides) config.apply_override(o);
    if (seed) config.set("seed", std::to_string(*seed));
    if (!manifest.empty()) config.set("data.manifest", manifest);

    if (toy->parsed()) {
      if (n) config.set("toy.n", std::to_string(*n));
      cmd_toy(config, out_path, out);
    } else if (train_cmd->parsed()) {
      if (!out_path.empty()) config.set("train.out_dir", out_path);
      cmd_train(config, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), out);
    } else if (sample_cmd->parsed()) {
      if (mode) config.set("sample.mode", *mode);
      if (w) config.set("sample.guidance", std::to_string(*w));
      if (t_steps) config.set("sample.steps", std::to_string(*t_steps));
      SampleRequest req;
      req.checkpoint = checkpoint;
      req.label = label;
      req.n = n ? static_cast<int>(*n) : 1;
      if (!m_list.empty()) req.sweep = parse_int_list(m_list);
      if (!out_path.empty()) req.out_dir = out_path;
      parse_inheritance_mode(config.text("sample.mode"));
      cmd_sample(config, req, out);
    } else if (ablate_cmd->parsed()) {
      if (n) config.set("ablate.n", std::to_string(*n));
      cmd_ablate(config, checkpoint, out_path.empty() ? "ablation.csv" : out_path, out);
    } else if (expand_cmd->parsed()) {
      if (k) config.set("expand.k", std::to_string(*k));
      cmd_expand(config, checkpoint, out_path, out);
    } else if (classify_cmd->parsed()) {
      if (!test_manifest.empty()) config.set("data.test_manifest", test_manifest);
      cmd_classify(config, syn_manifest.empty() ? std::nullopt : std::optional<fs::path>(syn_manifest),
                   out_path.empty() ? "metrics.csv" : out_path, out);
    }
    return exit_code::ok;
  } catch (const CorruptArtifact& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::corrupt;
  } catch (const SamplingError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::numeric;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::numeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::bad_input;
  }
}

}  // namespace geca
