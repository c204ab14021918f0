#include "geca/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "geca/errors.hpp"
#include "geca/image_io.hpp"

namespace geca {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv1a(std::uint64_t& h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

std::string manifest_text(const LabeledDataset& d) {
  bool any_synthetic = false;
  for (const auto& it : d.items) any_synthetic |= it.synthetic;
  std::ostringstream os;
  os << (any_synthetic ? "path,labels,synthetic\n" : "path,labels\n");
  for (const auto& it : d.items) {
    os << it.path.generic_string() << ',' << it.label.to_string();
    if (any_synthetic) os << ',' << (it.synthetic ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::size_t LabeledDataset::num_labels() const {
  if (!label_names.empty()) return label_names.size();
  return items.empty() ? 0 : items.front().label.size();
}

fs::path LabeledDataset::resolve(const DatasetItem& item) const {
  if (item.path.is_absolute() || manifest.empty()) return item.path;
  return manifest.parent_path() / item.path;
}

std::vector<long> LabeledDataset::label_counts() const {
  std::vector<long> counts(num_labels(), 0);
  for (const auto& it : items)
    for (std::size_t l = 0; l < it.label.size() && l < counts.size(); ++l) counts[l] += it.label.bits()[l];
  return counts;
}

std::map<std::string, long> LabeledDataset::combination_counts() const {
  std::map<std::string, long> counts;
  for (const auto& it : items) ++counts[it.label.to_string()];
  return counts;
}

std::vector<Label> LabeledDataset::labels() const {
  std::vector<Label> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.label);
  return out;
}

std::vector<TensorF> LabeledDataset::load_images() const {
  std::vector<TensorF> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    out.push_back(load_image(resolve(it)));
    require_shape(out.back().shape(), out.front().shape(), "dataset image");
  }
  return out;
}

void LabeledDataset::validate() const {
  const std::size_t L = num_labels();
  for (const auto& it : items) {
    if (it.label.is_null()) throw InputError("dataset item " + it.path.string() + " has a null label");
    if (it.label.size() != L)
      throw InputError("dataset item " + it.path.string() + " has " + std::to_string(it.label.size()) +
                       " label bits, expected " + std::to_string(L));
  }
}

LabeledDataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty manifest " + path.string());
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "path" || header[1] != "labels" ||
      (header.size() == 3 && header[2] != "synthetic") || header.size() > 3)
    throw InputError("manifest " + path.string() + " must start with 'path,labels[,synthetic]'");

  LabeledDataset d;
  d.manifest = path;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size())
      throw InputError("manifest " + path.string() + " line " + std::to_string(lineno) + ": wrong field count");
    DatasetItem item{f[0], Label::parse(f[1]), false};
    if (f.size() == 3) item.synthetic = f[2] == "1" || f[2] == "true";
    d.items.push_back(std::move(item));
  }
  const std::size_t L = d.items.empty() ? 0 : d.items.front().label.size();
  for (std::size_t l = 0; l < L; ++l) d.label_names.push_back("label" + std::to_string(l));
  d.validate();
  return d;
}

void save_manifest(LabeledDataset& dataset, const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  for (auto& it : dataset.items) {
    const fs::path full = fs::absolute(dataset.resolve(it));
    it.path = fs::proximate(full, fs::absolute(dir));
  }
  dataset.manifest = path;
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest " + path.string());
  out << manifest_text(dataset);
}

LabeledDataset merge(const LabeledDataset& a, const LabeledDataset& b) {
  if (!a.empty() && !b.empty() && a.num_labels() != b.num_labels())
    throw InputError("cannot merge datasets with different label counts");
  LabeledDataset out;
  out.label_names = a.label_names.empty() ? b.label_names : a.label_names;
  for (const auto* d : {&a, &b})
    for (const auto& it : d->items) out.items.push_back({fs::absolute(d->resolve(it)), it.label, it.synthetic});
  return out;
}

LabeledDataset subset(const LabeledDataset& dataset, const std::vector<std::size_t>& indices) {
  LabeledDataset out;
  out.label_names = dataset.label_names;
  for (std::size_t i : indices) {
    const auto& it = dataset.items.at(i);
    out.items.push_back({fs::absolute(dataset.resolve(it)), it.label, it.synthetic});
  }
  return out;
}

std::uint64_t dataset_hash(const LabeledDataset& dataset) {
  std::uint64_t h = kFnvOffset;
  const std::string text = manifest_text(dataset);
  fnv1a(h, text.data(), text.size());
  for (const auto& it : dataset.items) {
    std::ifstream in(dataset.resolve(it), std::ios::binary);
    if (!in) throw InputError("cannot open " + dataset.resolve(it).string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fnv1a(h, bytes.data(), bytes.size());
  }
  return h;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> random_split(std::size_t n, double first_fraction,
                                                                           std::uint64_t seed) {
  if (!(first_fraction >= 0.0 && first_fraction <= 1.0)) throw ConfigError("split fraction must lie in [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(first_fraction * static_cast<double>(n)));
  return {{idx.begin(), idx.begin() + static_cast<long>(cut)}, {idx.begin() + static_cast<long>(cut), idx.end()}};
}

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> kfold_split(std::size_t n, int k,
                                                                                       std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) throw ConfigError("k-fold needs 2 <= k <= n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = i % static_cast<std::size_t>(k);
    for (std::size_t g = 0; g < folds.size(); ++g) (g == f ? folds[g].second : folds[g].first).push_back(idx[i]);
  }
  return folds;
}

// Toy dataset

std::vector<std::string> toy_label_names(int num_labels) {
  static const char* names[kToyMaxLabels] = {"ring", "bar", "blob", "gradient", "checker"};
  if (num_labels < 1 || num_labels > kToyMaxLabels) throw ConfigError("toy dataset supports 1 to 5 labels");
  return {names, names + num_labels};
}

std::vector<std::uint8_t> toy_ring_band(Index height, Index width) {
  const double s = static_cast<double>(std::min(height, width));
  const double ci = 0.5 * static_cast<double>(height - 1), cj = 0.5 * static_cast<double>(width - 1);
  const double radius = 0.3 * s, half = std::max(0.6, 0.07 * s);
  std::vector<std::uint8_t> band(static_cast<std::size_t>(height * width), 0);
  for (Index i = 0; i < height; ++i)
    for (Index j = 0; j < width; ++j) {
      const double r = std::hypot(static_cast<double>(i) - ci, static_cast<double>(j) - cj);
      band[static_cast<std::size_t>(i * width + j)] = std::abs(r - radius) <= half;
    }
  return band;
}

TensorF render_toy_image(const Label& label, Index height, Index width, Rng& rng) {
  if (height < 8 || width < 8) throw ConfigError("toy images must be at least 8x8");
  if (label.is_null() || label.size() > kToyMaxLabels) throw InputError("toy label must have 1 to 5 bits");
  const auto on = [&](std::size_t l) { return l < label.size() && label.bits()[l]; };
  const double s = static_cast<double>(std::min(height, width));
  const double ci = 0.5 * static_cast<double>(height - 1), cj = 0.5 * static_cast<double>(width - 1);
  const auto ring = toy_ring_band(height, width);
  const Index bar_j0 = static_cast<Index>(std::floor(0.06 * s)), bar_j1 = bar_j0 + std::max<Index>(1, width / 8);
  const Index bar_i0 = height / 5, bar_i1 = height - height / 5;
  const Index patch = std::max<Index>(4, height / 4);
  const double blob_sigma = 0.08 * s;
  std::normal_distribution<float> jitter(0.0f, 0.03f);

  TensorF img({height, width, 1});
  for (Index i = 0; i < height; ++i)
    for (Index j = 0; j < width; ++j) {
      float v = kToyBase;
      if (on(3)) v += 0.25f * static_cast<float>(j) / static_cast<float>(width - 1);
      if (on(0) && ring[static_cast<std::size_t>(i * width + j)]) v = 0.9f;
      if (on(1) && j >= bar_j0 && j < bar_j1 && i >= bar_i0 && i < bar_i1) v = 0.5f;
      if (on(2)) {
        const double d2 = (static_cast<double>(i) - ci) * (static_cast<double>(i) - ci) +
                          (static_cast<double>(j) - cj) * (static_cast<double>(j) - cj);
        v += static_cast<float>(1.4 * std::exp(-d2 / (2.0 * blob_sigma * blob_sigma)));
      }
      if (on(4) && i >= height - patch && j >= width - patch) v = ((i + j) / 2) % 2 ? 0.6f : -0.2f;
      img.at({i, j, 0}) = std::clamp(v + jitter(rng), -1.0f, 1.0f);
    }
  return img;
}

LabeledDataset make_toy_dataset(std::size_t n, Index height, Index width, int num_labels, std::uint64_t seed,
                                const fs::path& out_dir) {
  LabeledDataset d;
  d.label_names = toy_label_names(num_labels);
  fs::create_directories(out_dir / "images");
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(num_labels));
    for (int l = 0; l < num_labels; ++l) bits[static_cast<std::size_t>(l)] = uniform01(rng) < kToySkew[l];
    const Label label = Label::from_bits(std::move(bits));
    std::ostringstream name;
    name << "images/toy_" << std::setw(5) << std::setfill('0') << k << ".pgm";
    save_image(out_dir / name.str(), render_toy_image(label, height, width, rng));
    d.items.push_back({name.str(), label, false});
  }
  d.manifest = out_dir / "manifest.csv";
  save_manifest(d, d.manifest);
  return d;
}

}  // namespace geca
