#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geca/label.hpp"
#include "geca/tensor.hpp"

namespace geca {

struct DatasetItem {
  std::filesystem::path path;  // relative paths resolve against the manifest directory
  Label label;
  bool synthetic = false;
};

/// Multi-label image collection backed by a `path,labels[,synthetic]` CSV manifest.
struct LabeledDataset {
  std::vector<DatasetItem> items;
  std::vector<std::string> label_names;
  std::filesystem::path manifest;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::size_t num_labels() const;

  std::filesystem::path resolve(const DatasetItem& item) const;
  std::vector<long> label_counts() const;
  /// Count per label combination, keyed by bit string.
  std::map<std::string, long> combination_counts() const;
  std::vector<Label> labels() const;
  std::vector<TensorF> load_images() const;

  /// Every label has L bits and no label is null.
  void validate() const;
};

LabeledDataset load_manifest(const std::filesystem::path& path);
void save_manifest(LabeledDataset& dataset, const std::filesystem::path& path);

/// Concatenation; paths are made absolute so the result can be saved anywhere.
LabeledDataset merge(const LabeledDataset& a, const LabeledDataset& b);
LabeledDataset subset(const LabeledDataset& dataset, const std::vector<std::size_t>& indices);

/// FNV-1a over the manifest text and every image's bytes, in manifest order.
std::uint64_t dataset_hash(const LabeledDataset& dataset);

/// Random disjoint split into two index lists with `first_fraction` of items in the first.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> random_split(std::size_t n, double first_fraction,
                                                                           std::uint64_t seed);

/// k shuffled folds; returns (train, held-out) index pairs.
std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> kfold_split(std::size_t n, int k,
                                                                                       std::uint64_t seed);

// Procedural toy dataset: grayscale images where attribute l toggles one
// structure (0 ring, 1 bar, 2 blob, 3 background gradient, 4 checker patch).

inline constexpr int kToyMaxLabels = 5;
inline constexpr double kToySkew[kToyMaxLabels] = {0.5, 0.3, 0.2, 0.1, 0.05};
inline constexpr float kToyBase = -0.8f;

std::vector<std::string> toy_label_names(int num_labels);

/// Cells covered by the ring attribute, as an [H x W] 0/1 mask.
std::vector<std::uint8_t> toy_ring_band(Index height, Index width);

TensorF render_toy_image(const Label& label, Index height, Index width, Rng& rng);

/// Writes `n` images plus `manifest.csv` into `out_dir`. Attribute l is on
/// with probability kToySkew[l], independently per image.
LabeledDataset make_toy_dataset(std::size_t n, Index height, Index width, int num_labels, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

}  // namespace geca
