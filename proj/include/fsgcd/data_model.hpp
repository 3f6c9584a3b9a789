#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsgcd/types.hpp"

namespace fsgcd {

// Backbone outputs with optional class labels. Row i of `features` is sample i.
struct FeatureSet {
  Matrix features;
  std::vector<std::int32_t> labels;  // kNoLabel when absent
  std::uint32_t class_count = 0;
  // Original external label strings, indexed by class id. Empty when the
  // source file already used integer ids.
  std::vector<std::string> label_names;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  bool fully_labeled() const;
  std::size_t labeled_count() const;

  // Throws Error(Format/NonFinite) when an invariant is broken.
  void validate() const;
};

// Binary "FSGF" files, or CSV when the path ends in ".csv".
FeatureSet load_features(const std::string& path);
void save_features(const FeatureSet& fs, const std::string& path);

FeatureSet load_features_binary(std::istream& in);
void save_features_binary(const FeatureSet& fs, std::ostream& out);
FeatureSet load_features_csv(std::istream& in);
void save_features_csv(const FeatureSet& fs, std::ostream& out);

struct DatasetSplit {
  std::vector<std::size_t> labeled_ids;    // ascending
  std::vector<std::size_t> unlabeled_ids;  // ascending
  std::vector<std::uint32_t> known_classes;
  std::vector<std::uint32_t> unknown_classes;
  double c_l = 0.0;  // realized |C_kwn| / |C|
  double p_l = 0.0;  // realized |X_l| / |X_kwn|
  double requested_c_l = 0.0;
  double requested_p_l = 0.0;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;
  std::uint32_t class_count = 0;

  // Few-shot regime: both ratios at most 0.2.
  bool is_fsgcd() const { return c_l <= 0.2 && p_l <= 0.2; }
  bool is_known(std::uint32_t cls) const;
  // Labels the trainer may see: the true label for labeled ids, kNoLabel otherwise.
  std::vector<std::int32_t> visible_labels(const FeatureSet& fs) const;

  void validate(const FeatureSet& fs) const;
};

// Known classes are the first ceil(c_l * |C|) class ids. Within each known
// class, max(1, round(p_l * n_k)) samples are labeled, uniformly by seed.
DatasetSplit generate_split(const FeatureSet& fs, double c_l, double p_l, std::uint64_t seed);

std::size_t known_class_count(std::uint32_t class_count, double c_l);

nlohmann::json split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j, const FeatureSet& fs);
void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path, const FeatureSet& fs);

struct AugmentConfig {
  double noise_sigma = 0.0;
  double dropout_prob = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;

  void validate() const;
};

// v' = mask * (s * v + eps). Draw order: s, then per coordinate (eps_d, mask_d).
Vector augment_view(std::span<const double> v, const AugmentConfig& cfg, Rng& rng);

struct SyntheticConfig {
  std::uint32_t class_count = 2;
  std::uint32_t samples_per_class = 10;
  std::uint32_t dimension = 2;
  double class_separation = 10.0;  // in units of within-class std-dev
  double within_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Gaussian mixture with centroids on a randomly rotated orthogonal frame, so
// every pair of centroids is exactly class_separation * within_std apart.
// Samples are grouped by class in id order.
FeatureSet make_synthetic(const SyntheticConfig& cfg);

}  // namespace fsgcd
