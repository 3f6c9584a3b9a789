#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <utility>
#include <vector>

#include "fsgcd/data_model.hpp"
#include "fsgcd/encoder.hpp"
#include "fsgcd/types.hpp"

namespace fsgcd {

struct PseudoLabel {
  std::int32_t label;
  std::size_t anchor;  // labeled sample whose retrieval produced this label
  double cosine;
};

// Nearest-neighbor table over one epoch's embedding snapshot. Built once and
// never mutated.
struct AffinityIndex {
  Matrix embeddings;
  std::vector<std::size_t> nn_of;
  std::vector<double> nn_cosine;
  std::map<std::size_t, PseudoLabel> pseudo_labels;  // unlabeled id -> inherited label

  std::size_t size() const { return nn_of.size(); }
};

// Labeled anchors retrieve the most cosine-similar unlabeled sample; unlabeled
// anchors retrieve over every other sample. Ties go to the lowest id. When
// anchors of different classes retrieve the same sample, the higher cosine
// wins (lowest anchor id on ties).
AffinityIndex build_affinity_index(const Matrix& embeddings, const DatasetSplit& split,
                                   std::span<const std::int32_t> labels, std::size_t workers = 1);

// Encodes every sample with the given params, then builds the index.
AffinityIndex build_affinity_index(const FeatureSet& fs, const DatasetSplit& split, const EncoderParams& params,
                                   std::size_t workers = 1);

struct Neighbor {
  std::size_t id;
  Vector embedding;
};

Neighbor retrieve(const AffinityIndex& index, std::size_t id);

// {labeled} u {pseudo-labeled}, sorted by id.
std::vector<std::pair<std::size_t, std::int32_t>> augmented_labeled_set(const AffinityIndex& index,
                                                                        const DatasetSplit& split,
                                                                        std::span<const std::int32_t> labels);

// id,nn_id,cosine,pseudo_label (-1 when none)
void write_affinity_csv(const AffinityIndex& index, std::ostream& out);

}  // namespace fsgcd
