#include "fsgcd/affinity.hpp"

#include <limits>

#include "fsgcd/error.hpp"
#include "fsgcd/parallel.hpp"

namespace fsgcd {

AffinityIndex build_affinity_index(const Matrix& embeddings, const DatasetSplit& split,
                                   std::span<const std::int32_t> labels, std::size_t workers) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  require(split.sample_count == n, ErrorCode::ShapeMismatch, "split does not match embedding count");
  require(labels.size() == n, ErrorCode::ShapeMismatch, "label count does not match embedding count");
  require(!split.labeled_ids.empty(), ErrorCode::Degenerate, "affinity index needs a non-empty labeled pool");
  require(!split.unlabeled_ids.empty(), ErrorCode::Degenerate, "affinity index needs a non-empty unlabeled pool");
  require(embeddings.allFinite(), ErrorCode::NonFinite, "non-finite embeddings");

  AffinityIndex index;
  index.embeddings = embeddings;
  const Vector norms = embeddings.rowwise().norm();
  for (std::size_t i = 0; i < n; ++i)
    require(norms[static_cast<Eigen::Index>(i)] > 0.0, ErrorCode::Degenerate,
            "zero-norm embedding at id " + std::to_string(i));
  const Matrix unit = norms.cwiseInverse().asDiagonal() * embeddings;

  std::vector<char> is_labeled(n, 0);
  for (auto id : split.labeled_ids) is_labeled[id] = 1;

  index.nn_of.assign(n, 0);
  index.nn_cosine.assign(n, 0.0);
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  parallel_for(blocks, workers, [&](std::size_t block_begin, std::size_t block_end) {
    for (std::size_t b = block_begin; b < block_end; ++b) {
      const std::size_t lo = b * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      const Matrix sims = unit.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) *
                          unit.transpose();
      for (std::size_t i = lo; i < hi; ++i) {
        const auto r = static_cast<Eigen::Index>(i - lo);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_id = n;
        auto consider = [&](std::size_t j) {
          if (j == i) return;
          const double c = sims(r, static_cast<Eigen::Index>(j));
          if (c > best) {
            best = c;
            best_id = j;
          }
        };
        if (is_labeled[i]) {
          for (auto j : split.unlabeled_ids) consider(j);
        } else {
          for (std::size_t j = 0; j < n; ++j) consider(j);
        }
        require(best_id < n, ErrorCode::Degenerate, "no retrieval candidate for id " + std::to_string(i));
        index.nn_of[i] = best_id;
        index.nn_cosine[i] = best;
      }
    }
  });

  for (auto anchor : split.labeled_ids) {
    const auto target = index.nn_of[anchor];
    const PseudoLabel candidate{labels[anchor], anchor, index.nn_cosine[anchor]};
    auto [it, inserted] = index.pseudo_labels.emplace(target, candidate);
    // labeled_ids ascend, so an equal cosine keeps the lower anchor id.
    if (!inserted && candidate.cosine > it->second.cosine) it->second = candidate;
  }
  return index;
}

AffinityIndex build_affinity_index(const FeatureSet& fs, const DatasetSplit& split, const EncoderParams& params,
                                   std::size_t workers) {
  require(params.all_finite(), ErrorCode::NonFinite, "encoder parameters are not finite");
  const Matrix embeddings = encode_all(fs.features, params, workers);
  return build_affinity_index(embeddings, split, split.visible_labels(fs), workers);
}

Neighbor retrieve(const AffinityIndex& index, std::size_t id) {
  require(id < index.size(), ErrorCode::InvalidArgument, "unknown sample id " + std::to_string(id));
  const auto nn = index.nn_of[id];
  return {nn, index.embeddings.row(static_cast<Eigen::Index>(nn)).transpose()};
}

std::vector<std::pair<std::size_t, std::int32_t>> augmented_labeled_set(const AffinityIndex& index,
                                                                        const DatasetSplit& split,
                                                                        std::span<const std::int32_t> labels) {
  std::map<std::size_t, std::int32_t> merged;
  for (auto id : split.labeled_ids) merged.emplace(id, labels[id]);
  for (const auto& [id, pl] : index.pseudo_labels) merged.emplace(id, pl.label);
  return {merged.begin(), merged.end()};
}

void write_affinity_csv(const AffinityIndex& index, std::ostream& out) {
  out << "id,nn_id,cosine,pseudo_label\n";
  out.precision(17);
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto it = index.pseudo_labels.find(i);
    out << i << ',' << index.nn_of[i] << ',' << index.nn_cosine[i] << ','
        << (it == index.pseudo_labels.end() ? kNoLabel : it->second.label) << '\n';
  }
}

}  // namespace fsgcd
