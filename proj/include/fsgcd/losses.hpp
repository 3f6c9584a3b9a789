#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fsgcd/types.hpp"

namespace fsgcd {

struct LossComponents {
  bool asl = true;  // affinity supervised
  bool ucl = true;  // unsupervised contrastive
  bool ktl = true;  // knowledge transfer
  bool al = true;   // affinity
};

struct LossConfig {
  double margin_alpha = 0.3;
  double tau_s = 0.07;
  double tau_u = 1.0;
  double lambda = 0.35;
  // Adds the positives back into the supervised denominator (SupCon style).
  bool include_positives = false;
  LossComponents components;

  void validate() const;
};

// Scalar loss plus its gradient w.r.t. every row of the input matrix.
struct LossValue {
  double value = 0.0;
  Matrix grad;
  std::size_t terms = 0;    // anchors that contributed
  std::size_t skipped = 0;  // anchors skipped for lack of positives/negatives
};

struct TripletGrad {
  double value = 0.0;
  Vector anchor;
  Vector positive;
  Vector negative;
};

// max(|a - p|^2 - |a - n|^2 + alpha, 0) and its gradients.
TripletGrad triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                         double alpha);

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

// Mean of the triplet loss over the given row triplets.
LossValue triplet_batch_loss(const Matrix& rows, std::span<const Triplet> triplets, double alpha);

// Positive uniform among same-label rows (excluding the anchor), negative
// uniform among other-label rows. Anchors lacking either are skipped.
// Draw order per anchor: positive, then negative.
std::vector<Triplet> sample_known_triplets(std::span<const std::int32_t> labels, Rng& rng,
                                           std::size_t* skipped = nullptr);

// Known-class triplet loss over a labeled batch. Throws Degenerate when every
// anchor is skipped.
LossValue known_triplet_loss(const Matrix& embeddings, std::span<const std::int32_t> labels, double alpha, Rng& rng);

struct LabeledRow {
  std::size_t row;
  std::int32_t label;
};

// Supervised contrastive term over the labeled (true or pseudo) rows:
//   -1/|P| sum_p log( exp(v_i.v_p / tau) / sum_{n not in P, n != i} exp(v_i.v_n / tau) )
// averaged over anchors that have at least one positive and one non-positive.
// unlabeled_rows are the other in-batch features; they only ever appear in
// denominators.
LossValue affinity_supervised_loss(const Matrix& rows, std::span<const LabeledRow> members, double tau,
                                   bool include_positives = false, std::span<const std::size_t> unlabeled_rows = {});
LossValue affinity_supervised_loss(const Matrix& embeddings, std::span<const std::int32_t> labels, double tau,
                                   bool include_positives = false);

struct PartnerRow {
  std::size_t row;
  std::size_t partner_row;
};

// Negative for each anchor is uniform among the other members' rows.
std::vector<Triplet> sample_transfer_triplets(std::span<const PartnerRow> members, Rng& rng);
LossValue knowledge_transfer_loss(const Matrix& rows, std::span<const PartnerRow> members, double alpha, Rng& rng);

struct AffinityQuad {
  std::size_t row;
  std::size_t view_row;
  std::size_t partner_row;
  std::size_t partner_view_row;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// 1/(2b) sum [ (1 - sim(v, partner')) + (1 - sim(v', partner)) ].
LossValue affinity_loss(const Matrix& rows, std::span<const AffinityQuad> members);

struct ViewPair {
  std::size_t row;
  std::size_t view_row;
};

// -1/|b| sum_i log( exp(v_i.v_i' / tau) / sum_{j != i} exp(v_i.v_j / tau) ),
// with j running over the other members' original rows.
LossValue unsupervised_contrastive_loss(const Matrix& rows, std::span<const ViewPair> members, double tau);

// A stage-2 minibatch laid out as rows of one embedding matrix.
struct Batch {
  Matrix rows;
  std::vector<ViewPair> members;         // every batch member
  std::vector<LabeledRow> supervised;    // labeled and pseudo-labeled rows
  std::vector<AffinityQuad> unlabeled;   // unlabeled members with partners
};

struct TotalLoss {
  double value = 0.0;
  double asl = 0.0;
  double ucl = 0.0;
  double ktl = 0.0;
  double al = 0.0;
  bool asl_active = false;
  bool ucl_active = false;
  bool ktl_active = false;
  bool al_active = false;
  std::size_t asl_skipped = 0;
  Matrix grad;
};

// lambda * asl + (1 - lambda) * ucl + ktl + al. Components whose
// preconditions fail contribute 0; Degenerate is thrown only if none is active.
// The rng is consumed only by the transfer-triplet sampling.
TotalLoss total_loss(const Batch& batch, const LossConfig& cfg, Rng& rng);

}  // namespace fsgcd
