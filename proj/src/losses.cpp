#include "fsgcd/losses.hpp"

#include <cmath>
#include <set>
#include <limits>

#include "fsgcd/error.hpp"

namespace fsgcd {

namespace {

Eigen::Map<const Vector> as_vec(std::span<const double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

std::span<const double> row_span(const Matrix& m, std::size_t r) {
  return {m.data() + static_cast<Eigen::Index>(r) * m.cols(), static_cast<std::size_t>(m.cols())};
}

void check_row(const Matrix& rows, std::size_t r) {
  require(r < static_cast<std::size_t>(rows.rows()), ErrorCode::InvalidArgument,
          "row index " + std::to_string(r) + " out of range");
}

double log_sum_exp(const std::vector<double>& x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - hi);
  return hi + std::log(s);
}

std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

void LossConfig::validate() const {
  require(margin_alpha >= 0.0, ErrorCode::InvalidArgument, "margin alpha must be >= 0");
  require(tau_s > 0.0, ErrorCode::InvalidArgument, "tau_s must be > 0");
  require(tau_u > 0.0, ErrorCode::InvalidArgument, "tau_u must be > 0");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::InvalidArgument, "lambda must be in [0, 1]");
}

TripletGrad triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                         double alpha) {
  require(a.size() == p.size() && a.size() == n.size(), ErrorCode::ShapeMismatch, "triplet dimension mismatch");
  const auto av = as_vec(a);
  const auto pv = as_vec(p);
  const auto nv = as_vec(n);
  TripletGrad out;
  const double raw = (av - pv).squaredNorm() - (av - nv).squaredNorm() + alpha;
  const auto dim = static_cast<Eigen::Index>(a.size());
  if (raw > 0.0) {
    out.value = raw;
    out.anchor = 2.0 * (nv - pv);
    out.positive = -2.0 * (av - pv);
    out.negative = 2.0 * (av - nv);
  } else {
    out.anchor = Vector::Zero(dim);
    out.positive = Vector::Zero(dim);
    out.negative = Vector::Zero(dim);
  }
  return out;
}

LossValue triplet_batch_loss(const Matrix& rows, std::span<const Triplet> triplets, double alpha) {
  LossValue out;
  out.grad = Matrix::Zero(rows.rows(), rows.cols());
  if (triplets.empty()) return out;
  const double inv = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    check_row(rows, t.anchor);
    check_row(rows, t.positive);
    check_row(rows, t.negative);
    const auto g = triplet_loss(row_span(rows, t.anchor), row_span(rows, t.positive), row_span(rows, t.negative), alpha);
    out.value += g.value;
    out.grad.row(static_cast<Eigen::Index>(t.anchor)) += inv * g.anchor.transpose();
    out.grad.row(static_cast<Eigen::Index>(t.positive)) += inv * g.positive.transpose();
    out.grad.row(static_cast<Eigen::Index>(t.negative)) += inv * g.negative.transpose();
  }
  out.value *= inv;
  out.terms = triplets.size();
  return out;
}

std::vector<Triplet> sample_known_triplets(std::span<const std::int32_t> labels, Rng& rng, std::size_t* skipped) {
  std::vector<Triplet> triplets;
  std::size_t skip = 0;
  std::vector<std::size_t> same;
  std::vector<std::size_t> other;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    same.clear();
    other.clear();
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? same : other).push_back(j);
    }
    if (same.empty() || other.empty()) {
      ++skip;
      continue;
    }
    const std::size_t pos = same[uniform_index(same.size(), rng)];
    const std::size_t neg = other[uniform_index(other.size(), rng)];
    triplets.push_back({i, pos, neg});
  }
  if (skipped) *skipped = skip;
  return triplets;
}

LossValue known_triplet_loss(const Matrix& embeddings, std::span<const std::int32_t> labels, double alpha, Rng& rng) {
  require(labels.size() == static_cast<std::size_t>(embeddings.rows()), ErrorCode::ShapeMismatch,
          "label count does not match batch size");
  for (auto l : labels) require(l != kNoLabel, ErrorCode::InvalidArgument, "known triplet batch must be fully labeled");
  std::size_t skipped = 0;
  const auto triplets = sample_known_triplets(labels, rng, &skipped);
  require(!triplets.empty(), ErrorCode::Degenerate,
          "degenerate batch: no anchor has both a same-class positive and a different-class negative");
  LossValue out = triplet_batch_loss(embeddings, triplets, alpha);
  out.skipped = skipped;
  return out;
}

LossValue affinity_supervised_loss(const Matrix& rows, std::span<const LabeledRow> members, double tau,
                                   bool include_positives, std::span<const std::size_t> unlabeled_rows) {
  require(tau > 0.0, ErrorCode::InvalidArgument, "temperature must be > 0");
  LossValue out;
  out.grad = Matrix::Zero(rows.rows(), rows.cols());
  for (const auto& m : members) check_row(rows, m.row);
  for (auto r : unlabeled_rows) check_row(rows, r);

  // positives and denominator hold row indices into `rows`.
  struct Anchor {
    std::size_t index;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> denominator;
  };
  std::vector<Anchor> anchors;
  for (std::size_t i = 0; i < members.size(); ++i) {
    Anchor a{i, {}, {}};
    bool has_negative = !unlabeled_rows.empty();
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (j == i) continue;
      const bool positive = members[j].label == members[i].label;
      if (positive) a.positives.push_back(members[j].row);
      if (!positive) has_negative = true;
      if (!positive || include_positives) a.denominator.push_back(members[j].row);
    }
    a.denominator.insert(a.denominator.end(), unlabeled_rows.begin(), unlabeled_rows.end());
    if (a.positives.empty() || !has_negative) {
      ++out.skipped;
      continue;
    }
    anchors.push_back(std::move(a));
  }
  if (anchors.empty()) return out;

  const double inv_count = 1.0 / static_cast<double>(anchors.size());
  std::vector<double> logits;
  for (const auto& a : anchors) {
    const auto ri = static_cast<Eigen::Index>(members[a.index].row);
    const auto vi = rows.row(ri);
    const double inv_p = 1.0 / static_cast<double>(a.positives.size());
    double term = 0.0;
    for (auto p : a.positives) {
      const auto rp = static_cast<Eigen::Index>(p);
      term -= inv_p * vi.dot(rows.row(rp)) / tau;
      out.grad.row(ri) -= inv_count * inv_p / tau * rows.row(rp);
      out.grad.row(rp) -= inv_count * inv_p / tau * vi;
    }
    logits.clear();
    for (auto n : a.denominator) logits.push_back(vi.dot(rows.row(static_cast<Eigen::Index>(n))) / tau);
    const double lse = log_sum_exp(logits);
    term += lse;
    for (std::size_t k = 0; k < a.denominator.size(); ++k) {
      const auto rn = static_cast<Eigen::Index>(a.denominator[k]);
      const double w = std::exp(logits[k] - lse);
      out.grad.row(ri) += inv_count * w / tau * rows.row(rn);
      out.grad.row(rn) += inv_count * w / tau * vi;
    }
    out.value += inv_count * term;
  }
  out.terms = anchors.size();
  return out;
}

LossValue affinity_supervised_loss(const Matrix& embeddings, std::span<const std::int32_t> labels, double tau,
                                   bool include_positives) {
  require(labels.size() == static_cast<std::size_t>(embeddings.rows()), ErrorCode::ShapeMismatch,
          "label count does not match batch size");
  std::vector<LabeledRow> members;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kNoLabel) members.push_back({i, labels[i]});
  LossValue out = affinity_supervised_loss(embeddings, members, tau, include_positives);
  require(out.terms > 0, ErrorCode::Degenerate,
          "degenerate batch: no labeled anchor has both a positive and a non-positive");
  return out;
}

std::vector<Triplet> sample_transfer_triplets(std::span<const PartnerRow> members, Rng& rng) {
  std::vector<Triplet> triplets;
  triplets.reserve(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    // Uniform over the other members: draw from n - 1 slots and skip self.
    std::size_t j = uniform_index(members.size() - 1, rng);
    if (j >= i) ++j;
    triplets.push_back({members[i].row, members[i].partner_row, members[j].row});
  }
  return triplets;
}

LossValue knowledge_transfer_loss(const Matrix& rows, std::span<const PartnerRow> members, double alpha, Rng& rng) {
  require(members.size() >= 2, ErrorCode::Degenerate, "degenerate batch: knowledge transfer needs >= 2 unlabeled members");
  const auto triplets = sample_transfer_triplets(members, rng);
  return triplet_batch_loss(rows, triplets, alpha);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "cosine dimension mismatch");
  const auto av = as_vec(a);
  const auto bv = as_vec(b);
  const double na = av.norm();
  const double nb = bv.norm();
  require(na > 0.0 && nb > 0.0, ErrorCode::Degenerate, "zero-norm vector in cosine similarity");
  return av.dot(bv) / (na * nb);
}

namespace {

// Adds scale * d cos(a, b) to the gradient rows of a and b.
void add_cosine_grad(const Matrix& rows, std::size_t ra, std::size_t rb, double scale, Matrix& grad, double& cos_out) {
  const auto a = rows.row(static_cast<Eigen::Index>(ra));
  const auto b = rows.row(static_cast<Eigen::Index>(rb));
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorCode::Degenerate, "zero-norm vector in affinity loss");
  const double c = a.dot(b) / (na * nb);
  cos_out = c;
  grad.row(static_cast<Eigen::Index>(ra)) += scale * (b / (na * nb) - c * a / (na * na));
  grad.row(static_cast<Eigen::Index>(rb)) += scale * (a / (na * nb) - c * b / (nb * nb));
}

}  // namespace

LossValue affinity_loss(const Matrix& rows, std::span<const AffinityQuad> members) {
  LossValue out;
  out.grad = Matrix::Zero(rows.rows(), rows.cols());
  if (members.empty()) return out;
  const double inv = 1.0 / (2.0 * static_cast<double>(members.size()));
  for (const auto& m : members) {
    check_row(rows, m.row);
    check_row(rows, m.view_row);
    check_row(rows, m.partner_row);
    check_row(rows, m.partner_view_row);
    double c1 = 0.0;
    double c2 = 0.0;
    add_cosine_grad(rows, m.row, m.partner_view_row, -inv, out.grad, c1);
    add_cosine_grad(rows, m.view_row, m.partner_row, -inv, out.grad, c2);
    out.value += inv * ((1.0 - c1) + (1.0 - c2));
  }
  out.terms = members.size();
  return out;
}

LossValue unsupervised_contrastive_loss(const Matrix& rows, std::span<const ViewPair> members, double tau) {
  require(tau > 0.0, ErrorCode::InvalidArgument, "temperature must be > 0");
  require(members.size() >= 2, ErrorCode::Degenerate, "degenerate batch: contrastive loss needs >= 2 members");
  LossValue out;
  out.grad = Matrix::Zero(rows.rows(), rows.cols());
  const double inv = 1.0 / static_cast<double>(members.size());
  std::vector<double> logits;
  for (std::size_t i = 0; i < members.size(); ++i) {
    check_row(rows, members[i].row);
    check_row(rows, members[i].view_row);
  }
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto ri = static_cast<Eigen::Index>(members[i].row);
    const auto rv = static_cast<Eigen::Index>(members[i].view_row);
    const auto vi = rows.row(ri);
    double term = -vi.dot(rows.row(rv)) / tau;
    out.grad.row(ri) -= inv / tau * rows.row(rv);
    out.grad.row(rv) -= inv / tau * vi;
    logits.clear();
    for (std::size_t j = 0; j < members.size(); ++j)
      if (j != i) logits.push_back(vi.dot(rows.row(static_cast<Eigen::Index>(members[j].row))) / tau);
    const double lse = log_sum_exp(logits);
    term += lse;
    std::size_t k = 0;
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (j == i) continue;
      const auto rj = static_cast<Eigen::Index>(members[j].row);
      const double w = std::exp(logits[k++] - lse);
      out.grad.row(ri) += inv * w / tau * rows.row(rj);
      out.grad.row(rj) += inv * w / tau * vi;
    }
    out.value += inv * term;
  }
  out.terms = members.size();
  return out;
}

TotalLoss total_loss(const Batch& batch, const LossConfig& cfg, Rng& rng) {
  cfg.validate();
  TotalLoss out;
  out.grad = Matrix::Zero(batch.rows.rows(), batch.rows.cols());

  if (cfg.components.asl) {
    std::set<std::size_t> labeled_rows;
    for (const auto& m : batch.supervised) labeled_rows.insert(m.row);
    std::vector<std::size_t> contrast;
    for (const auto& m : batch.members)
      if (!labeled_rows.count(m.row)) contrast.push_back(m.row);
    const auto asl =
        affinity_supervised_loss(batch.rows, batch.supervised, cfg.tau_s, cfg.include_positives, contrast);
    out.asl_skipped = asl.skipped;
    if (asl.terms > 0) {
      out.asl_active = true;
      out.asl = asl.value;
      out.grad += cfg.lambda * asl.grad;
    }
  }
  if (cfg.components.ucl && batch.members.size() >= 2) {
    const auto ucl = unsupervised_contrastive_loss(batch.rows, batch.members, cfg.tau_u);
    out.ucl_active = true;
    out.ucl = ucl.value;
    out.grad += (1.0 - cfg.lambda) * ucl.grad;
  }
  if (cfg.components.ktl && batch.unlabeled.size() >= 2) {
    std::vector<PartnerRow> partners;
    partners.reserve(batch.unlabeled.size());
    for (const auto& u : batch.unlabeled) partners.push_back({u.row, u.partner_row});
    const auto ktl = knowledge_transfer_loss(batch.rows, partners, cfg.margin_alpha, rng);
    out.ktl_active = true;
    out.ktl = ktl.value;
    out.grad += ktl.grad;
  }
  if (cfg.components.al && !batch.unlabeled.empty()) {
    const auto al = affinity_loss(batch.rows, batch.unlabeled);
    out.al_active = true;
    out.al = al.value;
    out.grad += al.grad;
  }
  require(out.asl_active || out.ucl_active || out.ktl_active || out.al_active, ErrorCode::Degenerate,
          "degenerate batch: no loss component is applicable");
  out.value = cfg.lambda * out.asl + (1.0 - cfg.lambda) * out.ucl + out.ktl + out.al;
  return out;
}

}  // namespace fsgcd
