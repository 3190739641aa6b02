#include "icp_audit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icp_audit/errors.hpp"
#include "icp_audit/rng.hpp"

namespace icp::metrics {

LabeledScores LabeledScores::from_classes(std::span<const double> members, std::span<const double> nonmembers) {
  LabeledScores ls;
  for (double s : members) ls.add(s, true);
  for (double s : nonmembers) ls.add(s, false);
  return ls;
}

std::size_t LabeledScores::n_pos() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
}

std::size_t LabeledScores::n_neg() const { return labels.size() - n_pos(); }

namespace {

void require_both_classes(const LabeledScores& ls) {
  if (ls.scores.size() != ls.labels.size()) throw ShapeError("scores and labels differ in length");
  for (double s : ls.scores) {
    if (std::isnan(s)) throw StatisticsError("NaN score");
  }
  if (ls.n_pos() == 0) throw StatisticsError("no member (positive) scores");
  if (ls.n_neg() == 0) throw StatisticsError("no nonmember (negative) scores");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Visits (neg_count, pos_count) at each distinct threshold, highest first.
template <typename F>
void sweep_thresholds(const LabeledScores& ls, F&& visit) {
  const auto idx = descending_order(ls.scores);
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double v = ls.scores[idx[i]];
    while (i < idx.size() && ls.scores[idx[i]] == v) {
      ls.labels[idx[i]] ? ++pos : ++neg;
      ++i;
    }
    visit(neg, pos);
  }
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0) throw StatisticsError("rank correlation undefined for a constant sequence");
  return sab / std::sqrt(saa * sbb);
}

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw StatisticsError("spearman inputs differ in length");
  if (xs.size() < 3) throw StatisticsError("spearman needs at least 3 points");
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

double auc(const LabeledScores& ls) {
  require_both_classes(ls);
  const auto ranks = average_ranks(ls.scores);
  double rank_sum = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ls.labels[i]) rank_sum += ranks[i];
  }
  const auto np = static_cast<double>(ls.n_pos());
  const auto nn = static_cast<double>(ls.n_neg());
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

double tpr_at_fpr(const LabeledScores& ls, double fpr_target) {
  require_both_classes(ls);
  const auto np = static_cast<double>(ls.n_pos());
  const auto nn = static_cast<double>(ls.n_neg());
  double best = 0;  // threshold +inf
  sweep_thresholds(ls, [&](std::size_t neg, std::size_t pos) {
    if (static_cast<double>(neg) / nn <= fpr_target) best = std::max(best, static_cast<double>(pos) / np);
  });
  return best;
}

std::vector<RocPoint> roc(const LabeledScores& ls) {
  require_both_classes(ls);
  const auto np = static_cast<double>(ls.n_pos());
  const auto nn = static_cast<double>(ls.n_neg());
  std::vector<RocPoint> curve{{0, 0}};
  sweep_thresholds(ls, [&](std::size_t neg, std::size_t pos) {
    RocPoint p{static_cast<double>(neg) / nn, static_cast<double>(pos) / np};
    if (!(p == curve.back())) curve.push_back(p);
  });
  if (!(curve.back() == RocPoint{1, 1})) curve.push_back({1, 1});
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

double spearman_permutation_pvalue(std::span<const double> xs, std::span<const double> ys,
                                   std::size_t n_permutations, std::uint64_t seed) {
  check_pair(xs, ys);
  const auto rx = average_ranks(xs);
  auto ry = average_ranks(ys);
  const double observed = std::abs(pearson(rx, ry));
  Rng rng(derive_seed(seed, 0x9e7));
  std::size_t extreme = 0;
  for (std::size_t i = 0; i < n_permutations; ++i) {
    shuffle(ry, rng);
    // relative slack so the identity permutation counts as extreme
    if (std::abs(pearson(rx, ry)) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(1 + n_permutations);
}

AttackReport evaluate(const LabeledScores& ls, std::span<const double> fpr_targets) {
  AttackReport r;
  r.auc = auc(ls);
  r.roc = roc(ls);
  r.n_pos = ls.n_pos();
  r.n_neg = ls.n_neg();
  for (double t : kDefaultFprTargets) r.tpr_at[t] = tpr_at_fpr(ls, t);
  for (double t : fpr_targets) r.tpr_at[t] = tpr_at_fpr(ls, t);
  return r;
}

}  // namespace icp::metrics
