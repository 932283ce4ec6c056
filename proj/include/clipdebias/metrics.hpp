#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "clipdebias/error.hpp"
#include "clipdebias/manifest.hpp"

namespace clipdebias {

struct Partition {
  std::vector<long> labels;

  std::size_t size() const { return labels.size(); }
};

namespace detail {

inline double choose2(std::int64_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

inline double population_std(std::span<const double> xs) {
  // exact zero for constant input; the rounded mean can otherwise leave a residue
  if (xs.empty() || std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace detail

// Hubert-Arabie adjusted Rand index from the contingency table. Two trivial
// partitions (both one block, or both all singletons) give 0.
inline double adjusted_rand_index(const Partition& p1, const Partition& p2) {
  if (p1.size() != p2.size()) {
    throw DomainError("metrics: ARI of partitions with " + std::to_string(p1.size()) + " and " +
                      std::to_string(p2.size()) + " samples");
  }
  const auto n = static_cast<std::int64_t>(p1.size());
  if (n < 2) return 0.0;
  std::map<std::pair<long, long>, std::int64_t> cells;
  std::map<long, std::int64_t> rows, cols;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    ++cells[{p1.labels[i], p2.labels[i]}];
    ++rows[p1.labels[i]];
    ++cols[p2.labels[i]];
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, c] : cells) index += detail::choose2(c);
  for (const auto& [key, c] : rows) sum_a += detail::choose2(c);
  for (const auto& [key, c] : cols) sum_b += detail::choose2(c);
  const double expected = sum_a * sum_b / detail::choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 0.0;
  return (index - expected) / (max_index - expected);
}

inline Partition attribute_partition(const Manifest& man, std::span<const std::size_t> rows) {
  Partition p;
  p.labels.reserve(rows.size());
  for (auto r : rows) {
    if (!man[r].attribute) {
      throw DataError("metrics: sample '" + man[r].id + "' has no attribute label");
    }
    p.labels.push_back(*man[r].attribute);
  }
  return p;
}

// (target, attribute) cells encoded as target * A + attribute.
inline Partition cell_partition(const Manifest& man, std::span<const std::size_t> rows) {
  const auto A = static_cast<long>(std::max<std::size_t>(1, man.num_attributes()));
  Partition p = attribute_partition(man, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) p.labels[i] += man[rows[i]].target * A;
  return p;
}

// ---------------------------------------------------------------------------
// Dataset bias diagnostics.

struct CorrelationReport {
  double mean_abs_r = 0.0;
  std::vector<double> r;        // per target class
  std::vector<double> p_value;  // two-sided, Student t with n-2 dof
};

namespace detail {

inline std::vector<const SampleRecord*> attributed(const Manifest& man, const char* op) {
  std::vector<const SampleRecord*> out;
  for (const auto& r : man) {
    if (r.attribute) out.push_back(&r);
  }
  if (out.empty()) throw DomainError(std::string("metrics: ") + op + " needs attribute labels");
  return out;
}

}  // namespace detail

// For each target class c, Pearson r between indicator(target == c) and the
// attribute value over all attributed samples; reports the mean |r|.
inline CorrelationReport attribute_target_correlation(const Manifest& man) {
  const auto recs = detail::attributed(man, "attribute_target_correlation");
  const std::size_t n = recs.size();
  const std::size_t T = man.num_targets();
  if (n < 3) throw DomainError("metrics: correlation needs at least 3 attributed samples");
  double mean_a = 0.0;
  for (const auto* r : recs) mean_a += *r->attribute;
  mean_a /= static_cast<double>(n);
  double var_a = 0.0;
  for (const auto* r : recs) var_a += (*r->attribute - mean_a) * (*r->attribute - mean_a);
  if (var_a == 0.0) throw DomainError("metrics: attribute column is constant");

  CorrelationReport rep;
  const boost::math::students_t dist(static_cast<double>(n - 2));
  for (std::size_t c = 0; c < T; ++c) {
    double mean_y = 0.0;
    for (const auto* r : recs) mean_y += (r->target == static_cast<int>(c)) ? 1.0 : 0.0;
    mean_y /= static_cast<double>(n);
    double cov = 0.0, var_y = 0.0;
    for (const auto* r : recs) {
      const double y = ((r->target == static_cast<int>(c)) ? 1.0 : 0.0) - mean_y;
      cov += y * (*r->attribute - mean_a);
      var_y += y * y;
    }
    if (var_y == 0.0) {
      throw DomainError("metrics: indicator of target class " + std::to_string(c) +
                        " is constant");
    }
    const double r = std::clamp(cov / std::sqrt(var_y * var_a), -1.0, 1.0);
    double p = 0.0;
    if (std::abs(r) < 1.0) {
      const double t = r * std::sqrt(static_cast<double>(n - 2) / (1.0 - r * r));
      p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    rep.r.push_back(r);
    rep.p_value.push_back(p);
  }
  double total = 0.0;
  for (double r : rep.r) total += std::abs(r);
  rep.mean_abs_r = total / static_cast<double>(rep.r.size());
  return rep;
}

// Population std of attribute-group sample proportions.
inline double representation_std(const Manifest& man) {
  const auto recs = detail::attributed(man, "representation_std");
  std::map<int, double> counts;
  for (const auto* r : recs) counts[*r->attribute] += 1.0;
  std::vector<double> props;
  for (const auto& [g, c] : counts) props.push_back(c / static_cast<double>(recs.size()));
  return detail::population_std(props);
}

// ---------------------------------------------------------------------------
// Group-wise accuracy and fairness summary.

struct GroupCell {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

// Keyed by (target class, attribute group).
using GroupAccuracyTable = std::map<std::pair<int, int>, GroupCell>;

// `predictions[i]` is the predicted class of the i-th sample of `split`, in
// manifest order.
inline GroupAccuracyTable group_accuracies(std::span<const int> predictions, const Manifest& man,
                                           Split split) {
  const auto rows = man.indices(split);
  if (predictions.size() != rows.size()) {
    throw DomainError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                      std::to_string(rows.size()) + " samples in split '" +
                      std::string(to_string(split)) + "'");
  }
  GroupAccuracyTable table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& rec = man[rows[i]];
    if (!rec.attribute) {
      throw DataError("metrics: split '" + std::string(to_string(split)) +
                      "' is missing the 'attribute' field (sample '" + rec.id + "')");
    }
    auto& cell = table[{rec.target, *rec.attribute}];
    ++cell.total;
    if (predictions[i] == rec.target) ++cell.correct;
  }
  return table;
}

struct FairnessSummary {
  double unbiased_acc = 0.0;
  double worst_group_acc = 0.0;
  double group_std = 0.0;
};

inline FairnessSummary fairness_summary(const GroupAccuracyTable& table) {
  if (table.empty()) throw DomainError("metrics: fairness summary of an empty table");
  std::vector<double> acc;
  for (const auto& [key, cell] : table) acc.push_back(cell.accuracy());
  FairnessSummary s;
  s.unbiased_acc = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  s.worst_group_acc = *std::min_element(acc.begin(), acc.end());
  s.group_std = detail::population_std(acc);
  return s;
}

inline double overall_accuracy(std::span<const int> predictions, std::span<const int> targets) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw DomainError("metrics: accuracy needs equal, non-empty prediction and target lists");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hit += predictions[i] == targets[i];
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------

// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DomainError("metrics: pearson needs two equal-length series of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("metrics: pearson of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace clipdebias
