#include <gtest/gtest.h>

#include <random>

#include <boost/math/special_functions/beta.hpp>

#include "clipdebias/clipdebias.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace clipdebias;

namespace {

double ari(std::vector<long> a, std::vector<long> b) {
  return adjusted_rand_index(Partition{std::move(a)}, Partition{std::move(b)});
}

Manifest manifest_from_counts(const std::vector<std::vector<int>>& counts) {
  std::vector<fixtures::Row> rows;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    for (std::size_t a = 0; a < counts[t].size(); ++a) {
      for (int i = 0; i < counts[t][a]; ++i) {
        rows.push_back({Split::train, static_cast<int>(t), static_cast<int>(a)});
      }
    }
  }
  return fixtures::make_manifest(rows);
}

}  // namespace

TEST(Ari, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ari({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(ari({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(ari({0, 0, 0, 1, 1, 1}, {0, 0, 1, 1, 2, 2}), 0.242424, 1e-6);
}

TEST(Ari, TrivialPartitionsGiveZero) {
  EXPECT_EQ(ari({0, 0, 0}, {0, 0, 0}), 0.0);
  EXPECT_EQ(ari({0, 1, 2}, {0, 1, 2}), 0.0);
  EXPECT_EQ(ari({0}, {0}), 0.0);
  EXPECT_THROW(ari({0, 1}, {0}), DomainError);
}

TEST(Ari, MatchesPairCountingOracle) {
  std::mt19937 gen(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + gen() % 9;
    const auto p = oracle::random_partition(gen, n, 1 + static_cast<long>(gen() % 4));
    const auto q = oracle::random_partition(gen, n, 1 + static_cast<long>(gen() % 4));
    EXPECT_NEAR(ari(p, q), oracle::ari_by_pairs(p, q), 1e-12);
  }
}

TEST(Ari, SymmetryAndRelabeling) {
  std::mt19937 gen(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + gen() % 30;
    const auto p = oracle::random_partition(gen, n, 3);
    const auto q = oracle::random_partition(gen, n, 4);
    EXPECT_NEAR(ari(p, q), ari(q, p), 1e-12);
    std::vector<long> relabeled = p;
    for (auto& v : relabeled) v = 100 - 7 * v;
    EXPECT_NEAR(ari(relabeled, q), ari(p, q), 1e-12);
    std::set<long> blocks(p.begin(), p.end());
    if (blocks.size() > 1 && blocks.size() < n) EXPECT_NEAR(ari(p, p), 1.0, 1e-12);
  }
}

TEST(Correlation, IdenticalBinaryColumnsGiveOne) {
  const auto m = manifest_from_counts({{50, 0}, {0, 50}});
  EXPECT_NEAR(attribute_target_correlation(m).mean_abs_r, 1.0, 1e-12);
}

TEST(Correlation, IndependentAttributeIsNearZero) {
  std::mt19937 gen(31);
  std::bernoulli_distribution coin(0.5);
  std::vector<fixtures::Row> rows;
  for (int i = 0; i < 100000; ++i) rows.push_back({Split::train, coin(gen) ? 1 : 0, coin(gen) ? 1 : 0});
  const auto rep = attribute_target_correlation(fixtures::make_manifest(rows));
  // 3 sigma of r under independence is about 3 / sqrt(n) = 0.0095.
  EXPECT_LT(rep.mean_abs_r, 0.02);
  EXPECT_GT(rep.p_value[0], 1e-3);
}

TEST(Correlation, EngineeredJointHitsTarget) {
  // cells t/a: diag (1 + r) / 4, off-diag (1 - r) / 4, r = 0.49, n = 10000
  const auto m = manifest_from_counts({{3725, 1275}, {1275, 3725}});
  EXPECT_NEAR(attribute_target_correlation(m).mean_abs_r, 0.49, 1e-2);
}

TEST(Correlation, MatchesDirectPearsonAndSwapInvariance) {
  const auto m = manifest_from_counts({{30, 10}, {5, 55}});
  std::vector<double> y, a;
  for (const auto& r : m) {
    y.push_back(r.target == 0 ? 1.0 : 0.0);
    a.push_back(*r.attribute);
  }
  const auto rep = attribute_target_correlation(m);
  EXPECT_NEAR(rep.r[0], pearson(y, a), 1e-12);
  const auto swapped = manifest_from_counts({{10, 30}, {55, 5}});
  EXPECT_NEAR(attribute_target_correlation(swapped).mean_abs_r, rep.mean_abs_r, 1e-12);
}

TEST(Correlation, PValueMatchesTDistribution) {
  // two-sided Student-t tail written as a regularized incomplete beta:
  // p = I_{nu / (nu + t^2)}(nu / 2, 1 / 2), nu = n - 2 = 25
  const auto m = manifest_from_counts({{10, 3}, {3, 11}});
  const auto rep = attribute_target_correlation(m);
  const double r = rep.r[0];
  const double t = r * std::sqrt(25.0 / (1 - r * r));
  const double x = 25.0 / (25.0 + t * t);
  EXPECT_NEAR(rep.p_value[0], boost::math::ibeta(12.5, 0.5, x), 1e-10);
}

TEST(Correlation, ConstantColumnsAreDomainErrors) {
  EXPECT_THROW(attribute_target_correlation(manifest_from_counts({{10}, {10}})), DomainError);
  EXPECT_THROW(attribute_target_correlation(manifest_from_counts({{10, 10}})), DomainError);
  EXPECT_THROW(attribute_target_correlation(fixtures::make_manifest(
                   {{Split::train, 0, std::nullopt}, {Split::train, 1, std::nullopt}})),
               DomainError);
}

TEST(RepresentationStd, ClosedForms) {
  EXPECT_NEAR(representation_std(manifest_from_counts({{50, 50}})), 0.0, 1e-15);
  EXPECT_NEAR(representation_std(manifest_from_counts({{90, 10}})), 0.4, 1e-12);
  EXPECT_NEAR(representation_std(manifest_from_counts({{10, 10, 10}})), 0.0, 1e-15);
  EXPECT_THROW(representation_std(fixtures::make_manifest({{Split::train, 0, std::nullopt}})), DomainError);
}

TEST(GroupAccuracy, AllCorrect) {
  const auto m = manifest_from_counts({{3, 2}, {1, 4}});
  std::vector<int> preds;
  for (const auto& r : m) preds.push_back(r.target);
  for (const auto& [key, cell] : group_accuracies(preds, m, Split::train)) EXPECT_EQ(cell.accuracy(), 1.0);
}

TEST(GroupAccuracy, TargetedError) {
  const auto m = manifest_from_counts({{3, 2}, {4, 5}});
  std::vector<int> preds;
  for (const auto& r : m) preds.push_back(r.target == 1 && *r.attribute == 0 ? 0 : r.target);
  const auto t = group_accuracies(preds, m, Split::train);
  EXPECT_EQ(t.at({1, 0}).accuracy(), 0.0);
  EXPECT_EQ(t.at({0, 0}).accuracy(), 1.0);
  EXPECT_EQ(t.at({0, 1}).accuracy(), 1.0);
  EXPECT_EQ(t.at({1, 1}).accuracy(), 1.0);
}

TEST(GroupAccuracy, CountsPerCell) {
  const auto m = manifest_from_counts({{10, 10}, {10, 10}});
  const std::map<std::pair<int, int>, int> wrong = {{{0, 0}, 1}, {{0, 1}, 2}, {{1, 0}, 0}, {{1, 1}, 5}};
  std::map<std::pair<int, int>, int> used;
  std::vector<int> preds;
  for (const auto& r : m) {
    const std::pair<int, int> key{r.target, *r.attribute};
    preds.push_back(used[key]++ < wrong.at(key) ? 1 - r.target : r.target);
  }
  const auto t = group_accuracies(preds, m, Split::train);
  EXPECT_DOUBLE_EQ(t.at({0, 0}).accuracy(), 0.9);
  EXPECT_DOUBLE_EQ(t.at({0, 1}).accuracy(), 0.8);
  EXPECT_DOUBLE_EQ(t.at({1, 0}).accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(t.at({1, 1}).accuracy(), 0.5);
  EXPECT_EQ(t.at({0, 1}).correct, 8u);
}

TEST(GroupAccuracy, MissingAttributeNamesField) {
  const auto m = fixtures::make_manifest({{Split::test, 0, std::nullopt}, {Split::test, 1, std::nullopt}});
  try {
    group_accuracies(std::vector<int>{0, 1}, m, Split::test);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("attribute"), std::string::npos);
  }
  EXPECT_THROW(group_accuracies(std::vector<int>{0}, m, Split::test), DomainError);
}

namespace {

GroupAccuracyTable table_of(const std::vector<double>& acc) {
  GroupAccuracyTable t;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    t[{static_cast<int>(i), 0}] = {static_cast<std::size_t>(std::lround(acc[i] * 1000)), 1000};
  }
  return t;
}

}  // namespace

TEST(Fairness, WorkedExamples) {
  auto s = fairness_summary(table_of({0.9, 0.9}));
  EXPECT_DOUBLE_EQ(s.unbiased_acc, 0.9);
  EXPECT_DOUBLE_EQ(s.worst_group_acc, 0.9);
  EXPECT_DOUBLE_EQ(s.group_std, 0.0);
  s = fairness_summary(table_of({1.0, 0.5}));
  EXPECT_DOUBLE_EQ(s.unbiased_acc, 0.75);
  EXPECT_DOUBLE_EQ(s.worst_group_acc, 0.5);
  EXPECT_DOUBLE_EQ(s.group_std, 0.25);
  s = fairness_summary(table_of({0.8}));
  EXPECT_DOUBLE_EQ(s.unbiased_acc, 0.8);
  EXPECT_DOUBLE_EQ(s.worst_group_acc, 0.8);
  EXPECT_DOUBLE_EQ(s.group_std, 0.0);
  EXPECT_THROW(fairness_summary({}), DomainError);
}

TEST(Fairness, UnbiasedIsUnweightedMean) {
  GroupAccuracyTable t;
  t[{0, 0}] = {90, 100};
  t[{0, 1}] = {1, 2};
  EXPECT_DOUBLE_EQ(fairness_summary(t).unbiased_acc, 0.7);
}

TEST(Fairness, OrderingProperty) {
  std::mt19937 gen(3);
  std::uniform_int_distribution<int> acc(0, 1000);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> v(1 + gen() % 6);
    for (auto& x : v) x = acc(gen) / 1000.0;
    if (trial % 10 == 0) std::fill(v.begin(), v.end(), v[0]);
    const auto s = fairness_summary(table_of(v));
    EXPECT_LE(s.worst_group_acc, s.unbiased_acc + 1e-15);
    EXPECT_LE(s.unbiased_acc, *std::max_element(v.begin(), v.end()) + 1e-15);
    const bool all_equal = std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    EXPECT_EQ(s.group_std == 0.0, all_equal);
  }
}

TEST(Ranks, SpearmanWithTies) {
  const std::vector<double> x = {1, 2, 2, 3};
  const auto r = average_ranks(x);
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 45}), 1.0, 1e-12);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0, 1e-12);
}
