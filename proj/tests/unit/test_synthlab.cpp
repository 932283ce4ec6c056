#include <gtest/gtest.h>

#include <cmath>

#include "clipdebias/clipdebias.hpp"

using namespace clipdebias;

namespace {

SynthConfig small(std::size_t n = 10000) {
  SynthConfig c;
  c.n = n;
  return c;
}

// Global k-means on the score columns, k = number of groups, against the
// true attribute labels.
double score_cluster_ari(const SynthData& d, std::size_t groups, std::uint64_t seed) {
  const auto& s = d.scores;
  std::vector<double> pts(s.samples() * s.prompts());
  for (std::size_t j = 0; j < s.samples(); ++j) {
    for (std::size_t i = 0; i < s.prompts(); ++i) pts[j * s.prompts() + i] = s(i, j);
  }
  const auto km = kmeans(pts, s.prompts(), {groups, seed, 3});
  std::vector<std::size_t> all(d.dataset.size());
  std::iota(all.begin(), all.end(), 0);
  return adjusted_rand_index(Partition{{km.assignments.begin(), km.assignments.end()}},
                             attribute_partition(d.dataset.manifest(), all));
}

}  // namespace

TEST(GenSynthetic, Reproducible) {
  const auto a = gen_synthetic(small(2000));
  const auto b = gen_synthetic(small(2000));
  EXPECT_EQ(encode_embeddings(a.dataset.embeddings()), encode_embeddings(b.dataset.embeddings()));
  EXPECT_EQ(format_manifest(a.dataset.manifest()), format_manifest(b.dataset.manifest()));
  EXPECT_EQ(encode_embeddings(a.scores.to_embedding()), encode_embeddings(b.scores.to_embedding()));
  auto other = small(2000);
  other.seed = 1;
  EXPECT_NE(encode_embeddings(gen_synthetic(other).dataset.embeddings()),
            encode_embeddings(a.dataset.embeddings()));
}

TEST(GenSynthetic, EmpiricalJointWithinThreeSigma) {
  for (const auto& joint : {std::vector<double>{0.45, 0.05, 0.05, 0.45}, std::vector<double>{0.1, 0.2, 0.3, 0.4},
                            joint_with_correlation(0.49)}) {
    auto c = small(20000);
    c.joint = joint;
    const auto d = gen_synthetic(c);
    std::vector<double> counts(4, 0.0);
    for (const auto& r : d.dataset.manifest()) counts[static_cast<std::size_t>(r.target * 2 + *r.attribute)] += 1;
    for (std::size_t k = 0; k < 4; ++k) {
      const double n = static_cast<double>(c.n);
      const double sigma = std::sqrt(n * joint[k] * (1 - joint[k]));
      EXPECT_LE(std::abs(counts[k] - n * joint[k]), 3 * sigma) << "cell " << k;
    }
  }
}

TEST(GenSynthetic, SplitProportions) {
  const auto d = gen_synthetic(small(2000));
  EXPECT_EQ(d.dataset.indices(Split::train).size(), 1600u);
  EXPECT_EQ(d.dataset.indices(Split::val).size(), 200u);
  EXPECT_EQ(d.dataset.indices(Split::test).size(), 200u);
}

TEST(GenSynthetic, NoiselessScoresRecoverGroups) {
  auto c = small(2000);
  c.joint = {0.25, 0.25, 0.25, 0.25};
  c.score_noise_sigma = 0.0;
  EXPECT_DOUBLE_EQ(score_cluster_ari(gen_synthetic(c), 2, 0), 1.0);
}

TEST(GenSynthetic, OverwhelmingNoiseDestroysGroups) {
  auto c = small(10000);
  c.score_noise_sigma = 1e6;
  EXPECT_NEAR(score_cluster_ari(gen_synthetic(c), 2, 0), 0.0, 0.05);
}

TEST(GenSynthetic, ClusterAriNonIncreasingInNoise) {
  const std::vector<double> sigmas = {0.0, 0.3, 0.6, 1.0, 3.0};
  double prev = 2.0;
  for (double s : sigmas) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto c = small(4000);
      c.score_noise_sigma = s;
      c.seed = seed;
      total += score_cluster_ari(gen_synthetic(c), 2, seed);
    }
    const double mean = total / 5.0;
    EXPECT_LE(mean, prev + 1e-12) << "sigma " << s;
    prev = mean;
  }
}

TEST(GenSynthetic, EngineeredCorrelation) {
  auto c = small(20000);
  c.joint = joint_with_correlation(0.49);
  EXPECT_NEAR(attribute_target_correlation(gen_synthetic(c).dataset.manifest()).mean_abs_r, 0.49, 0.02);
}

TEST(GenSynthetic, InfeasibleConfigs) {
  auto c = small(100);
  c.joint = {0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(gen_synthetic(c), ConfigError);
  c.joint = {0.5, 0.5};
  EXPECT_THROW(gen_synthetic(c), ConfigError);
  c = small(100);
  c.dim = 3;
  EXPECT_THROW(gen_synthetic(c), ConfigError);
}

namespace {

Partition balanced_truth(std::size_t n) {
  Partition p;
  for (std::size_t i = 0; i < n; ++i) p.labels.push_back(static_cast<long>(i % 2));
  return p;
}

}  // namespace

TEST(Corrupt, ZeroFractionIsIdentity) {
  const auto t = balanced_truth(10000);
  EXPECT_EQ(corrupt_partition(t, 0.0, 5).labels, t.labels);
  EXPECT_DOUBLE_EQ(adjusted_rand_index(corrupt_partition(t, 0.0, 5), t), 1.0);
}

TEST(Corrupt, FullFractionIsIndependent) {
  const auto t = balanced_truth(10000);
  EXPECT_NEAR(adjusted_rand_index(corrupt_partition(t, 1.0, 5), t), 0.0, 0.03);
}

TEST(Corrupt, MonotoneInFraction) {
  const auto t = balanced_truth(10000);
  double prev = 2.0;
  for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    double m = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) m += adjusted_rand_index(corrupt_partition(t, r, s), t);
    m /= 5;
    EXPECT_LT(m, prev);
    prev = m;
  }
  const double mid = adjusted_rand_index(corrupt_partition(t, 0.5, 1), t);
  EXPECT_GT(mid, adjusted_rand_index(corrupt_partition(t, 1.0, 1), t));
  EXPECT_LT(mid, 1.0);
  EXPECT_THROW(corrupt_partition(t, 1.5, 0), DomainError);
}

TEST(Calibrate, Endpoints) {
  const auto t = balanced_truth(10000);
  EXPECT_EQ(calibrate_ari(t, 1.0, 0.02, 0), 0.0);
  const double r0 = calibrate_ari(t, 0.0, 0.02, 0);
  EXPECT_GT(r0, 0.8);
  EXPECT_LE(corrupted_ari(t, r0, 0), 0.02);
}

TEST(Calibrate, MidpointReproduces) {
  const auto t = balanced_truth(10000);
  const double r = calibrate_ari(t, 0.5, 0.02, 3);
  double m = 0.0;
  for (std::uint64_t s = 100; s < 110; ++s) m += adjusted_rand_index(corrupt_partition(t, r, s), t);
  EXPECT_GE(m / 10, 0.48);
  EXPECT_LE(m / 10, 0.52);
}

TEST(Calibrate, UnreachableToleranceFails) {
  const auto t = balanced_truth(200);
  EXPECT_THROW(calibrate_ari(t, 0.5, 1e-15, 0), CalibrationError);
}

namespace {

TrainConfig fast_train() {
  TrainConfig c;
  c.epochs = 10;
  c.theta = 2;
  return c;
}

}  // namespace

TEST(Sweeps, ClusterSweepShape) {
  const auto res = run_cluster_sweep(small(2000), {2, 4}, {0, 1}, fast_train());
  ASSERT_EQ(res.rows.size(), 3u);
  EXPECT_TRUE(res.rows[0].baseline);
  EXPECT_EQ(res.rows[1].label, "K=2");
  for (const auto& row : res.rows) {
    EXPECT_EQ(row.succeeded, 2u);
    for (const auto& o : row.seeds) EXPECT_TRUE(o.simplex_ok);
  }
  EXPECT_THROW(run_cluster_sweep(small(2000), {3}, {0}, fast_train()), ConfigError);
}

TEST(Sweeps, OneClusterPerClassIsClassBalancedSampling) {
  // K = T groups are exactly the target classes.
  const auto d = gen_synthetic(small(2000));
  const auto g = build_pseudo_groups(d.dataset, d.scores, 2, 0);
  const auto cls = class_grouping(d.dataset);
  const auto ga = g.cluster_of_rows(d.dataset.size());
  const auto ca = cls.cluster_of_rows(d.dataset.size());
  Partition a, b;
  for (auto r : d.dataset.indices(Split::train)) {
    a.labels.push_back(ga[r]);
    b.labels.push_back(ca[r]);
  }
  EXPECT_EQ(g.samples().size(), cls.samples().size());
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, b), 1.0);
}

TEST(Sweeps, AriSweepRecordsMeasuredAri) {
  const auto res = run_ari_sweep(small(2000), {1.0, 0.0}, {0}, fast_train());
  ASSERT_EQ(res.rows.size(), 3u);
  EXPECT_NEAR(*res.rows[1].seeds[0].measured_ari, 1.0, 1e-12);
  EXPECT_NEAR(*res.rows[2].seeds[0].measured_ari, 0.0, 0.05);
}

TEST(Sweeps, ThetaSweepAnnotatesBand) {
  auto t = fast_train();
  t.epochs = 6;
  const auto res = run_theta_sweep(small(2000), {1, 3, 6}, {0}, t);
  ASSERT_EQ(res.rows.size(), 4u);
  ASSERT_EQ(res.annotations.size(), 2u);
  EXPECT_NE(res.annotations[0].find("best-theta band"), std::string::npos);
  EXPECT_NE(res.annotations[1].find("[3, 10]"), std::string::npos);
  const auto text = format_sweep(res);
  EXPECT_EQ(text.rfind("# ", 0), 0u);
  t.epochs = 2;
  EXPECT_THROW(run_theta_sweep(small(2000), {1, 3}, {0}, t), ConfigError);
}

TEST(Sweeps, ThreadCountDoesNotChangeResults) {
  SweepOptions one, many;
  one.threads = 1;
  many.threads = 4;
  const auto a = run_cluster_sweep(small(2000), {4}, {0, 1, 2}, fast_train(), one);
  const auto b = run_cluster_sweep(small(2000), {4}, {0, 1, 2}, fast_train(), many);
  EXPECT_EQ(format_sweep(a), format_sweep(b));
}
