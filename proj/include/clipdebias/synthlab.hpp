#pragma once

// Synthetic biased datasets and the simulation experiments built on them.
//
// Samples draw a (target, group) cell from a joint table. Embeddings are unit
// Gaussians around a cell mean: class c sits at separation/sqrt(2) along axis
// c, group a adds group_signal/sqrt(2) along axis T + a. A joint table that
// concentrates mass on the diagonal makes the group direction predictive of
// the target in training data, which is what hurts the off-diagonal cells.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "clipdebias/attribute_proxy.hpp"
#include "clipdebias/dataset.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/metrics.hpp"
#include "clipdebias/random.hpp"
#include "clipdebias/trainer.hpp"

namespace clipdebias {

struct SynthConfig {
  std::size_t n = 20000;
  std::size_t dim = 16;
  std::size_t targets = 2;
  std::size_t groups = 2;
  // targets x groups cell proportions, row-major.
  std::vector<double> joint = {0.45, 0.05, 0.05, 0.45};
  double separation = 3.0;
  double group_signal = 3.0;
  double score_noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (targets == 0 || groups == 0) throw ConfigError("synthlab: targets and groups must be >= 1");
    if (joint.size() != targets * groups) {
      throw ConfigError("synthlab: joint has " + std::to_string(joint.size()) + " entries, need " +
                        std::to_string(targets * groups));
    }
    double total = 0.0;
    for (double p : joint) {
      if (!(p >= 0.0)) throw ConfigError("synthlab: joint entries must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synthlab: joint must sum to 1");
    for (std::size_t t = 0; t < targets; ++t) {
      double row = 0.0;
      for (std::size_t a = 0; a < groups; ++a) row += joint[t * groups + a];
      if (row <= 0.0) {
        throw ConfigError("synthlab: target class " + std::to_string(t) + " has zero mass");
      }
    }
    if (n < targets * groups) throw ConfigError("synthlab: n must be >= targets * groups");
    if (dim < targets + groups) {
      throw ConfigError("synthlab: dim must be >= targets + groups (" +
                        std::to_string(targets + groups) + ")");
    }
    if (!(score_noise_sigma >= 0.0)) throw ConfigError("synthlab: score_noise_sigma must be >= 0");
  }
};

// Symmetric 2x2 joint whose attribute/target Pearson correlation is `r`.
inline std::vector<double> joint_with_correlation(double r) {
  const double diag = (r + 1.0) / 4.0;
  return {diag, 0.5 - diag, 0.5 - diag, diag};
}

struct SynthData {
  Dataset dataset;
  ScoreMatrix scores;  // groups x n
};

inline SynthData gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t T = cfg.targets, A = cfg.groups, D = cfg.dim;
  Rng cell_rng(derive_seed(cfg.seed, "synthlab.cells"));
  Rng feat_rng(derive_seed(cfg.seed, "synthlab.features"));
  Rng score_rng(derive_seed(cfg.seed, "synthlab.scores"));
  Rng split_rng(derive_seed(cfg.seed, "synthlab.splits"));

  std::vector<double> cdf(cfg.joint.size());
  std::partial_sum(cfg.joint.begin(), cfg.joint.end(), cdf.begin());
  std::vector<int> target(cfg.n), group(cfg.n);
  std::vector<std::size_t> per_target(T, 0);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double u = cell_rng.uniform() * cdf.back();
    auto cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    cell = std::min(cell, cdf.size() - 1);
    target[i] = static_cast<int>(cell / A);
    group[i] = static_cast<int>(cell % A);
    ++per_target[cell / A];
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (per_target[t] == 0) {
      throw ConfigError("synthlab: no sample drew target class " + std::to_string(t) +
                        "; increase n");
    }
  }

  const double class_offset = cfg.separation / std::sqrt(2.0);
  const double group_offset = cfg.group_signal / std::sqrt(2.0);
  std::vector<float> values(cfg.n * D);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double v = feat_rng.normal();
      if (j == static_cast<std::size_t>(target[i])) v += class_offset;
      if (j == T + static_cast<std::size_t>(group[i])) v += group_offset;
      values[i * D + j] = static_cast<float>(v);
    }
  }

  std::vector<float> scores(A * cfg.n);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const double ind = group[i] == static_cast<int>(a) ? 1.0 : 0.0;
      const double noisy = ind + cfg.score_noise_sigma * score_rng.normal();
      scores[a * cfg.n + i] = static_cast<float>(std::clamp(noisy, -1.0, 1.0));
    }
  }

  std::vector<std::size_t> perm(cfg.n);
  std::iota(perm.begin(), perm.end(), 0);
  split_rng.shuffle(perm.begin(), perm.end());
  const std::size_t n_train = cfg.n * 8 / 10;
  const std::size_t n_val = cfg.n / 10;
  std::vector<Split> split(cfg.n);
  for (std::size_t p = 0; p < cfg.n; ++p) {
    split[perm[p]] = p < n_train ? Split::train : (p < n_train + n_val ? Split::val : Split::test);
  }

  std::vector<SampleRecord> records(cfg.n);
  const int width = static_cast<int>(std::to_string(cfg.n).size());
  for (std::size_t i = 0; i < cfg.n; ++i) {
    std::string num = std::to_string(i);
    records[i].id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    records[i].split = split[i];
    records[i].target = target[i];
    records[i].attribute = group[i];
  }
  return SynthData{Dataset(EmbeddingMatrix(cfg.n, D, std::move(values)), Manifest(std::move(records))),
                   ScoreMatrix(A, cfg.n, std::move(scores))};
}

// Redraws the labels of a uniformly random floor(r * n)-subset uniformly over
// the distinct labels of `truth`.
inline Partition corrupt_partition(const Partition& truth, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("synthlab: corruption fraction must be in [0, 1]");
  Partition out = truth;
  const std::size_t n = truth.size();
  const auto m = static_cast<std::size_t>(std::floor(r * static_cast<double>(n)));
  if (m == 0 || n == 0) return out;
  const std::set<long> distinct(truth.labels.begin(), truth.labels.end());
  const std::vector<long> labels(distinct.begin(), distinct.end());
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
    out.labels[idx[i]] = labels[rng.index(labels.size())];
  }
  return out;
}

inline constexpr std::size_t kCalibrationDraws = 5;
inline constexpr std::size_t kCalibrationMaxIter = 40;

// Mean ARI(corrupt(truth, r), truth) over the fixed calibration draws.
inline double corrupted_ari(const Partition& truth, double r, std::uint64_t seed) {
  double total = 0.0;
  for (std::size_t d = 0; d < kCalibrationDraws; ++d) {
    total += adjusted_rand_index(corrupt_partition(truth, r, derive_seed(seed, "calibrate", d)), truth);
  }
  return total / static_cast<double>(kCalibrationDraws);
}

// Bisection for the corruption fraction whose mean ARI is within `tol` of
// `target_ari`. The same draws are reused at every step.
inline double calibrate_ari(const Partition& truth, double target_ari, double tol, std::uint64_t seed) {
  if (!(target_ari >= 0.0 && target_ari <= 1.0)) {
    throw DomainError("synthlab: target ARI must be in [0, 1]");
  }
  if (std::abs(corrupted_ari(truth, 0.0, seed) - target_ari) <= tol) return 0.0;
  if (std::abs(corrupted_ari(truth, 1.0, seed) - target_ari) <= tol) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (std::size_t it = 0; it < kCalibrationMaxIter; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double ari = corrupted_ari(truth, mid, seed);
    if (std::abs(ari - target_ari) <= tol) return mid;
    if (ari > target_ari) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw CalibrationError("synthlab: ARI " + std::to_string(target_ari) +
                         " not reached within tolerance " + std::to_string(tol));
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<FairnessSummary> test;
  std::optional<double> measured_ari;
  bool simplex_ok = true;
  std::string error;
};

struct SweepRow {
  std::string label;
  double value = std::numeric_limits<double>::quiet_NaN();
  bool baseline = false;
  std::vector<SeedOutcome> seeds;
  FairnessSummary mean;
  FairnessSummary std;
  std::size_t succeeded = 0;
};

struct SweepResult {
  std::string kind;
  std::vector<SweepRow> rows;
  std::vector<std::string> annotations;

  const SweepRow* baseline() const {
    for (const auto& r : rows) {
      if (r.baseline) return &r;
    }
    return nullptr;
  }
};

struct SweepOptions {
  std::size_t threads = 0;  // 0: hardware concurrency
  double ari_tolerance = 0.02;
};

namespace detail {

inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

inline void aggregate(SweepRow& row) {
  std::vector<double> u, w, s;
  for (const auto& o : row.seeds) {
    if (!o.test) continue;
    u.push_back(o.test->unbiased_acc);
    w.push_back(o.test->worst_group_acc);
    s.push_back(o.test->group_std);
  }
  row.succeeded = u.size();
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                     : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  row.mean = {mean(u), mean(w), mean(s)};
  row.std = {population_std(u), population_std(w), population_std(s)};
}

inline SeedOutcome run_cell(const Dataset& ds, const PseudoGrouping& g, TrainConfig cfg,
                            std::uint64_t seed) {
  SeedOutcome o;
  o.seed = seed;
  try {
    cfg.seed = derive_seed(seed, "synthlab.train");
    const TrainedModel m = train(ds, g, cfg);
    o.simplex_ok = history_on_simplex(m);
    o.test = evaluate_split(m.model, ds, Split::test).fairness;
  } catch (const Error& e) {
    o.error = e.what();
  }
  return o;
}

struct CellJob {
  std::size_t row;
  std::size_t slot;
  std::function<SeedOutcome()> run;
};

inline void run_jobs(SweepResult& res, std::vector<CellJob>& jobs, const SweepOptions& opts) {
  parallel_for(jobs.size(), opts.threads, [&](std::size_t i) {
    res.rows[jobs[i].row].seeds[jobs[i].slot] = jobs[i].run();
  });
  for (auto& row : res.rows) aggregate(row);
}

inline void add_baseline(SweepResult& res, std::vector<CellJob>& jobs, const Dataset& ds,
                         const std::vector<std::uint64_t>& seeds, TrainConfig cfg) {
  cfg.debias = false;
  SweepRow row;
  row.label = "no-intervention";
  row.baseline = true;
  row.seeds.resize(seeds.size());
  res.rows.push_back(std::move(row));
  const std::size_t r = res.rows.size() - 1;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    jobs.push_back({r, s, [&ds, cfg, seed = seeds[s]] {
                      return run_cell(ds, class_grouping(ds), cfg, seed);
                    }});
  }
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

}  // namespace detail

// Worst-group accuracy of debiased training against partitions of controlled
// ARI to the true attribute groups, plus a no-intervention row.
inline SweepResult run_ari_sweep(const SynthConfig& cfg, const std::vector<double>& ari_grid,
                                 const std::vector<std::uint64_t>& seeds, const TrainConfig& train_cfg,
                                 const SweepOptions& opts = {}) {
  if (ari_grid.empty() || seeds.empty()) throw ConfigError("synthlab: empty ARI grid or seed list");
  const SynthData data = gen_synthetic(cfg);
  const Dataset& ds = data.dataset;
  const auto& rows = ds.indices(Split::train);
  const Partition truth = attribute_partition(ds.manifest(), rows);

  SweepResult res;
  res.kind = "ari";
  std::vector<detail::CellJob> jobs;
  detail::add_baseline(res, jobs, ds, seeds, train_cfg);
  TrainConfig debias_cfg = train_cfg;
  debias_cfg.debias = true;
  for (std::size_t l = 0; l < ari_grid.size(); ++l) {
    SweepRow row;
    row.label = "ari=" + detail::fmt(ari_grid[l]);
    row.value = ari_grid[l];
    row.seeds.resize(seeds.size());
    std::optional<double> fraction;
    std::string calib_error;
    try {
      fraction = calibrate_ari(truth, ari_grid[l], opts.ari_tolerance,
                               derive_seed(cfg.seed, "synthlab.calibrate", l));
    } catch (const Error& e) {
      calib_error = e.what();
    }
    res.rows.push_back(std::move(row));
    const std::size_t r = res.rows.size() - 1;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      jobs.push_back({r, s, [&, fraction, calib_error, l, seed = seeds[s]] {
                        if (!fraction) {
                          SeedOutcome o;
                          o.seed = seed;
                          o.error = calib_error;
                          return o;
                        }
                        const Partition noisy =
                            corrupt_partition(truth, *fraction, derive_seed(seed, "synthlab.corrupt", l));
                        const PseudoGrouping g = grouping_from_labels(ds, rows, noisy.labels);
                        SeedOutcome o = detail::run_cell(ds, g, debias_cfg, seed);
                        o.measured_ari = adjusted_rand_index(noisy, truth);
                        return o;
                      }});
    }
  }
  detail::run_jobs(res, jobs, opts);
  return res;
}

// Debiased training with pseudo groups clustered from the synthetic scores at
// each K.
inline SweepResult run_cluster_sweep(const SynthConfig& cfg, const std::vector<std::size_t>& ks,
                                     const std::vector<std::uint64_t>& seeds,
                                     const TrainConfig& train_cfg, const SweepOptions& opts = {}) {
  if (ks.empty() || seeds.empty()) throw ConfigError("synthlab: empty K grid or seed list");
  for (auto k : ks) {
    if (k == 0 || k % cfg.targets != 0) {
      throw ConfigError("synthlab: K=" + std::to_string(k) + " is not a multiple of " +
                        std::to_string(cfg.targets) + " target classes");
    }
  }
  const SynthData data = gen_synthetic(cfg);
  const Dataset& ds = data.dataset;

  SweepResult res;
  res.kind = "cluster";
  std::vector<detail::CellJob> jobs;
  detail::add_baseline(res, jobs, ds, seeds, train_cfg);
  TrainConfig debias_cfg = train_cfg;
  debias_cfg.debias = true;
  for (auto k : ks) {
    SweepRow row;
    row.label = "K=" + std::to_string(k);
    row.value = static_cast<double>(k);
    row.seeds.resize(seeds.size());
    res.rows.push_back(std::move(row));
    const std::size_t r = res.rows.size() - 1;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      jobs.push_back({r, s, [&, k, seed = seeds[s]] {
                        SeedOutcome o;
                        o.seed = seed;
                        try {
                          const PseudoGrouping g = build_pseudo_groups(
                              ds, data.scores, k, derive_seed(seed, "synthlab.cluster", k));
                          o = detail::run_cell(ds, g, debias_cfg, seed);
                          Partition found{{g.assignments().begin(), g.assignments().end()}};
                          o.measured_ari =
                              adjusted_rand_index(found, cell_partition(ds.manifest(), g.samples()));
                        } catch (const Error& e) {
                          o.error = e.what();
                        }
                        return o;
                      }});
    }
  }
  detail::run_jobs(res, jobs, opts);
  return res;
}

inline constexpr double kReferenceThetaLow = 3.0;
inline constexpr double kReferenceThetaHigh = 10.0;

// Debiased training at each update period theta, with the default K.
inline SweepResult run_theta_sweep(const SynthConfig& cfg, const std::vector<std::size_t>& thetas,
                                   const std::vector<std::uint64_t>& seeds,
                                   const TrainConfig& train_cfg, const SweepOptions& opts = {}) {
  if (thetas.empty() || seeds.empty()) throw ConfigError("synthlab: empty theta grid or seed list");
  const std::size_t max_theta = *std::max_element(thetas.begin(), thetas.end());
  if (train_cfg.epochs < max_theta) {
    throw ConfigError("synthlab: epochs (" + std::to_string(train_cfg.epochs) +
                      ") must be >= the largest theta (" + std::to_string(max_theta) + ")");
  }
  const SynthData data = gen_synthetic(cfg);
  const Dataset& ds = data.dataset;
  const std::size_t K = default_cluster_count(cfg.groups, cfg.targets);

  SweepResult res;
  res.kind = "theta";
  std::vector<detail::CellJob> jobs;
  detail::add_baseline(res, jobs, ds, seeds, train_cfg);
  for (auto theta : thetas) {
    TrainConfig tc = train_cfg;
    tc.debias = true;
    tc.theta = theta;
    SweepRow row;
    row.label = "theta=" + std::to_string(theta);
    row.value = static_cast<double>(theta);
    row.seeds.resize(seeds.size());
    res.rows.push_back(std::move(row));
    const std::size_t r = res.rows.size() - 1;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      jobs.push_back({r, s, [&, tc, seed = seeds[s]] {
                        SeedOutcome o;
                        o.seed = seed;
                        try {
                          const PseudoGrouping g = build_pseudo_groups(
                              ds, data.scores, K, derive_seed(seed, "synthlab.cluster", K));
                          o = detail::run_cell(ds, g, tc, seed);
                        } catch (const Error& e) {
                          o.error = e.what();
                        }
                        return o;
                      }});
    }
  }
  detail::run_jobs(res, jobs, opts);

  // Band: thetas whose mean worst-group accuracy is within one seed-std of the best.
  const SweepRow* best = nullptr;
  for (const auto& row : res.rows) {
    if (row.baseline || row.succeeded == 0) continue;
    if (!best || row.mean.worst_group_acc > best->mean.worst_group_acc) best = &row;
  }
  if (best) {
    std::ostringstream band;
    band << "best-theta band (mean worst-group acc within 1 std of theta="
         << static_cast<std::size_t>(best->value) << "):";
    for (const auto& row : res.rows) {
      if (row.baseline || row.succeeded == 0) continue;
      if (row.mean.worst_group_acc >= best->mean.worst_group_acc - best->std.worst_group_acc) {
        band << ' ' << static_cast<std::size_t>(row.value);
      }
    }
    res.annotations.push_back(band.str());
    res.annotations.push_back("reference optimum band: theta in [" +
                              std::to_string(static_cast<int>(kReferenceThetaLow)) + ", " +
                              std::to_string(static_cast<int>(kReferenceThetaHigh)) + "] epochs");
  }
  return res;
}

// One row per setting x seed, then mean and std rows per setting. Annotation
// lines start with '#'.
inline std::string format_sweep(const SweepResult& res) {
  std::ostringstream out;
  for (const auto& a : res.annotations) out << "# " << a << '\n';
  out << "kind\tsetting\tvalue\tseed\tstatus\tmeasured_ari\tunbiased_acc\tworst_group_acc\tgroup_std\n";
  auto value_str = [](double v) { return std::isnan(v) ? std::string("NA") : detail::fmt(v); };
  for (const auto& row : res.rows) {
    for (const auto& o : row.seeds) {
      out << res.kind << '\t' << row.label << '\t' << value_str(row.value) << '\t' << o.seed << '\t'
          << (o.test ? (o.simplex_ok ? "ok" : "ok-simplex-violation") : "failed") << '\t'
          << (o.measured_ari ? detail::fmt(*o.measured_ari) : "NA") << '\t';
      if (o.test) {
        out << detail::fmt(o.test->unbiased_acc) << '\t' << detail::fmt(o.test->worst_group_acc)
            << '\t' << detail::fmt(o.test->group_std);
      } else {
        out << "NA\tNA\tNA";
      }
      out << '\n';
    }
    for (const auto& [name, s] : {std::pair{"mean", row.mean}, std::pair{"std", row.std}}) {
      out << res.kind << '\t' << row.label << '\t' << value_str(row.value) << '\t' << name << '\t'
          << row.succeeded << '/' << row.seeds.size() << "\tNA\t" << value_str(s.unbiased_acc)
          << '\t' << value_str(s.worst_group_acc) << '\t' << value_str(s.group_std) << '\n';
    }
  }
  return out.str();
}

}  // namespace clipdebias
