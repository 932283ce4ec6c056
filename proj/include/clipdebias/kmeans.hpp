#pragma once

// Lloyd's k-means with k-means++ seeding and best-of-N restarts.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "clipdebias/error.hpp"
#include "clipdebias/random.hpp"

namespace clipdebias {

struct KMeansOptions {
  std::size_t k = 2;
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
};

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<double> centroids;  // k x dim, row-major
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::size_t best_restart = 0;
  // Inertia after each centroid update of the selected restart.
  std::vector<double> inertia_trace;
};

namespace detail {

inline double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

class LloydRun {
 public:
  LloydRun(std::span<const double> points, std::size_t n, std::size_t dim, std::size_t k)
      : points_(points), n_(n), dim_(dim), k_(k) {}

  KMeansResult run(Rng& rng, std::size_t max_iter) {
    KMeansResult res;
    res.centroids = seed_plus_plus(rng);
    res.assignments.assign(n_, -1);
    for (std::size_t it = 0; it < max_iter; ++it) {
      bool changed = assign(res);
      if (!changed && it > 0) break;
      repair_empty(res);
      update(res);
      res.inertia_trace.push_back(inertia(res));
      res.iterations = it + 1;
    }
    res.inertia = res.inertia_trace.empty() ? inertia(res) : res.inertia_trace.back();
    return res;
  }

 private:
  const double* point(std::size_t i) const { return points_.data() + i * dim_; }

  std::vector<double> seed_plus_plus(Rng& rng) const {
    std::vector<double> centroids(k_ * dim_);
    std::size_t first = rng.index(n_);
    std::copy_n(point(first), dim_, centroids.begin());
    std::vector<double> d2(n_, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k_; ++c) {
      const double* prev = centroids.data() + (c - 1) * dim_;
      double total = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        d2[i] = std::min(d2[i], squared_distance(point(i), prev, dim_));
        total += d2[i];
      }
      std::size_t pick = n_ - 1;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < n_; ++i) {
          if (u < d2[i]) {
            pick = i;
            break;
          }
          u -= d2[i];
        }
      } else {
        pick = rng.index(n_);
      }
      std::copy_n(point(pick), dim_, centroids.begin() + static_cast<std::ptrdiff_t>(c * dim_));
    }
    return centroids;
  }

  // Nearest centroid per point, ties to the lowest index.
  bool assign(KMeansResult& res) const {
    bool changed = false;
    for (std::size_t i = 0; i < n_; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k_; ++c) {
        const double d = squared_distance(point(i), res.centroids.data() + c * dim_, dim_);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (res.assignments[i] != best) {
        res.assignments[i] = best;
        changed = true;
      }
    }
    return changed;
  }

  // An empty cluster takes the point farthest from its current centroid,
  // drawn from clusters that can spare one.
  void repair_empty(KMeansResult& res) const {
    std::vector<std::size_t> counts(k_, 0);
    for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < k_; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n_;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n_; ++i) {
        const auto owner = static_cast<std::size_t>(res.assignments[i]);
        if (counts[owner] < 2) continue;
        const double d = squared_distance(point(i), res.centroids.data() + owner * dim_, dim_);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(res.assignments[far])];
      res.assignments[far] = static_cast<int>(c);
      counts[c] = 1;
    }
  }

  void update(KMeansResult& res) const {
    std::vector<double> sums(k_ * dim_, 0.0);
    std::vector<std::size_t> counts(k_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto c = static_cast<std::size_t>(res.assignments[i]);
      ++counts[c];
      for (std::size_t j = 0; j < dim_; ++j) sums[c * dim_ + j] += point(i)[j];
    }
    for (std::size_t c = 0; c < k_; ++c) {
      for (std::size_t j = 0; j < dim_; ++j) {
        res.centroids[c * dim_ + j] = sums[c * dim_ + j] / static_cast<double>(counts[c]);
      }
    }
  }

  double inertia(const KMeansResult& res) const {
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto c = static_cast<std::size_t>(res.assignments[i]);
      total += squared_distance(point(i), res.centroids.data() + c * dim_, dim_);
    }
    return total;
  }

  std::span<const double> points_;
  std::size_t n_;
  std::size_t dim_;
  std::size_t k_;
};

}  // namespace detail

// Clusters `points` (n x dim, row-major). Restart r draws from the substream
// derive_seed(seed, "kmeans", r); the lowest-inertia restart wins, ties to
// the lowest restart index.
inline KMeansResult kmeans(std::span<const double> points, std::size_t dim,
                           const KMeansOptions& opts) {
  if (dim == 0 || points.size() % dim != 0) {
    throw DomainError("attribute_proxy: point buffer is not a multiple of dim");
  }
  const std::size_t n = points.size() / dim;
  if (opts.k == 0) throw DomainError("attribute_proxy: kmeans needs k >= 1");
  if (n < opts.k) {
    throw DomainError("attribute_proxy: kmeans got " + std::to_string(n) + " points for k=" +
                      std::to_string(opts.k));
  }
  const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
  const std::size_t max_iter = std::max<std::size_t>(1, opts.max_iter);
  detail::LloydRun lloyd(points, n, dim, opts.k);
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(opts.seed, "kmeans", r));
    KMeansResult res = lloyd.run(rng, max_iter);
    res.best_restart = r;
    if (r == 0 || res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

inline KMeansResult kmeans(const std::vector<std::vector<double>>& points,
                           const KMeansOptions& opts) {
  if (points.empty()) throw DomainError("attribute_proxy: kmeans got no points");
  const std::size_t dim = points.front().size();
  std::vector<double> flat;
  flat.reserve(points.size() * dim);
  for (const auto& p : points) {
    if (p.size() != dim) throw DomainError("attribute_proxy: ragged kmeans input");
    flat.insert(flat.end(), p.begin(), p.end());
  }
  return kmeans(flat, dim, opts);
}

}  // namespace clipdebias
