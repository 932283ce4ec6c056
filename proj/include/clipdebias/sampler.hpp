#pragma once

// Loss-balanced cluster sampling.
//
// Every `theta` epochs the cluster sampling probabilities move toward each
// cluster's share of the summed per-epoch mean losses in the window:
//
//   p_k <- alpha * sum_w L_k / sum_w sum_j L_j + (1 - alpha) * p_k
//
// followed by an optional probability floor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "clipdebias/attribute_proxy.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/random.hpp"

namespace clipdebias {

struct SamplerState {
  std::vector<double> probs;
  std::vector<std::vector<double>> window;  // one length-K entry per recorded epoch
  double alpha = 0.3;
  std::size_t theta = 5;
  double floor = 0.0;  // minimum probability per cluster; 0 disables

  std::size_t clusters() const { return probs.size(); }
  bool update_due() const { return window.size() >= theta; }
};

inline constexpr double kDefaultFloorScale = 0.01;  // floor = scale / K

inline SamplerState init_sampler(std::size_t K, double alpha, std::size_t theta,
                                 bool use_floor = true) {
  if (K == 0) throw ConfigError("fair_trainer: sampler needs at least one cluster");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ConfigError("fair_trainer: alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  if (theta == 0) throw ConfigError("fair_trainer: theta must be >= 1");
  SamplerState s;
  s.probs.assign(K, 1.0 / static_cast<double>(K));
  s.alpha = alpha;
  s.theta = theta;
  s.floor = use_floor ? kDefaultFloorScale / static_cast<double>(K) : 0.0;
  return s;
}

inline SamplerState record_epoch_losses(SamplerState state,
                                        std::span<const double> per_cluster_mean) {
  if (per_cluster_mean.size() != state.clusters()) {
    throw DomainError("fair_trainer: " + std::to_string(per_cluster_mean.size()) +
                      " cluster losses for " + std::to_string(state.clusters()) + " clusters");
  }
  for (double l : per_cluster_mean) {
    if (!std::isfinite(l) || l < 0.0) {
      throw DataError("fair_trainer: cluster loss must be finite and >= 0, got " +
                      std::to_string(l));
    }
  }
  state.window.emplace_back(per_cluster_mean.begin(), per_cluster_mean.end());
  return state;
}

// Per-cluster mean losses of one epoch from accumulated sums and counts.
// Clusters that were never drawn get the epoch's global mean loss.
inline std::vector<double> epoch_cluster_means(std::span<const double> loss_sums,
                                               std::span<const std::size_t> counts) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < loss_sums.size(); ++k) {
    total += loss_sums[k];
    n += counts[k];
  }
  const double global = n > 0 ? total / static_cast<double>(n) : 0.0;
  std::vector<double> out(loss_sums.size());
  for (std::size_t k = 0; k < loss_sums.size(); ++k) {
    out[k] = counts[k] > 0 ? loss_sums[k] / static_cast<double>(counts[k]) : global;
  }
  return out;
}

// Raises entries below `floor` to it and rescales the others so the total
// stays 1. Requires floor * K <= 1.
inline void apply_probability_floor(std::vector<double>& probs, double floor) {
  if (floor <= 0.0) return;
  const std::size_t K = probs.size();
  std::vector<bool> pinned(K, false);
  while (true) {
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (pinned[k]) {
        ++n_pinned;
      } else {
        free_mass += probs[k];
      }
    }
    const double target = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    for (std::size_t k = 0; k < K; ++k) {
      if (pinned[k]) {
        probs[k] = floor;
        continue;
      }
      probs[k] = free_mass > 0.0 ? probs[k] * target / free_mass
                                 : target / static_cast<double>(K - n_pinned);
      if (probs[k] < floor) {
        pinned[k] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
}

inline SamplerState update_probs(SamplerState state) {
  if (state.window.size() != state.theta) {
    throw DomainError("fair_trainer: update needs " + std::to_string(state.theta) +
                      " recorded epochs, have " + std::to_string(state.window.size()));
  }
  const std::size_t K = state.clusters();
  std::vector<double> sums(K, 0.0);
  for (const auto& epoch : state.window) {
    for (std::size_t k = 0; k < K; ++k) sums[k] += epoch[k];
  }
  const double total = std::accumulate(sums.begin(), sums.end(), 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double share = total > 0.0 ? sums[k] / total : 1.0 / static_cast<double>(K);
    state.probs[k] = state.alpha * share + (1.0 - state.alpha) * state.probs[k];
  }
  apply_probability_floor(state.probs, state.floor);
  const double z = std::accumulate(state.probs.begin(), state.probs.end(), 0.0);
  for (double& p : state.probs) p /= z;
  state.window.clear();
  return state;
}

// Draws `batch_size` dataset rows: a cluster with probability p_k, then a
// member uniformly, with replacement.
inline std::vector<std::size_t> sample_batch(const SamplerState& state,
                                             const PseudoGrouping& grouping,
                                             std::size_t batch_size, Rng& rng) {
  const std::size_t K = state.clusters();
  if (grouping.num_clusters() != K) {
    throw DomainError("fair_trainer: sampler has " + std::to_string(K) +
                      " clusters, grouping has " + std::to_string(grouping.num_clusters()));
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (grouping.members(k).empty()) {
      throw DomainError("fair_trainer: cluster " + std::to_string(k) + " is empty");
    }
  }
  std::vector<double> cdf(K);
  std::partial_sum(state.probs.begin(), state.probs.end(), cdf.begin());
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const double u = rng.uniform() * cdf.back();
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, K - 1);
    const auto& m = grouping.members(k);
    out.push_back(m[rng.index(m.size())]);
  }
  return out;
}

}  // namespace clipdebias
