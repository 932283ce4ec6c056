#pragma once

// Minibatch SGD on embedding features, with either uniform shuffling
// (no intervention) or loss-balanced cluster re-sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clipdebias/attribute_proxy.hpp"
#include "clipdebias/dataset.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/metrics.hpp"
#include "clipdebias/model.hpp"
#include "clipdebias/random.hpp"
#include "clipdebias/sampler.hpp"

namespace clipdebias {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<double> lr_milestones = {0.33, 0.66};  // fractions of `epochs`
  double lr_decay = 0.1;
  double alpha = 0.3;
  std::size_t theta = 5;
  ModelKind model = ModelKind::linear;
  std::size_t hidden_dim = 0;
  // Gaussian input noise, as a fraction of the mean training-row norm.
  double jitter_sigma = 0.01;
  bool prob_floor = true;
  std::uint64_t seed = 0;
  bool debias = true;

  void validate() const {
    if (epochs == 0) throw ConfigError("fair_trainer: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("fair_trainer: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("fair_trainer: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("fair_trainer: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("fair_trainer: weight_decay must be >= 0");
    if (!(lr_decay > 0.0)) throw ConfigError("fair_trainer: lr_decay must be > 0");
    if (!(jitter_sigma >= 0.0)) throw ConfigError("fair_trainer: jitter_sigma must be >= 0");
    if (model == ModelKind::mlp && hidden_dim == 0) {
      throw ConfigError("fair_trainer: mlp model needs hidden_dim >= 1");
    }
    if (debias) {
      if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("fair_trainer: alpha must be in (0, 1]");
      if (theta == 0) throw ConfigError("fair_trainer: theta must be >= 1");
      if (epochs < theta) {
        throw ConfigError("fair_trainer: epochs (" + std::to_string(epochs) +
                          ") must be >= theta (" + std::to_string(theta) + ") when debiasing");
      }
    }
  }

  // Learning rate for 0-based `epoch`: decayed once per milestone passed.
  double lr_at(std::size_t epoch) const {
    double rate = lr;
    for (double m : lr_milestones) {
      if (epoch >= static_cast<std::size_t>(std::floor(m * static_cast<double>(epochs)))) {
        rate *= lr_decay;
      }
    }
    return rate;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"lr", c.lr},               {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"lr_milestones", c.lr_milestones},
          {"lr_decay", c.lr_decay},   {"alpha", c.alpha},
          {"theta", c.theta},         {"model", to_string(c.model)},
          {"hidden_dim", c.hidden_dim}, {"jitter_sigma", c.jitter_sigma},
          {"prob_floor", c.prob_floor}, {"seed", c.seed},
          {"debias", c.debias}};
}

struct SplitEvaluation {
  double accuracy = 0.0;
  std::optional<GroupAccuracyTable> groups;
  std::optional<FairnessSummary> fairness;
};

inline SplitEvaluation evaluate_split(const Classifier& model, const Dataset& ds, Split split) {
  const auto& rows = ds.indices(split);
  if (rows.empty()) {
    throw DataError("metrics: split '" + std::string(to_string(split)) + "' is empty");
  }
  const auto preds = predict_rows(model, ds.embeddings(), rows);
  std::vector<int> targets(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) targets[i] = ds.target(rows[i]);
  SplitEvaluation ev;
  ev.accuracy = overall_accuracy(preds, targets);
  if (ds.manifest().has_attributes(split)) {
    ev.groups = group_accuracies(preds, ds.manifest(), split);
    ev.fairness = fairness_summary(*ev.groups);
  }
  return ev;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<double> cluster_loss;
  std::vector<double> probs;  // after any update at the end of this epoch
  bool probs_updated = false;
  std::optional<double> val_accuracy;
  std::optional<FairnessSummary> val_fairness;
};

struct TrainedModel {
  Classifier model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no validation split exists
  std::string selection_metric;
  double jitter_abs = 0.0;
  TrainConfig config;
};

inline TrainedModel train(const Dataset& ds, const PseudoGrouping& grouping, const TrainConfig& cfg) {
  cfg.validate();
  const auto& train_rows = ds.indices(Split::train);
  if (train_rows.empty()) throw DataError("fair_trainer: dataset has no training samples");
  const std::size_t n = train_rows.size();
  const std::size_t D = ds.dim();
  const std::size_t T = ds.num_targets();
  const std::size_t K = grouping.num_clusters();

  const auto cluster_of = grouping.cluster_of_rows(ds.size());
  for (auto r : train_rows) {
    if (cluster_of[r] < 0) {
      throw DomainError("fair_trainer: training sample '" + ds.manifest()[r].id +
                        "' has no cluster");
    }
  }
  grouping.check_nested(ds);

  ModelShape shape{cfg.model, D, T, cfg.model == ModelKind::mlp ? cfg.hidden_dim : 0};
  TrainedModel out;
  out.config = cfg;
  out.model = Classifier(shape, derive_seed(cfg.seed, "trainer.init"));
  out.jitter_abs = cfg.jitter_sigma * ds.mean_norm(Split::train);

  SamplerState sampler = init_sampler(K, cfg.debias ? cfg.alpha : 1.0,
                                      cfg.debias ? cfg.theta : 1, cfg.prob_floor);
  Rng batch_rng(derive_seed(cfg.seed, "trainer.batches"));
  Rng jitter_rng(derive_seed(cfg.seed, "trainer.jitter"));

  const bool has_val = !ds.indices(Split::val).empty();
  const bool val_groups = has_val && ds.manifest().has_attributes(Split::val);
  out.selection_metric = !has_val ? "final_epoch"
                         : val_groups ? "val_unbiased_accuracy"
                                      : "val_accuracy";

  Classifier& model = out.model;
  std::vector<double> best_params(model.params().begin(), model.params().end());
  double best_score = -1.0;

  std::vector<double> velocity(model.params().size(), 0.0);
  std::vector<double> grad(model.params().size());
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<double> x_clean, x_train, losses;
  std::vector<int> labels;
  std::vector<std::size_t> batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::vector<double> sums(K, 0.0);
    std::vector<std::size_t> counts(K, 0);
    double epoch_loss = 0.0;
    if (!cfg.debias) batch_rng.shuffle(order.begin(), order.end());

    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t size = std::min(cfg.batch_size, n - step * cfg.batch_size);
      if (cfg.debias) {
        batch = sample_batch(sampler, grouping, size, batch_rng);
      } else {
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(step * cfg.batch_size),
                     order.begin() + static_cast<std::ptrdiff_t>(step * cfg.batch_size + size));
      }
      x_clean.resize(size * D);
      labels.resize(size);
      losses.resize(size);
      for (std::size_t b = 0; b < size; ++b) {
        const auto f = ds.features(batch[b]);
        std::copy(f.begin(), f.end(), x_clean.begin() + static_cast<std::ptrdiff_t>(b * D));
        labels[b] = ds.target(batch[b]);
      }
      const std::vector<double>* x_fit = &x_clean;
      if (out.jitter_abs > 0.0) {
        x_train = x_clean;
        for (double& v : x_train) v += out.jitter_abs * jitter_rng.normal();
        x_fit = &x_train;
        model.sample_losses(x_clean, labels, losses);
      }
      const double batch_loss =
          model.loss_and_grad(*x_fit, labels, grad,
                              out.jitter_abs > 0.0 ? std::span<double>() : std::span<double>(losses));
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("fair_trainer: loss diverged at epoch " + std::to_string(epoch + 1));
      }
      for (std::size_t b = 0; b < size; ++b) {
        const auto k = static_cast<std::size_t>(cluster_of[batch[b]]);
        sums[k] += losses[b];
        ++counts[k];
        epoch_loss += losses[b];
      }
      auto params = model.params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] + cfg.weight_decay * params[i];
        velocity[i] = cfg.momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    if (!std::isfinite(rec.train_loss)) {
      throw TrainingError("fair_trainer: loss diverged at epoch " + std::to_string(epoch + 1));
    }
    rec.cluster_loss = epoch_cluster_means(sums, counts);
    if (cfg.debias) {
      sampler = record_epoch_losses(std::move(sampler), rec.cluster_loss);
      if (sampler.update_due()) {
        sampler = update_probs(std::move(sampler));
        rec.probs_updated = true;
      }
    }
    rec.probs = sampler.probs;

    if (has_val) {
      const SplitEvaluation ev = evaluate_split(model, ds, Split::val);
      rec.val_accuracy = ev.accuracy;
      rec.val_fairness = ev.fairness;
      const double score = val_groups ? ev.fairness->unbiased_acc : ev.accuracy;
      if (score > best_score) {
        best_score = score;
        out.best_epoch = rec.epoch;
        best_params.assign(model.params().begin(), model.params().end());
      }
    }
    out.history.push_back(std::move(rec));
  }

  if (has_val) std::copy(best_params.begin(), best_params.end(), model.params().begin());
  return out;
}

// History rows: epoch, lr, loss, per-cluster loss, probs, validation metrics.
inline std::string format_history(const TrainedModel& m) {
  std::ostringstream out;
  out.precision(9);
  const std::size_t K = m.history.empty() ? 0 : m.history.front().probs.size();
  out << "epoch\tlr\ttrain_loss";
  for (std::size_t k = 0; k < K; ++k) out << "\tloss_c" << k;
  for (std::size_t k = 0; k < K; ++k) out << "\tprob_c" << k;
  out << "\tprobs_updated\tval_acc\tval_unbiased_acc\tval_worst_group_acc\tval_group_std\n";
  auto opt = [&](std::optional<double> v) {
    if (v) {
      out << *v;
    } else {
      out << "NA";
    }
  };
  for (const auto& r : m.history) {
    out << r.epoch << '\t' << r.lr << '\t' << r.train_loss;
    for (double l : r.cluster_loss) out << '\t' << l;
    for (double p : r.probs) out << '\t' << p;
    out << '\t' << (r.probs_updated ? 1 : 0) << '\t';
    opt(r.val_accuracy);
    out << '\t';
    opt(r.val_fairness ? std::optional(r.val_fairness->unbiased_acc) : std::nullopt);
    out << '\t';
    opt(r.val_fairness ? std::optional(r.val_fairness->worst_group_acc) : std::nullopt);
    out << '\t';
    opt(r.val_fairness ? std::optional(r.val_fairness->group_std) : std::nullopt);
    out << '\n';
  }
  return out.str();
}

// Every probability snapshot lies on the simplex within `tol`.
inline bool history_on_simplex(const TrainedModel& m, double tol = 1e-9) {
  for (const auto& r : m.history) {
    double s = 0.0;
    for (double p : r.probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) return false;
      s += p;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace clipdebias
