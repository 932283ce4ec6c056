#pragma once

// Embedding-space classifiers: a linear map D -> T, or a one-hidden-layer
// ReLU network D -> H -> T. Parameters live in one flat vector so the
// optimizer and gradient checks can treat them uniformly.
//
//   linear: [W (T x D) | b (T)]
//   mlp:    [W1 (H x D) | b1 (H) | W2 (T x H) | b2 (T)]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clipdebias/embedding.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/random.hpp"

namespace clipdebias {

enum class ModelKind { linear, mlp };

inline std::string to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "mlp"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "linear") return ModelKind::linear;
  if (s == "mlp") return ModelKind::mlp;
  throw ConfigError("fair_trainer: unknown model kind '" + s + "'");
}

struct ModelShape {
  ModelKind kind = ModelKind::linear;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::size_t hidden = 0;

  std::size_t param_count() const {
    if (kind == ModelKind::linear) return classes * input_dim + classes;
    return hidden * input_dim + hidden + classes * hidden + classes;
  }

  void validate() const {
    if (input_dim == 0 || classes == 0) {
      throw ConfigError("fair_trainer: model needs input_dim >= 1 and classes >= 1");
    }
    if (kind == ModelKind::mlp && hidden == 0) {
      throw ConfigError("fair_trainer: mlp model needs hidden_dim >= 1");
    }
  }
};

class Classifier {
 public:
  Classifier() = default;

  // Linear models start at zero; MLP first-layer weights are uniform in
  // +-1/sqrt(D) and second-layer weights in +-1/sqrt(H).
  Classifier(ModelShape shape, std::uint64_t seed) : shape_(shape) {
    shape_.validate();
    params_.assign(shape_.param_count(), 0.0);
    if (shape_.kind == ModelKind::mlp) {
      Rng rng(derive_seed(seed, "model.init"));
      const double b1 = 1.0 / std::sqrt(static_cast<double>(shape_.input_dim));
      const double b2 = 1.0 / std::sqrt(static_cast<double>(shape_.hidden));
      const std::size_t h = shape_.hidden, d = shape_.input_dim, t = shape_.classes;
      for (std::size_t i = 0; i < h * d; ++i) params_[i] = (2.0 * rng.uniform() - 1.0) * b1;
      for (std::size_t i = 0; i < t * h; ++i) {
        params_[h * d + h + i] = (2.0 * rng.uniform() - 1.0) * b2;
      }
    }
  }

  Classifier(ModelShape shape, std::vector<double> params)
      : shape_(shape), params_(std::move(params)) {
    shape_.validate();
    if (params_.size() != shape_.param_count()) {
      throw DomainError("fair_trainer: parameter vector has wrong length for model shape");
    }
  }

  const ModelShape& shape() const { return shape_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  template <typename T>
  void logits(std::span<const T> x, std::span<double> out) const {
    const std::size_t d = shape_.input_dim, t = shape_.classes;
    const double* p = params_.data();
    if (shape_.kind == ModelKind::linear) {
      for (std::size_t c = 0; c < t; ++c) {
        double s = p[t * d + c];
        for (std::size_t j = 0; j < d; ++j) s += p[c * d + j] * x[j];
        out[c] = s;
      }
      return;
    }
    const std::size_t h = shape_.hidden;
    std::vector<double> hid(h);
    hidden_activations(x, hid);
    const double* w2 = p + h * d + h;
    const double* b2 = w2 + t * h;
    for (std::size_t c = 0; c < t; ++c) {
      double s = b2[c];
      for (std::size_t j = 0; j < h; ++j) s += w2[c * h + j] * hid[j];
      out[c] = s;
    }
  }

  // Index of the largest logit, ties to the lowest class.
  template <typename T>
  int predict_one(std::span<const T> x) const {
    std::vector<double> z(shape_.classes);
    logits(x, std::span<double>(z));
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  // Mean cross-entropy over a batch (rows of `x`, B x D) and its gradient,
  // which is written (not accumulated) into `grad`. Per-sample losses go to
  // `sample_loss` when it is non-empty.
  double loss_and_grad(std::span<const double> x, std::span<const int> labels,
                       std::span<double> grad, std::span<double> sample_loss = {}) const {
    const std::size_t d = shape_.input_dim, t = shape_.classes, h = shape_.hidden;
    const std::size_t batch = labels.size();
    if (x.size() != batch * d || grad.size() != params_.size()) {
      throw DomainError("fair_trainer: loss_and_grad shape mismatch");
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double scale = 1.0 / static_cast<double>(batch);
    std::vector<double> z(t), hid(h), dhid(h);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto xb = x.subspan(b * d, d);
      const int y = labels[b];
      logits(xb, std::span<double>(z));
      const double loss = softmax_in_place(z, y);
      total += loss;
      if (!sample_loss.empty()) sample_loss[b] = loss;
      // z now holds softmax - onehot
      if (shape_.kind == ModelKind::linear) {
        for (std::size_t c = 0; c < t; ++c) {
          const double g = z[c] * scale;
          for (std::size_t j = 0; j < d; ++j) grad[c * d + j] += g * xb[j];
          grad[t * d + c] += g;
        }
        continue;
      }
      hidden_activations(xb, hid);
      const double* w2 = params_.data() + h * d + h;
      double* gw2 = grad.data() + h * d + h;
      double* gb2 = gw2 + t * h;
      std::fill(dhid.begin(), dhid.end(), 0.0);
      for (std::size_t c = 0; c < t; ++c) {
        const double g = z[c] * scale;
        for (std::size_t j = 0; j < h; ++j) {
          gw2[c * h + j] += g * hid[j];
          dhid[j] += g * w2[c * h + j];
        }
        gb2[c] += g;
      }
      for (std::size_t j = 0; j < h; ++j) {
        if (hid[j] <= 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) grad[j * d + i] += dhid[j] * xb[i];
        grad[h * d + j] += dhid[j];
      }
    }
    return total * scale;
  }

  // Forward pass only: per-sample cross-entropy into `out`.
  void sample_losses(std::span<const double> x, std::span<const int> labels,
                     std::span<double> out) const {
    const std::size_t d = shape_.input_dim;
    std::vector<double> z(shape_.classes);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      logits(x.subspan(b * d, d), std::span<double>(z));
      out[b] = softmax_in_place(z, labels[b]);
    }
  }

  double loss(std::span<const double> x, std::span<const int> labels) const {
    std::vector<double> g(params_.size());
    return loss_and_grad(x, labels, g);
  }

 private:
  template <typename T>
  void hidden_activations(std::span<const T> x, std::span<double> hid) const {
    const std::size_t d = shape_.input_dim, h = shape_.hidden;
    const double* w1 = params_.data();
    const double* b1 = w1 + h * d;
    for (std::size_t j = 0; j < h; ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < d; ++i) s += w1[j * d + i] * x[i];
      hid[j] = s > 0.0 ? s : 0.0;
    }
  }

  // Replaces logits with softmax minus one-hot(y) and returns -log p_y.
  static double softmax_in_place(std::vector<double>& z, int y) {
    const double top = *std::max_element(z.begin(), z.end());
    const double zy = z[static_cast<std::size_t>(y)];
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - top);
      sum += v;
    }
    const double log_sum = std::log(sum) + top;
    const double loss = log_sum - zy;
    for (double& v : z) v /= sum;
    z[static_cast<std::size_t>(y)] -= 1.0;
    return loss;
  }

  ModelShape shape_;
  std::vector<double> params_;
};

inline std::vector<int> predict(const Classifier& model, const EmbeddingMatrix& emb) {
  if (emb.dim() != model.shape().input_dim) {
    throw DomainError("fair_trainer: embedding dim " + std::to_string(emb.dim()) +
                      " != model input dim " + std::to_string(model.shape().input_dim));
  }
  std::vector<int> out(emb.rows());
  for (std::size_t i = 0; i < emb.rows(); ++i) out[i] = model.predict_one(emb.row(i));
  return out;
}

inline std::vector<int> predict_rows(const Classifier& model, const EmbeddingMatrix& emb,
                                     std::span<const std::size_t> rows) {
  if (emb.dim() != model.shape().input_dim) {
    throw DomainError("fair_trainer: embedding dim " + std::to_string(emb.dim()) +
                      " != model input dim " + std::to_string(model.shape().input_dim));
  }
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = model.predict_one(emb.row(rows[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON header plus one FEMB blob per weight tensor, written
// next to the header as <stem>.<tensor>.femb.

namespace detail {

struct TensorSlot {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

inline std::vector<TensorSlot> tensor_slots(const ModelShape& s) {
  if (s.kind == ModelKind::linear) {
    return {{"w", s.classes, s.input_dim}, {"b", 1, s.classes}};
  }
  return {{"w1", s.hidden, s.input_dim},
          {"b1", 1, s.hidden},
          {"w2", s.classes, s.hidden},
          {"b2", 1, s.classes}};
}

}  // namespace detail

// Writes header + blobs and returns the paths written. Weights are stored as
// float32, so a reloaded model carries rounded parameters.
inline std::vector<std::filesystem::path> save_model(const std::filesystem::path& header_path,
                                                     const Classifier& model,
                                                     const nlohmann::json& config_echo) {
  const auto& s = model.shape();
  const auto stem = header_path.stem().string();
  const auto dir = header_path.parent_path();
  nlohmann::json header;
  header["format"] = "clipdebias-model";
  header["version"] = 1;
  header["kind"] = to_string(s.kind);
  header["input_dim"] = s.input_dim;
  header["classes"] = s.classes;
  header["hidden_dim"] = s.hidden;
  header["config"] = config_echo;
  std::vector<std::filesystem::path> written;
  std::size_t offset = 0;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& slot : detail::tensor_slots(s)) {
    std::vector<float> values(slot.rows * slot.cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<float>(model.params()[offset + i]);
    }
    offset += values.size();
    const std::string file = stem + "." + slot.name + ".femb";
    write_embeddings(dir / file, EmbeddingMatrix(slot.rows, slot.cols, std::move(values)));
    tensors.push_back({{"name", slot.name}, {"file", file}});
    written.push_back(dir / file);
  }
  header["tensors"] = tensors;
  std::ofstream out(header_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("fair_trainer: cannot write " + header_path.string());
  out << header.dump(2) << '\n';
  written.insert(written.begin(), header_path);
  return written;
}

inline Classifier load_model(const std::filesystem::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw FormatError("fair_trainer: cannot open " + header_path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fair_trainer: model header is not valid JSON: ") + e.what());
  }
  ModelShape s;
  std::vector<double> params;
  try {
    if (header.at("format").get<std::string>() != "clipdebias-model") {
      throw FormatError("fair_trainer: not a model header: " + header_path.string());
    }
    s.kind = parse_model_kind(header.at("kind").get<std::string>());
    s.input_dim = header.at("input_dim").get<std::size_t>();
    s.classes = header.at("classes").get<std::size_t>();
    s.hidden = header.at("hidden_dim").get<std::size_t>();
    s.validate();
    const auto slots = detail::tensor_slots(s);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != slots.size()) throw FormatError("fair_trainer: wrong tensor count");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != slots[i].name) {
        throw FormatError("fair_trainer: unexpected tensor '" +
                          tensors[i].at("name").get<std::string>() + "'");
      }
      const auto m = load_embeddings(header_path.parent_path() /
                                     tensors[i].at("file").get<std::string>());
      if (m.rows() != slots[i].rows || m.dim() != slots[i].cols) {
        throw FormatError("fair_trainer: tensor '" + slots[i].name + "' has the wrong shape");
      }
      params.insert(params.end(), m.values().begin(), m.values().end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fair_trainer: model header field error: ") + e.what());
  }
  return Classifier(s, std::move(params));
}

}  // namespace clipdebias
