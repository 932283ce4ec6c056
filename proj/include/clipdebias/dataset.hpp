#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "clipdebias/embedding.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/manifest.hpp"

namespace clipdebias {

// Embeddings bound positionally to manifest records: row i is sample i.
// Immutable once constructed.
class Dataset {
 public:
  Dataset(EmbeddingMatrix embeddings, Manifest manifest)
      : embeddings_(std::move(embeddings)), manifest_(std::move(manifest)) {
    if (manifest_.empty()) throw DataError("data_model: dataset needs at least one sample");
    if (manifest_.size() != embeddings_.rows()) {
      throw DataError("data_model: manifest has " + std::to_string(manifest_.size()) +
                      " records but embeddings have " + std::to_string(embeddings_.rows()) +
                      " rows");
    }
    for (Split s : {Split::train, Split::val, Split::test}) {
      split_index_[static_cast<int>(s)] = manifest_.indices(s);
    }
  }

  std::size_t size() const { return manifest_.size(); }
  std::size_t dim() const { return embeddings_.dim(); }
  std::size_t num_targets() const { return manifest_.num_targets(); }

  const EmbeddingMatrix& embeddings() const { return embeddings_; }
  const Manifest& manifest() const { return manifest_; }
  std::span<const float> features(std::size_t i) const { return embeddings_.row(i); }
  int target(std::size_t i) const { return manifest_[i].target; }

  const std::vector<std::size_t>& indices(Split s) const {
    return split_index_[static_cast<int>(s)];
  }

  // Mean L2 norm of the rows in `split` (all rows when the split is empty).
  double mean_norm(Split split) const {
    const auto& idx = indices(split);
    double total = 0.0;
    std::size_t count = 0;
    auto add = [&](std::size_t i) {
      double sq = 0.0;
      for (float v : features(i)) sq += static_cast<double>(v) * v;
      total += std::sqrt(sq);
      ++count;
    };
    if (idx.empty()) {
      for (std::size_t i = 0; i < size(); ++i) add(i);
    } else {
      for (auto i : idx) add(i);
    }
    return total / static_cast<double>(count);
  }

 private:
  EmbeddingMatrix embeddings_;
  Manifest manifest_;
  std::vector<std::size_t> split_index_[3];
};

inline Dataset bind_dataset(EmbeddingMatrix embeddings, Manifest manifest) {
  return Dataset(std::move(embeddings), std::move(manifest));
}

}  // namespace clipdebias
