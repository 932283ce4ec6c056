#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "clipdebias/clipdebias.hpp"

namespace fixtures {

using namespace clipdebias;

struct Row {
  Split split;
  int target;
  std::optional<int> attribute;
};

inline Manifest make_manifest(const std::vector<Row>& rows) {
  std::vector<SampleRecord> recs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    recs.push_back({"r" + std::to_string(i), rows[i].split, rows[i].target, rows[i].attribute});
  }
  return Manifest(std::move(recs));
}

// Dataset whose features are given row by row.
inline Dataset make_dataset(const std::vector<Row>& rows, const std::vector<std::vector<float>>& feats) {
  const std::size_t dim = feats.front().size();
  std::vector<float> flat;
  for (const auto& f : feats) flat.insert(flat.end(), f.begin(), f.end());
  return Dataset(EmbeddingMatrix(rows.size(), dim, std::move(flat)), make_manifest(rows));
}

// Two Gaussian blobs at +-offset along the first axis, labels 0/1, every
// sample in `split`. Linearly separable for offset >> 1.
inline Dataset separable(std::size_t n, std::size_t dim, double offset, unsigned seed,
                         Split split = Split::train, bool attributes = true) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<Row> rows;
  std::vector<std::vector<float>> feats;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<float> f(dim);
    for (auto& v : f) v = static_cast<float>(noise(gen));
    f[0] += static_cast<float>(y == 1 ? offset : -offset);
    feats.push_back(f);
    rows.push_back({split, y, attributes ? std::optional<int>(static_cast<int>((i / 2) % 2)) : std::nullopt});
  }
  return make_dataset(rows, feats);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("clipdebias_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixtures
