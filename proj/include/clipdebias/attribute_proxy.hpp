#pragma once

// Prompt-to-image similarity and per-class pseudo grouping.
//
// The score matrix holds one row per prompt and one column per sample. Each
// sample's column is its clustering feature; samples are clustered within
// their own target class so that every pseudo group is nested in a class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clipdebias/dataset.hpp"
#include "clipdebias/embedding.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/kmeans.hpp"

namespace clipdebias {

inline constexpr double kScoreSlack = 1e-6;

template <typename T>
double cosine_similarity(std::span<const T> d, std::span<const T> m) {
  if (d.size() != m.size()) {
    throw DomainError("attribute_proxy: cosine of vectors with dims " + std::to_string(d.size()) +
                      " and " + std::to_string(m.size()));
  }
  double dot = 0.0, dd = 0.0, mm = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double a = d[i];
    const double b = m[i];
    dot += a * b;
    dd += a * a;
    mm += b * b;
  }
  if (dd == 0.0 || mm == 0.0) throw DomainError("attribute_proxy: cosine of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(dd) * std::sqrt(mm)), -1.0, 1.0);
}

class ScoreMatrix {
 public:
  ScoreMatrix(std::size_t prompts, std::size_t samples, std::vector<float> values)
      : prompts_(prompts), samples_(samples), values_(std::move(values)) {
    if (prompts_ == 0 || samples_ == 0) {
      throw DomainError("attribute_proxy: score matrix needs at least one prompt and sample");
    }
    if (values_.size() != prompts_ * samples_) {
      throw DomainError("attribute_proxy: score payload size mismatch");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const float v = values_[i];
      if (!std::isfinite(v) || v < -1.0 - kScoreSlack || v > 1.0 + kScoreSlack) {
        throw DomainError("attribute_proxy: score (" + std::to_string(i / samples_) + ", " +
                          std::to_string(i % samples_) + ") = " + std::to_string(v) +
                          " is outside [-1, 1]");
      }
    }
  }

  explicit ScoreMatrix(const EmbeddingMatrix& m)
      : ScoreMatrix(m.rows(), m.dim(), {m.values().begin(), m.values().end()}) {}

  std::size_t prompts() const { return prompts_; }
  std::size_t samples() const { return samples_; }
  float operator()(std::size_t prompt, std::size_t sample) const {
    return values_[prompt * samples_ + sample];
  }
  std::span<const float> row(std::size_t prompt) const {
    return {values_.data() + prompt * samples_, samples_};
  }
  std::span<const float> values() const { return values_; }

  // Score column of one sample: its clustering feature.
  std::vector<double> column(std::size_t sample) const {
    std::vector<double> out(prompts_);
    for (std::size_t i = 0; i < prompts_; ++i) out[i] = (*this)(i, sample);
    return out;
  }

  ScoreMatrix select_prompt(std::size_t prompt) const {
    auto r = row(prompt);
    return ScoreMatrix(1, samples_, {r.begin(), r.end()});
  }

  EmbeddingMatrix to_embedding() const { return EmbeddingMatrix(prompts_, samples_, values_); }

 private:
  std::size_t prompts_;
  std::size_t samples_;
  std::vector<float> values_;
};

inline ScoreMatrix similarity_matrix(const EmbeddingMatrix& texts, const EmbeddingMatrix& images) {
  if (texts.dim() != images.dim()) {
    throw DomainError("attribute_proxy: text dim " + std::to_string(texts.dim()) +
                      " != image dim " + std::to_string(images.dim()));
  }
  const std::size_t dim = texts.dim();
  auto inverse_norms = [](const EmbeddingMatrix& m, const char* what) {
    std::vector<double> inv(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double sq = 0.0;
      for (float v : m.row(r)) sq += static_cast<double>(v) * v;
      if (sq == 0.0) {
        throw DomainError(std::string("attribute_proxy: zero-norm ") + what + " row " +
                          std::to_string(r));
      }
      inv[r] = 1.0 / std::sqrt(sq);
    }
    return inv;
  };
  const auto tinv = inverse_norms(texts, "text");
  const auto iinv = inverse_norms(images, "image");
  std::vector<float> values(texts.rows() * images.rows());
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    const auto t = texts.row(i);
    for (std::size_t j = 0; j < images.rows(); ++j) {
      const auto m = images.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += static_cast<double>(t[c]) * m[c];
      values[i * images.rows() + j] =
          static_cast<float>(std::clamp(dot * tinv[i] * iinv[j], -1.0, 1.0));
    }
  }
  return ScoreMatrix(texts.rows(), images.rows(), std::move(values));
}

// Column-wise mean over prompts.
inline ScoreMatrix ensemble_scores(const ScoreMatrix& per_prompt) {
  std::vector<float> out(per_prompt.samples());
  for (std::size_t j = 0; j < per_prompt.samples(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < per_prompt.prompts(); ++i) s += per_prompt(i, j);
    out[j] = static_cast<float>(s / static_cast<double>(per_prompt.prompts()));
  }
  return ScoreMatrix(1, per_prompt.samples(), std::move(out));
}

// ---------------------------------------------------------------------------
// Prompt sets (JSON):
//   {"attribute_name": "gender", "template": "A photo of a/an {}",
//    "attribute_classes": 2, "prompts": ["woman", "man"]}

inline constexpr const char* kDefaultPromptTemplate = "A photo of a/an {}";

struct PromptSet {
  std::string attribute_name;
  std::string prompt_template = kDefaultPromptTemplate;
  std::vector<std::string> prompts;
  std::optional<std::size_t> attribute_classes;

  // A defaults to the prompt count when the set does not declare it.
  std::size_t attribute_count() const { return attribute_classes.value_or(prompts.size()); }

  std::string render(std::size_t i) const {
    const auto pos = prompt_template.find("{}");
    return prompt_template.substr(0, pos) + prompts.at(i) + prompt_template.substr(pos + 2);
  }

  void validate() const {
    if (prompts.empty()) throw ConfigError("attribute_proxy: prompt set has no prompts");
    std::set<std::string> seen;
    for (const auto& p : prompts) {
      if (p.empty()) throw ConfigError("attribute_proxy: empty prompt");
      if (!seen.insert(p).second) throw ConfigError("attribute_proxy: duplicate prompt '" + p + "'");
    }
    const auto first = prompt_template.find("{}");
    if (first == std::string::npos || prompt_template.find("{}", first + 2) != std::string::npos) {
      throw ConfigError("attribute_proxy: template needs exactly one {} placeholder");
    }
    if (attribute_classes && *attribute_classes == 0) {
      throw ConfigError("attribute_proxy: attribute_classes must be >= 1");
    }
  }
};

inline PromptSet parse_prompt_set(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attribute_proxy: prompt set is not valid JSON: ") + e.what());
  }
  PromptSet ps;
  try {
    ps.attribute_name = j.at("attribute_name").get<std::string>();
    if (j.contains("template")) ps.prompt_template = j.at("template").get<std::string>();
    ps.prompts = j.at("prompts").get<std::vector<std::string>>();
    if (j.contains("attribute_classes")) {
      ps.attribute_classes = j.at("attribute_classes").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attribute_proxy: prompt set field error: ") + e.what());
  }
  ps.validate();
  return ps;
}

inline PromptSet load_prompt_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("attribute_proxy: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_prompt_set(ss.str());
}

// ---------------------------------------------------------------------------
// Pseudo groups.

class PseudoGrouping {
 public:
  PseudoGrouping() = default;

  // `samples` are dataset rows; `assignments[i]` is the cluster of
  // samples[i]; `cluster_class[k]` is the target class owning cluster k.
  PseudoGrouping(std::vector<std::size_t> samples, std::vector<int> assignments,
                 std::vector<int> cluster_class)
      : samples_(std::move(samples)),
        assignments_(std::move(assignments)),
        cluster_class_(std::move(cluster_class)) {
    if (samples_.size() != assignments_.size()) {
      throw DomainError("attribute_proxy: grouping samples/assignments length mismatch");
    }
    const std::size_t k = cluster_class_.size();
    members_.assign(k, {});
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const int a = assignments_[i];
      if (a < 0 || static_cast<std::size_t>(a) >= k) {
        throw DomainError("attribute_proxy: cluster id " + std::to_string(a) + " out of range");
      }
      if (!seen.insert(samples_[i]).second) {
        throw DomainError("attribute_proxy: sample " + std::to_string(samples_[i]) +
                          " assigned twice");
      }
      members_[static_cast<std::size_t>(a)].push_back(samples_[i]);
    }
    int top_class = -1;
    for (int c : cluster_class_) top_class = std::max(top_class, c);
    per_class_.assign(static_cast<std::size_t>(top_class + 1), {});
    for (std::size_t c = 0; c < k; ++c) {
      per_class_[static_cast<std::size_t>(cluster_class_[c])].push_back(static_cast<int>(c));
    }
  }

  std::size_t num_clusters() const { return cluster_class_.size(); }
  const std::vector<std::size_t>& samples() const { return samples_; }
  const std::vector<int>& assignments() const { return assignments_; }
  const std::vector<int>& cluster_class() const { return cluster_class_; }
  const std::vector<std::vector<int>>& per_class() const { return per_class_; }
  const std::vector<std::size_t>& members(std::size_t cluster) const { return members_[cluster]; }

  // Cluster id per dataset row (-1 for rows outside the grouping).
  std::vector<int> cluster_of_rows(std::size_t rows) const {
    std::vector<int> out(rows, -1);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (samples_[i] >= rows) throw DomainError("attribute_proxy: grouping row out of range");
      out[samples_[i]] = assignments_[i];
    }
    return out;
  }

  // Checks that every cluster lies inside the class recorded for it.
  void check_nested(const Dataset& ds) const {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const int owner = cluster_class_[static_cast<std::size_t>(assignments_[i])];
      if (ds.target(samples_[i]) != owner) {
        throw DataError("attribute_proxy: sample " + ds.manifest()[samples_[i]].id +
                        " has target " + std::to_string(ds.target(samples_[i])) +
                        " but its cluster belongs to class " + std::to_string(owner));
      }
    }
  }

  // Filled by build_pseudo_groups; empty for groupings built from labels.
  std::vector<std::vector<double>> centroids;
  std::vector<double> class_inertia;

 private:
  std::vector<std::size_t> samples_;
  std::vector<int> assignments_;
  std::vector<int> cluster_class_;
  std::vector<std::vector<int>> per_class_;
  std::vector<std::vector<std::size_t>> members_;
};

inline std::size_t default_cluster_count(std::size_t attribute_classes, std::size_t targets) {
  return attribute_classes * targets;
}

// Per-class k-means on score columns, k = K / T per class. Cluster ids are
// global: class c owns ids [c*k, (c+1)*k).
inline PseudoGrouping build_pseudo_groups(const Dataset& ds, const ScoreMatrix& scores,
                                          std::size_t K, std::uint64_t seed,
                                          Split split = Split::train) {
  const std::size_t T = ds.num_targets();
  if (T == 0) throw DataError("attribute_proxy: dataset has no target classes");
  if (K == 0 || K % T != 0) {
    throw ConfigError("attribute_proxy: K=" + std::to_string(K) +
                      " is not a positive multiple of the " + std::to_string(T) +
                      " target classes");
  }
  if (scores.samples() != ds.size()) {
    throw DomainError("attribute_proxy: score matrix has " + std::to_string(scores.samples()) +
                      " columns for " + std::to_string(ds.size()) + " samples");
  }
  const std::size_t per = K / T;
  const std::size_t C = scores.prompts();
  std::vector<std::size_t> samples;
  std::vector<int> assignments;
  std::vector<int> cluster_class(K);
  std::vector<std::vector<double>> centroids(K);
  std::vector<double> inertia(T, 0.0);
  for (std::size_t c = 0; c < T; ++c) {
    std::vector<std::size_t> rows;
    for (auto i : ds.indices(split)) {
      if (static_cast<std::size_t>(ds.target(i)) == c) rows.push_back(i);
    }
    if (rows.size() < per) {
      throw DomainError("attribute_proxy: class " + std::to_string(c) + " has " +
                        std::to_string(rows.size()) + " samples, fewer than " +
                        std::to_string(per) + " clusters");
    }
    std::vector<double> feats;
    feats.reserve(rows.size() * C);
    for (auto i : rows) {
      for (std::size_t p = 0; p < C; ++p) feats.push_back(scores(p, i));
    }
    KMeansOptions opts;
    opts.k = per;
    opts.seed = derive_seed(seed, "pseudo_groups", c);
    const KMeansResult km = kmeans(feats, C, opts);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      samples.push_back(rows[r]);
      assignments.push_back(static_cast<int>(c * per) + km.assignments[r]);
    }
    for (std::size_t l = 0; l < per; ++l) {
      cluster_class[c * per + l] = static_cast<int>(c);
      centroids[c * per + l].assign(km.centroids.begin() + static_cast<std::ptrdiff_t>(l * C),
                                    km.centroids.begin() + static_cast<std::ptrdiff_t>((l + 1) * C));
    }
    inertia[c] = km.inertia;
  }
  PseudoGrouping g(std::move(samples), std::move(assignments), std::move(cluster_class));
  g.centroids = std::move(centroids);
  g.class_inertia = std::move(inertia);
  return g;
}

// Intersects arbitrary per-sample labels with target classes. One cluster is
// created per non-empty (class, label) pair, ordered by class then label.
inline PseudoGrouping grouping_from_labels(const Dataset& ds, std::span<const std::size_t> rows,
                                           std::span<const long> labels) {
  if (rows.size() != labels.size()) {
    throw DomainError("attribute_proxy: rows/labels length mismatch");
  }
  std::map<std::pair<int, long>, int> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) ids.emplace(std::pair{ds.target(rows[i]), labels[i]}, 0);
  std::vector<int> cluster_class;
  for (auto& [key, id] : ids) {
    id = static_cast<int>(cluster_class.size());
    cluster_class.push_back(key.first);
  }
  std::vector<int> assignments(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    assignments[i] = ids.at({ds.target(rows[i]), labels[i]});
  }
  return PseudoGrouping({rows.begin(), rows.end()}, std::move(assignments), std::move(cluster_class));
}

// One cluster per target class over `split`.
inline PseudoGrouping class_grouping(const Dataset& ds, Split split = Split::train) {
  const auto& rows = ds.indices(split);
  std::vector<long> labels(rows.size(), 0);
  return grouping_from_labels(ds, rows, labels);
}

// Cluster file: header "id<TAB>cluster<TAB>target", one line per sample.
inline std::string format_clusters(const Dataset& ds, const PseudoGrouping& g) {
  std::ostringstream out;
  out << "id\tcluster\ttarget\n";
  for (std::size_t i = 0; i < g.samples().size(); ++i) {
    const auto row = g.samples()[i];
    out << ds.manifest()[row].id << '\t' << g.assignments()[i] << '\t' << ds.target(row) << '\n';
  }
  return out.str();
}

inline PseudoGrouping parse_clusters(std::istream& in, const Dataset& ds) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < ds.size(); ++i) row_of.emplace(ds.manifest()[i].id, i);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::vector<std::size_t> rows;
  std::vector<int> assignments;
  std::map<int, int> owner;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto f = detail::split_tabs(line);
    if (!header) {
      if (f.size() != 3 || f[0] != "id" || f[1] != "cluster" || f[2] != "target") {
        throw FormatError("attribute_proxy: cluster file header must be 'id, cluster, target'");
      }
      header = true;
      continue;
    }
    if (f.size() != 3) {
      throw FormatError("attribute_proxy: cluster file line " + std::to_string(line_no) +
                        " needs 3 fields");
    }
    const auto it = row_of.find(std::string(f[0]));
    if (it == row_of.end()) {
      throw DataError("attribute_proxy: cluster file names unknown id '" + std::string(f[0]) + "'");
    }
    const int cluster = detail::parse_index(f[1], "cluster", line_no);
    const int target = detail::parse_index(f[2], "target", line_no);
    if (target != ds.target(it->second)) {
      throw DataError("attribute_proxy: cluster file target for '" + std::string(f[0]) +
                      "' disagrees with the manifest");
    }
    auto [pos, inserted] = owner.emplace(cluster, target);
    if (!inserted && pos->second != target) {
      throw DataError("attribute_proxy: cluster " + std::to_string(cluster) +
                      " spans several target classes");
    }
    rows.push_back(it->second);
    assignments.push_back(cluster);
  }
  if (!header) throw FormatError("attribute_proxy: cluster file has no header");
  const int k = owner.empty() ? 0 : owner.rbegin()->first + 1;
  if (static_cast<std::size_t>(k) != owner.size()) {
    throw DataError("attribute_proxy: cluster ids are not contiguous from 0");
  }
  std::vector<int> cluster_class(static_cast<std::size_t>(k));
  for (auto [c, t] : owner) cluster_class[static_cast<std::size_t>(c)] = t;
  return PseudoGrouping(std::move(rows), std::move(assignments), std::move(cluster_class));
}

inline PseudoGrouping load_clusters(const std::filesystem::path& path, const Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw FormatError("attribute_proxy: cannot open " + path.string());
  return parse_clusters(in, ds);
}

}  // namespace clipdebias
