#pragma once

// Sample manifest: one tab-separated record per line.
//
//   id<TAB>split<TAB>target<TAB>attribute
//   s0001<TAB>train<TAB>0<TAB>1
//   s0002<TAB>test<TAB>1<TAB>
//
// The header line is mandatory; the attribute column is optional and an
// empty cell (or "-") marks a sample without a sensitive-attribute label.
// Blank lines and lines starting with '#' are ignored.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "clipdebias/error.hpp"

namespace clipdebias {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view token) {
  if (token == "train") return Split::train;
  if (token == "val") return Split::val;
  if (token == "test") return Split::test;
  throw FormatError("data_model: unknown split token '" + std::string(token) + "'");
}

struct SampleRecord {
  std::string id;
  Split split = Split::train;
  int target = 0;
  std::optional<int> attribute;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

class Manifest {
 public:
  Manifest() = default;

  explicit Manifest(std::vector<SampleRecord> records) : records_(std::move(records)) {
    std::unordered_set<std::string> ids;
    std::set<int> targets;
    for (const auto& r : records_) {
      if (!ids.insert(r.id).second) throw DataError("data_model: duplicate id '" + r.id + "'");
      if (r.target < 0) throw DataError("data_model: negative target for '" + r.id + "'");
      if (r.attribute && *r.attribute < 0) {
        throw DataError("data_model: negative attribute for '" + r.id + "'");
      }
      targets.insert(r.target);
    }
    if (!targets.empty() && *targets.rbegin() + 1 != static_cast<int>(targets.size())) {
      throw DataError("data_model: target indices are not contiguous from 0");
    }
    num_targets_ = targets.size();
    for (Split s : {Split::train, Split::val, Split::test}) {
      std::size_t with = 0;
      std::size_t total = 0;
      for (const auto& r : records_) {
        if (r.split != s) continue;
        ++total;
        if (r.attribute) ++with;
      }
      if (with != 0 && with != total) {
        throw DataError("data_model: split '" + std::string(to_string(s)) +
                        "' has attribute labels on only " + std::to_string(with) + " of " +
                        std::to_string(total) + " samples");
      }
    }
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const SampleRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<SampleRecord>& records() const { return records_; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  std::size_t num_targets() const { return num_targets_; }

  // Number of attribute groups, taken as max label + 1. Zero when no sample
  // carries an attribute.
  std::size_t num_attributes() const {
    int top = -1;
    for (const auto& r : records_) {
      if (r.attribute) top = std::max(top, *r.attribute);
    }
    return static_cast<std::size_t>(top + 1);
  }

  // Positions of the samples in `split`, in manifest order.
  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (records_[i].split == split) out.push_back(i);
    }
    return out;
  }

  bool has_attributes(Split split) const {
    bool any = false;
    for (const auto& r : records_) {
      if (r.split != split) continue;
      if (!r.attribute) return false;
      any = true;
    }
    return any;
  }

  bool any_attributes() const {
    return std::any_of(records_.begin(), records_.end(),
                       [](const SampleRecord& r) { return r.attribute.has_value(); });
  }

  friend bool operator==(const Manifest& a, const Manifest& b) { return a.records_ == b.records_; }

 private:
  std::vector<SampleRecord> records_;
  std::size_t num_targets_ = 0;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline int parse_index(std::string_view token, const char* field, std::size_t line_no) {
  int value = 0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || token.empty()) {
    throw FormatError("data_model: line " + std::to_string(line_no) + ": bad " + field + " '" +
                      std::string(token) + "'");
  }
  return value;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool has_attribute_column = false;
  std::vector<SampleRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (!have_header) {
      if (fields.size() < 3 || fields[0] != "id" || fields[1] != "split" || fields[2] != "target" ||
          (fields.size() == 4 && fields[3] != "attribute") || fields.size() > 4) {
        throw FormatError("data_model: manifest header must be 'id, split, target[, attribute]'");
      }
      has_attribute_column = fields.size() == 4;
      have_header = true;
      continue;
    }
    const std::size_t expected = has_attribute_column ? 4 : 3;
    if (fields.size() != expected) {
      throw FormatError("data_model: line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(expected));
    }
    SampleRecord rec;
    rec.id = std::string(fields[0]);
    if (rec.id.empty()) {
      throw FormatError("data_model: line " + std::to_string(line_no) + ": empty id");
    }
    rec.split = parse_split(fields[1]);
    rec.target = detail::parse_index(fields[2], "target", line_no);
    if (has_attribute_column && !fields[3].empty() && fields[3] != "-") {
      rec.attribute = detail::parse_index(fields[3], "attribute", line_no);
    }
    records.push_back(std::move(rec));
  }
  if (!have_header) throw FormatError("data_model: manifest has no header line");
  return Manifest(std::move(records));
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("data_model: cannot open " + path.string());
  return parse_manifest(in);
}

inline std::string format_manifest(const Manifest& man) {
  std::ostringstream out;
  const bool with_attr = man.any_attributes();
  out << "id\tsplit\ttarget" << (with_attr ? "\tattribute" : "") << '\n';
  for (const auto& r : man) {
    out << r.id << '\t' << to_string(r.split) << '\t' << r.target;
    if (with_attr) {
      out << '\t';
      if (r.attribute) out << *r.attribute;
    }
    out << '\n';
  }
  return out.str();
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& man) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("data_model: cannot write " + path.string());
  out << format_manifest(man);
  if (!out) throw Error("data_model: write failed for " + path.string());
}

}  // namespace clipdebias
