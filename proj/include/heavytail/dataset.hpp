#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "heavytail/errors.hpp"
#include "heavytail/rng.hpp"

namespace heavytail {

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

// Labeled examples plus the per-class index and instance counts. Immutable
// after construction, so datasets are freely shareable across threads.
class LongTailDataset {
 public:
  LongTailDataset() = default;

  static LongTailDataset from_examples(std::size_t num_classes,
                                       std::size_t feature_dim,
                                       std::vector<LabeledExample> examples) {
    LongTailDataset ds;
    ds.num_classes_ = num_classes;
    ds.feature_dim_ = feature_dim;
    ds.examples_ = std::move(examples);
    ds.index_.assign(num_classes, {});
    for (std::size_t i = 0; i < ds.examples_.size(); ++i) {
      const auto& ex = ds.examples_[i];
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) {
        throw IndexError("dataset: label " + std::to_string(ex.label) +
                         " out of range for " + std::to_string(num_classes) +
                         " classes");
      }
      if (ex.features.size() != feature_dim) {
        throw ShapeError("dataset: example " + std::to_string(i) + " has " +
                         std::to_string(ex.features.size()) +
                         " features, expected " + std::to_string(feature_dim));
      }
      ds.index_[static_cast<std::size_t>(ex.label)].push_back(i);
    }
    ds.counts_.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      ds.counts_[c] = ds.index_[c].size();
    }
    return ds;
  }

  std::size_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const std::vector<LabeledExample>& examples() const { return examples_; }
  const LabeledExample& example(std::size_t i) const {
    return examples_.at(i);
  }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t count(std::size_t c) const { return counts_.at(c); }
  const std::vector<std::size_t>& class_index(std::size_t c) const {
    return index_.at(c);
  }

  // Min over classes that have at least one instance; classes may be empty
  // after file ingestion, and those do not define the imbalance bounds.
  std::size_t n_min() const {
    std::size_t m = std::numeric_limits<std::size_t>::max();
    for (std::size_t c : counts_) {
      if (c >= 1) m = std::min(m, c);
    }
    if (m == std::numeric_limits<std::size_t>::max()) {
      throw ParameterError("n_min: dataset has no populated class");
    }
    return m;
  }

  std::size_t n_max() const {
    std::size_t m = 0;
    for (std::size_t c : counts_) m = std::max(m, c);
    return m;
  }

 private:
  std::size_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<LabeledExample> examples_;
  std::vector<std::vector<std::size_t>> index_;
  std::vector<std::size_t> counts_;
};

// ---- synthetic generation --------------------------------------------------

namespace detail {
constexpr std::uint64_t kMeansStream = 0x6d65616e73ull;  // "means"
constexpr std::uint64_t kDrawStream = 0x64726177ull;     // "draw"
}  // namespace detail

// Per-class cluster centers: unit random directions scaled by `separation`.
// Exposed so a balanced test set can share centers with a training set by
// passing the same cluster seed.
inline std::vector<std::vector<double>> synthetic_class_means(
    std::size_t num_classes, std::size_t feature_dim, double separation,
    std::uint64_t cluster_seed) {
  Rng rng(derive_seed(cluster_seed, {detail::kMeansStream}));
  std::vector<std::vector<double>> means(num_classes,
                                         std::vector<double>(feature_dim));
  for (auto& mean : means) {
    double sq = 0.0;
    for (auto& v : mean) {
      v = rng.normal();
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    for (auto& v : mean) v = separation * v / norm;
  }
  return means;
}

// Exponential class-count profile: n_i = round(n_max * mu^(i / (C-1))) with
// mu = 1 / imbalance_factor, rounded half-up and clamped to >= 1.
inline std::vector<std::size_t> exponential_counts(std::size_t num_classes,
                                                   std::size_t n_max,
                                                   double imbalance_factor) {
  if (num_classes < 2) {
    throw ParameterError("exponential_counts: need at least 2 classes");
  }
  if (imbalance_factor < 1.0) {
    throw ParameterError("exponential_counts: imbalance factor must be >= 1");
  }
  if (static_cast<double>(n_max) < imbalance_factor) {
    throw ParameterError(
        "exponential_counts: n_max below the imbalance factor would produce "
        "a zero-count class");
  }
  const double mu = 1.0 / imbalance_factor;
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) {
    const double exact =
        static_cast<double>(n_max) *
        std::pow(mu, static_cast<double>(i) /
                         static_cast<double>(num_classes - 1));
    const long long rounded = std::llround(exact);  // half away from zero
    counts[i] = static_cast<std::size_t>(std::max(1ll, rounded));
  }
  return counts;
}

struct SyntheticOpts {
  double separation = 3.0;
  // When set, cluster centers come from this seed instead of `seed`; lets a
  // held-out balanced test set share the training clusters.
  std::optional<std::uint64_t> cluster_seed;
};

inline LongTailDataset generate_synthetic(std::size_t num_classes,
                                          std::size_t n_max,
                                          double imbalance_factor,
                                          std::size_t feature_dim,
                                          std::uint64_t seed,
                                          const SyntheticOpts& opts = {}) {
  if (feature_dim == 0) {
    throw ParameterError("generate_synthetic: feature_dim must be positive");
  }
  const auto counts = exponential_counts(num_classes, n_max, imbalance_factor);
  const auto means = synthetic_class_means(
      num_classes, feature_dim, opts.separation,
      opts.cluster_seed.value_or(seed));
  Rng rng(derive_seed(seed, {detail::kDrawStream}));
  std::vector<LabeledExample> examples;
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  examples.reserve(total);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < counts[c]; ++k) {
      LabeledExample ex;
      ex.label = static_cast<int>(c);
      ex.features.resize(feature_dim);
      for (std::size_t j = 0; j < feature_dim; ++j) {
        ex.features[j] = means[c][j] + rng.normal();
      }
      examples.push_back(std::move(ex));
    }
  }
  return LongTailDataset::from_examples(num_classes, feature_dim,
                                        std::move(examples));
}

// ---- head / tail partition --------------------------------------------------

enum class PartitionRule { CountThreshold, MedianSplit };

struct HeadTailPartition {
  std::vector<std::size_t> head;
  std::vector<std::size_t> tail;
  PartitionRule rule = PartitionRule::CountThreshold;
  std::size_t threshold = 0;  // k for CountThreshold
  std::vector<bool> is_head;  // indexed by class

  bool head_class(std::size_t c) const { return is_head.at(c); }
};

inline HeadTailPartition partition_head_tail(const LongTailDataset& ds,
                                             PartitionRule rule,
                                             std::size_t k = 0) {
  if (ds.empty()) {
    throw ParameterError("partition_head_tail: empty dataset");
  }
  const auto& counts = ds.counts();
  HeadTailPartition part;
  part.rule = rule;
  part.is_head.assign(counts.size(), false);
  if (rule == PartitionRule::CountThreshold) {
    part.threshold = k;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      part.is_head[c] = counts[c] >= k;
    }
  } else {
    std::vector<std::size_t> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                   : 0.5 * (static_cast<double>(sorted[n / 2 - 1]) +
                            static_cast<double>(sorted[n / 2]));
    for (std::size_t c = 0; c < counts.size(); ++c) {
      part.is_head[c] = static_cast<double>(counts[c]) > median;
    }
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    (part.is_head[c] ? part.head : part.tail).push_back(c);
  }
  if (part.head.empty() || part.tail.empty()) {
    throw DegenerateInputError(
        "partition_head_tail: all classes fall on one side");
  }
  return part;
}

// ---- file format -------------------------------------------------------------
//
//   ltds v1 <num_classes> <feature_dim> <num_examples>
//   <label> <f_1> ... <f_d>      (one line per example, decimal floats)

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty()) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad numeric value '" + tok + "'");
  }
  return v;
}

inline long long parse_int(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || tok.empty()) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad integer value '" + tok + "'");
  }
  return v;
}

}  // namespace detail

inline void save_dataset(const LongTailDataset& ds, std::ostream& out) {
  out << "ltds v1 " << ds.num_classes() << " " << ds.feature_dim() << " "
      << ds.size() << "\n";
  for (const auto& ex : ds.examples()) {
    out << ex.label;
    for (double f : ex.features) out << " " << detail::fmt_double(f);
    out << "\n";
  }
}

inline void save_dataset(const LongTailDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_dataset: cannot open " + path);
  save_dataset(ds, out);
  if (!out) throw IoError("save_dataset: write failed for " + path);
}

inline LongTailDataset load_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("line 1: missing header");
  }
  std::istringstream head(line);
  std::string magic, version;
  long long num_classes = 0, feature_dim = 0, num_examples = 0;
  if (!(head >> magic >> version >> num_classes >> feature_dim >>
        num_examples) ||
      magic != "ltds" || version != "v1" || num_classes < 1 ||
      feature_dim < 1 || num_examples < 0) {
    throw ParseError("line 1: malformed header '" + line + "'");
  }
  std::vector<LabeledExample> examples;
  examples.reserve(static_cast<std::size_t>(num_examples));
  for (long long i = 0; i < num_examples; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line)) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": unexpected end of file (expected " +
                       std::to_string(num_examples) + " examples)");
    }
    std::istringstream row(line);
    std::string tok;
    if (!(row >> tok)) {
      throw ParseError("line " + std::to_string(line_no) + ": empty row");
    }
    LabeledExample ex;
    const long long label = detail::parse_int(tok, line_no);
    if (label < 0 || label >= num_classes) {
      throw ParseError("line " + std::to_string(line_no) + ": label " +
                       std::to_string(label) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
    ex.label = static_cast<int>(label);
    while (row >> tok) {
      ex.features.push_back(detail::parse_double(tok, line_no));
    }
    if (ex.features.size() != static_cast<std::size_t>(feature_dim)) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(feature_dim) + " features, got " +
                       std::to_string(ex.features.size()));
    }
    examples.push_back(std::move(ex));
  }
  return LongTailDataset::from_examples(
      static_cast<std::size_t>(num_classes),
      static_cast<std::size_t>(feature_dim), std::move(examples));
}

inline LongTailDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_dataset: cannot open " + path);
  return load_dataset(in);
}

}  // namespace heavytail
