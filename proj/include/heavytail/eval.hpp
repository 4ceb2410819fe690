#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/model.hpp"

namespace heavytail {

struct EvalReport {
  std::string method;
  std::vector<std::uint64_t> seeds;
  double overall = 0.0;  // percentages
  double head = 0.0;
  double tail = 0.0;
  std::vector<double> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::size_t num_examples = 0;
};

// Top-1 accuracy with head/tail breakdown. Argmax ties break toward the
// lowest class index so reruns are reproducible. Head and tail accuracies
// are unweighted means over each group's classes.
inline EvalReport evaluate(const Model& model, const LongTailDataset& test,
                           const HeadTailPartition& part,
                           std::string method = "",
                           std::vector<std::uint64_t> seeds = {}) {
  if (test.feature_dim() != model.input_dim()) {
    throw ShapeError("evaluate: test feature dim " +
                     std::to_string(test.feature_dim()) +
                     " does not match checkpoint input dim " +
                     std::to_string(model.input_dim()));
  }
  if (test.num_classes() != model.num_classes()) {
    throw ShapeError("evaluate: test has " +
                     std::to_string(test.num_classes()) +
                     " classes, checkpoint has " +
                     std::to_string(model.num_classes()));
  }
  if (part.is_head.size() != test.num_classes()) {
    throw ParameterError("evaluate: partition does not cover the test set");
  }
  bool balanced = true;
  for (std::size_t c = 1; c < test.num_classes(); ++c) {
    if (test.count(c) != test.count(0)) balanced = false;
  }
  if (!balanced) {
    std::cerr << "warning: test set is not class-balanced; head/tail "
                 "accuracies are unweighted class means\n";
  }

  const std::size_t c = test.num_classes();
  EvalReport report;
  report.method = std::move(method);
  report.seeds = std::move(seeds);
  report.confusion.assign(c, std::vector<std::size_t>(c, 0));
  report.num_examples = test.size();

  Tape tape;
  auto bound = const_cast<Model&>(model).bind(tape, false);
  for (const auto& ex : test.examples()) {
    auto f = model.features(tape, bound,
                            tape.input(Tensor::from_vector(ex.features)));
    const auto& logits = tape.value(model.logits(tape, bound, f)).data;
    std::size_t pred = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
      if (logits[j] > logits[pred]) pred = j;
    }
    report.confusion[static_cast<std::size_t>(ex.label)][pred] += 1;
  }

  report.per_class.assign(c, 0.0);
  std::size_t correct = 0;
  for (std::size_t y = 0; y < c; ++y) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < c; ++p) row += report.confusion[y][p];
    correct += report.confusion[y][y];
    report.per_class[y] =
        row == 0 ? 0.0
                 : 100.0 * static_cast<double>(report.confusion[y][y]) /
                       static_cast<double>(row);
  }
  report.overall = test.size() == 0
                       ? 0.0
                       : 100.0 * static_cast<double>(correct) /
                             static_cast<double>(test.size());
  auto group_mean = [&](const std::vector<std::size_t>& classes) {
    double sum = 0.0;
    std::size_t populated = 0;
    for (std::size_t cls : classes) {
      if (test.count(cls) == 0) continue;  // absent from the test set
      sum += report.per_class[cls];
      ++populated;
    }
    return populated == 0 ? 0.0 : sum / static_cast<double>(populated);
  };
  report.head = group_mean(part.head);
  report.tail = group_mean(part.tail);
  return report;
}

// ---- aggregate tables ---------------------------------------------------------

struct MethodStats {
  std::string method;
  std::size_t runs = 0;
  double head_mean = 0, head_std = 0;
  double tail_mean = 0, tail_std = 0;
  double overall_mean = 0, overall_std = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / (n - 1.0))};
}

}  // namespace detail

// Groups reports by method label, preserving first-appearance order.
inline std::vector<MethodStats> summarize(
    const std::vector<EvalReport>& reports) {
  std::vector<MethodStats> out;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    bool seen = false;
    for (const auto& m : order) seen = seen || m == r.method;
    if (!seen) order.push_back(r.method);
  }
  for (const auto& name : order) {
    std::vector<double> heads, tails, overalls;
    for (const auto& r : reports) {
      if (r.method != name) continue;
      heads.push_back(r.head);
      tails.push_back(r.tail);
      overalls.push_back(r.overall);
    }
    MethodStats s;
    s.method = name;
    s.runs = heads.size();
    std::tie(s.head_mean, s.head_std) = detail::mean_std(heads);
    std::tie(s.tail_mean, s.tail_std) = detail::mean_std(tails);
    std::tie(s.overall_mean, s.overall_std) = detail::mean_std(overalls);
    out.push_back(s);
  }
  return out;
}

inline std::string render_comparison(const std::vector<EvalReport>& reports) {
  const auto stats = summarize(reports);
  std::size_t width = 8;
  for (const auto& s : stats) width = std::max(width, s.method.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width + 2)) << "method"
     << std::right << std::setw(16) << "head" << std::setw(16) << "tail"
     << std::setw(16) << "overall" << "\n";
  os << std::string(width + 2 + 48, '-') << "\n";
  auto cell = [](double mean, double sd) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << mean << " +- "
      << std::setprecision(2) << sd;
    return c.str();
  };
  for (const auto& s : stats) {
    os << std::left << std::setw(static_cast<int>(width + 2)) << s.method
       << std::right << std::setw(16) << cell(s.head_mean, s.head_std)
       << std::setw(16) << cell(s.tail_mean, s.tail_std) << std::setw(16)
       << cell(s.overall_mean, s.overall_std) << "\n";
  }
  return os.str();
}

// Ablation table in toggle-mark form, one row per arm.
struct AblationRow {
  bool eis = false;
  bool cn = false;
  bool iloss = false;
  std::vector<EvalReport> reports;
};

inline std::string render_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(5) << "EIS" << std::setw(5) << "CN"
     << std::setw(8) << "I-Loss" << std::right << std::setw(16) << "head"
     << std::setw(16) << "tail" << std::setw(16) << "overall" << "\n";
  os << std::string(66, '-') << "\n";
  auto cell = [](double mean, double sd) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << mean << " +- "
      << std::setprecision(2) << sd;
    return c.str();
  };
  for (const auto& row : rows) {
    const auto stats = summarize(row.reports);
    const MethodStats s = stats.empty() ? MethodStats{} : stats.front();
    os << std::left << std::setw(5) << (row.eis ? "x" : "-") << std::setw(5)
       << (row.cn ? "x" : "-") << std::setw(8) << (row.iloss ? "x" : "-")
       << std::right << std::setw(16) << cell(s.head_mean, s.head_std)
       << std::setw(16) << cell(s.tail_mean, s.tail_std) << std::setw(16)
       << cell(s.overall_mean, s.overall_std) << "\n";
  }
  return os.str();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["seeds"] = r.seeds;
  j["overall"] = r.overall;
  j["head"] = r.head;
  j["tail"] = r.tail;
  j["per_class"] = r.per_class;
  j["confusion"] = r.confusion;
  j["num_examples"] = r.num_examples;
  return j;
}

inline nlohmann::json comparison_json(const std::vector<EvalReport>& reports) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& s : summarize(reports)) {
    nlohmann::json row;
    row["method"] = s.method;
    row["runs"] = s.runs;
    row["head_mean"] = s.head_mean;
    row["head_std"] = s.head_std;
    row["tail_mean"] = s.tail_mean;
    row["tail_std"] = s.tail_std;
    row["overall_mean"] = s.overall_mean;
    row["overall_std"] = s.overall_std;
    j["rows"].push_back(row);
  }
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(report_to_json(r));
  return j;
}

// ---- embedding export ----------------------------------------------------------
//
//   emb v1 <d>
//   <label> <v_1> ... <v_d>     (normalized features, one row per example)

inline void export_embeddings(const Model& model, const LongTailDataset& ds,
                              const std::set<int>& class_filter,
                              std::ostream& out) {
  if (ds.feature_dim() != model.input_dim()) {
    throw ShapeError("export_embeddings: dataset feature dim does not match "
                     "the checkpoint");
  }
  out << "emb v1 " << model.embed_dim() << "\n";
  for (const auto& ex : ds.examples()) {
    if (!class_filter.empty() && !class_filter.count(ex.label)) continue;
    const auto f = model.feature_values(ex.features);
    double sq = 0.0;
    for (double v : f) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw DegenerateInputError(
          "export_embeddings: zero feature vector encountered");
    }
    out << ex.label;
    for (double v : f) out << " " << detail::fmt_double(v / norm);
    out << "\n";
  }
}

inline void export_embeddings(const Model& model, const LongTailDataset& ds,
                              const std::set<int>& class_filter,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("export_embeddings: cannot open " + path);
  export_embeddings(model, ds, class_filter, out);
}

}  // namespace heavytail
