#pragma once

#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "forest.hpp"

namespace cpsids {

// Positive class is label 1 (anomalous).
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw DataError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predictions[i], t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) throw DataError("confusion: labels must be 0 or 1");
    if (t == 1) {
      (p == 1 ? m.tp : m.fn) += 1;
    } else {
      (p == 1 ? m.fp : m.tn) += 1;
    }
  }
  return m;
}

inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// A zero denominator makes that metric 0.
inline double f1_score(double precision, double recall) {
  return ratio(2.0 * recall * precision, recall + precision);
}

inline Metrics metrics(const ConfusionMatrix& m) {
  if (m.total() == 0) throw DataError("metrics of an empty confusion matrix");
  Metrics out;
  out.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  out.precision = ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fp));
  out.recall = ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fn));
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

struct IntensityRecall {
  std::size_t tp = 0;
  std::size_t fn = 0;
  double recall() const { return ratio(static_cast<double>(tp), static_cast<double>(tp + fn)); }
};

struct EvalReport {
  std::string model;
  ConfusionMatrix matrix;
  Metrics scores;
  std::map<double, IntensityRecall> by_intensity;  // empty when provenance is missing
  std::string warning;
};

inline std::vector<int> predict_all(const forest::Forest& model, const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& r : data.records) {
    const auto x = r.features();
    out.push_back(forest::predict(model, x));
  }
  return out;
}

inline EvalReport evaluate(const forest::Forest& model, const Dataset& test, std::string name = "model") {
  validate(test);
  EvalReport report;
  report.model = std::move(name);
  const auto predicted = predict_all(model, test);
  std::vector<int> truth;
  truth.reserve(test.size());
  for (const auto& r : test.records) truth.push_back(r.label);
  report.matrix = confusion(predicted, truth);
  report.scores = metrics(report.matrix);

  bool complete = true;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (truth[i] != 1) continue;
    const auto& p = test.provenance[i];
    if (!p.known() || !p.intensity) {
      complete = false;
      break;
    }
    (predicted[i] == 1 ? report.by_intensity[*p.intensity].tp : report.by_intensity[*p.intensity].fn) += 1;
  }
  if (!complete) {
    report.by_intensity.clear();
    report.warning = "test set lacks provenance; per-intensity breakdown omitted";
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reporting

inline std::string fixed(double v, int decimals) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string percent_label(double intensity) {
  return format_double(std::round(intensity * 100.0 * 1e6) / 1e6) + "%";
}

// Plain-text block laid out like a confusion-matrix figure: rows are the true
// class, columns the predicted class.
inline void write_report(std::ostream& os, const EvalReport& r) {
  auto cell = [](std::size_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%12zu", v);
    return std::string(buf);
  };
  os << "model: " << r.model << '\n'
     << '\n'
     << "confusion matrix (rows: true class, columns: predicted class)\n"
     << "                   normal   anomalous\n"
     << "normal     " << cell(r.matrix.tn) << cell(r.matrix.fp) << '\n'
     << "anomalous  " << cell(r.matrix.fn) << cell(r.matrix.tp) << '\n'
     << '\n'
     << "TP " << r.matrix.tp << "  TN " << r.matrix.tn << "  FP " << r.matrix.fp << "  FN " << r.matrix.fn << '\n'
     << "accuracy  " << fixed(r.scores.accuracy * 100.0, 1) << '\n'
     << "precision " << fixed(r.scores.precision, 3) << '\n'
     << "recall    " << fixed(r.scores.recall, 3) << '\n'
     << "f1        " << fixed(r.scores.f1, 3) << '\n';
  if (!r.by_intensity.empty()) {
    os << '\n' << "recall by attack intensity\n";
    for (const auto& [eps, c] : r.by_intensity) {
      os << "  " << percent_label(eps) << "  " << fixed(c.recall(), 3) << "  (" << c.tp << '/' << c.tp + c.fn
         << ")\n";
    }
  }
  if (!r.warning.empty()) os << '\n' << "warning: " << r.warning << '\n';
}

struct Comparison {
  std::vector<EvalReport> rows;  // in model-name order
  std::string best;
  bool tie = false;
};

// Best model by F1; equal F1 goes to the first name in order.
inline Comparison compare(const std::map<std::string, EvalReport>& reports) {
  if (reports.empty()) throw DataError("nothing to compare");
  Comparison c;
  double best_f1 = -1.0;
  for (const auto& [name, r] : reports) {
    c.rows.push_back(r);
    if (r.scores.f1 > best_f1) {
      best_f1 = r.scores.f1;
      c.best = name;
      c.tie = false;
    } else if (r.scores.f1 == best_f1) {
      c.tie = true;
    }
  }
  return c;
}

inline void write_comparison_csv(std::ostream& os, const Comparison& c) {
  os << "Model,Accuracy,Precision,Recall,F1-Score\n";
  for (const auto& r : c.rows) {
    os << r.model << ',' << fixed(r.scores.accuracy * 100.0, 1) << ',' << fixed(r.scores.precision, 3) << ','
       << fixed(r.scores.recall, 3) << ',' << fixed(r.scores.f1, 3) << '\n';
  }
}

inline void write_comparison_table(std::ostream& os, const Comparison& c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s %9s %10s %8s %9s\n", "Model", "Accuracy", "Precision", "Recall",
                "F1-Score");
  os << buf;
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %9s %10s %8s %9s\n", r.model.c_str(),
                  fixed(r.scores.accuracy * 100.0, 1).c_str(), fixed(r.scores.precision, 3).c_str(),
                  fixed(r.scores.recall, 3).c_str(), fixed(r.scores.f1, 3).c_str());
    os << buf;
  }
  os << "best F1: " << c.best;
  if (c.tie) os << " (tie on F1, first by name)";
  os << '\n';
}

}  // namespace cpsids
