#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/slot_classifier.hpp"

namespace pclc {

struct SpanPrediction {
  std::size_t start;  // inclusive
  std::size_t end;    // inclusive
  std::string label;
  friend bool operator==(const SpanPrediction&, const SpanPrediction&) = default;
};

// One entry per utterance.
using SpanSets = std::vector<std::vector<SpanPrediction>>;

std::vector<SpanPrediction> gold_spans(const Utterance& utterance);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const;
  double recall() const;
  // 2PR / (P + R), or 0 when P + R == 0.
  double f1() const;
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct EvalReport {
  std::string domain;
  std::string setting;  // "zero-shot" or "few-shot-<k>"
  Counts overall;
  std::map<std::string, Counts> per_type;
  Counts seen;
  Counts unseen;

  double precision() const { return overall.precision(); }
  double recall() const { return overall.recall(); }
  double f1() const { return overall.f1(); }
};

// Exact-match scoring: a prediction is correct only if start, end and label
// all match a gold span. Overlapping predictions in one utterance are rejected.
EvalReport span_f1(const SpanSets& gold, const SpanSets& predicted);

// Fills the seen and unseen group counts from the per-type counts. False
// positives count against the group of their predicted label.
EvalReport seen_unseen_report(EvalReport report, const std::vector<std::string>& seen,
                              const std::vector<std::string>& unseen);

void write_report_text(std::ostream& out, const EvalReport& report);
// "key=value" lines.
void write_report_kv(std::ostream& out, const EvalReport& report);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

// TSV: label, block, then one column per dimension; rows in layout order.
void export_prototypes(std::ostream& out, const ad::Tensor& prototypes, const PrototypeLayout& layout);
void export_prototypes(const std::filesystem::path& path, const ad::Tensor& prototypes, const PrototypeLayout& layout);

struct ExportedPrototype {
  std::string label;
  Block block;
  std::vector<double> values;
};
std::vector<ExportedPrototype> read_prototypes(std::istream& in);

}  // namespace pclc
