#include "pclc/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "pclc/error.hpp"
#include "pclc/tagger.hpp"

namespace pclc {

std::vector<SpanPrediction> gold_spans(const Utterance& utterance) {
  std::vector<SpanPrediction> out;
  for (const auto& s : extract_spans(utterance.bio)) out.push_back({s.start, s.end, utterance.slot_types[s.start]});
  return out;
}

double Counts::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }

double Counts::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }

double Counts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace {

void check_disjoint(std::vector<SpanPrediction> spans, std::size_t utterance) {
  std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].end < spans[i].start) {
      throw Error("span_f1", "utterance " + std::to_string(utterance) + ": span end precedes start");
    }
    if (i > 0 && spans[i].start <= spans[i - 1].end) {
      throw Error("span_f1", "utterance " + std::to_string(utterance) + ": overlapping predicted spans");
    }
  }
}

}  // namespace

EvalReport span_f1(const SpanSets& gold, const SpanSets& predicted) {
  if (gold.size() != predicted.size()) {
    throw Error("span_f1", "gold has " + std::to_string(gold.size()) + " utterances, predictions " +
                               std::to_string(predicted.size()));
  }
  EvalReport report;
  for (std::size_t u = 0; u < gold.size(); ++u) {
    check_disjoint(predicted[u], u);
    std::vector<bool> used(gold[u].size(), false);
    for (const auto& p : predicted[u]) {
      bool hit = false;
      for (std::size_t g = 0; g < gold[u].size(); ++g) {
        if (!used[g] && gold[u][g] == p) {
          used[g] = true;
          hit = true;
          break;
        }
      }
      auto& c = report.per_type[p.label];
      hit ? ++c.tp : ++c.fp;
    }
    for (std::size_t g = 0; g < gold[u].size(); ++g)
      if (!used[g]) ++report.per_type[gold[u][g].label].fn;
  }
  for (const auto& [label, c] : report.per_type) report.overall += c;
  return report;
}

EvalReport seen_unseen_report(EvalReport report, const std::vector<std::string>& seen,
                              const std::vector<std::string>& unseen) {
  const std::set<std::string> seen_set(seen.begin(), seen.end());
  const std::set<std::string> unseen_set(unseen.begin(), unseen.end());
  report.seen = {};
  report.unseen = {};
  for (const auto& [label, c] : report.per_type) {
    if (seen_set.count(label)) report.seen += c;
    else if (unseen_set.count(label)) report.unseen += c;
    else throw Error("seen_unseen_report", "slot type '" + label + "' is neither seen nor unseen");
  }
  return report;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double", "conversion failed");
  return std::string(buf, end);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw Error("parse_double", "not a number: '" + text + "'");
  return v;
}

void write_report_text(std::ostream& out, const EvalReport& report) {
  auto pct = [](double x) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << 100.0 * x;
    return s.str();
  };
  out << "domain: " << report.domain << "  setting: " << report.setting << "\n";
  out << "overall  P " << pct(report.precision()) << "  R " << pct(report.recall()) << "  F1 " << pct(report.f1())
      << "  (tp " << report.overall.tp << ", fp " << report.overall.fp << ", fn " << report.overall.fn << ")\n";
  out << "seen     F1 " << pct(report.seen.f1()) << "  (tp " << report.seen.tp << ", fp " << report.seen.fp
      << ", fn " << report.seen.fn << ")\n";
  out << "unseen   F1 " << pct(report.unseen.f1()) << "  (tp " << report.unseen.tp << ", fp " << report.unseen.fp
      << ", fn " << report.unseen.fn << ")\n";
  for (const auto& [label, c] : report.per_type) {
    out << "  " << label << "  F1 " << pct(c.f1()) << "  (tp " << c.tp << ", fp " << c.fp << ", fn " << c.fn << ")\n";
  }
}

void write_report_kv(std::ostream& out, const EvalReport& report) {
  auto counts = [&](const std::string& prefix, const Counts& c) {
    out << prefix << ".tp=" << c.tp << "\n" << prefix << ".fp=" << c.fp << "\n" << prefix << ".fn=" << c.fn << "\n";
    out << prefix << ".precision=" << format_double(c.precision()) << "\n";
    out << prefix << ".recall=" << format_double(c.recall()) << "\n";
    out << prefix << ".f1=" << format_double(c.f1()) << "\n";
  };
  out << "domain=" << report.domain << "\n";
  out << "setting=" << report.setting << "\n";
  counts("overall", report.overall);
  counts("seen", report.seen);
  counts("unseen", report.unseen);
  for (const auto& [label, c] : report.per_type) counts("type." + label, c);
}

void export_prototypes(std::ostream& out, const ad::Tensor& prototypes, const PrototypeLayout& layout) {
  if (prototypes.rows() != layout.rows()) {
    throw Error("export_prototypes", "matrix has " + std::to_string(prototypes.rows()) + " rows, layout " +
                                         std::to_string(layout.rows()));
  }
  for (std::size_t r = 0; r < prototypes.rows(); ++r) {
    out << layout.label(r) << '\t' << block_name(layout.block(r));
    for (std::size_t c = 0; c < prototypes.cols(); ++c) out << '\t' << format_double(prototypes(r, c));
    out << '\n';
  }
}

void export_prototypes(const std::filesystem::path& path, const ad::Tensor& prototypes, const PrototypeLayout& layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("export_prototypes", "cannot write " + path.string());
  export_prototypes(out, prototypes, layout);
  if (!out) throw Error("export_prototypes", "write failed for " + path.string());
}

std::vector<ExportedPrototype> read_prototypes(std::istream& in) {
  std::vector<ExportedPrototype> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() < 3) throw Error("read_prototypes", "row with fewer than 3 columns");
    ExportedPrototype p;
    p.label = fields[0];
    if (fields[1] == "source") p.block = Block::kSource;
    else if (fields[1] == "target") p.block = Block::kTarget;
    else throw Error("read_prototypes", "unknown block '" + fields[1] + "'");
    for (std::size_t i = 2; i < fields.size(); ++i) p.values.push_back(parse_double(fields[i]));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pclc
