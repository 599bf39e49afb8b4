#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pclc/cli.hpp"
#include "pclc/error.hpp"
#include "pclc/evaluator.hpp"
#include "pclc/run_config.hpp"
#include "pclc/slot_classifier.hpp"
#include "pclc/tagger.hpp"
#include "pclc/trainer.hpp"

namespace py = pybind11;
using namespace pclc;

namespace {

using Matrix = std::vector<std::vector<double>>;
using Spans = std::vector<std::vector<std::tuple<std::size_t, std::size_t, std::string>>>;

ad::Tensor to_tensor(const Matrix& m) {
  const std::size_t rows = m.size(), cols = rows == 0 ? 0 : m[0].size();
  ad::Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (m[r].size() != cols) throw Error("python", "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = m[r][c];
  }
  return t;
}

ad::Tensor to_row(const std::vector<double>& v) { return ad::Tensor::row(v); }

std::vector<Bio> to_bio(const std::vector<std::string>& tags) {
  std::vector<Bio> out;
  for (const auto& t : tags) {
    if (t == "O") out.push_back(Bio::kO);
    else if (t == "B") out.push_back(Bio::kB);
    else if (t == "I") out.push_back(Bio::kI);
    else throw Error("python", "tag must be O, B or I, got '" + t + "'");
  }
  return out;
}

std::vector<std::string> from_bio(const std::vector<Bio>& tags) {
  std::vector<std::string> out;
  for (auto t : tags) out.emplace_back(1, bio_letter(t));
  return out;
}

SpanSets to_span_sets(const Spans& in) {
  SpanSets out;
  for (const auto& u : in) {
    out.emplace_back();
    for (const auto& [s, e, label] : u) out.back().push_back({s, e, label});
  }
  return out;
}

py::dict counts_dict(const Counts& c) {
  py::dict d;
  d["tp"] = c.tp;
  d["fp"] = c.fp;
  d["fn"] = c.fn;
  d["precision"] = c.precision();
  d["recall"] = c.recall();
  d["f1"] = c.f1();
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d = counts_dict(r.overall);
  d["domain"] = r.domain;
  d["setting"] = r.setting;
  d["seen"] = counts_dict(r.seen);
  d["unseen"] = counts_dict(r.unseen);
  py::dict types;
  for (const auto& [label, c] : r.per_type) types[py::str(label)] = counts_dict(c);
  d["per_type"] = types;
  return d;
}

RunConfig config_from(const std::map<std::string, std::string>& settings) {
  RunConfig c;
  for (const auto& [k, v] : settings) c.set(k, v);
  return c;
}

KlDirection direction_from(const std::string& name) {
  if (name == "smooth_to_predicted") return KlDirection::kSmoothToPredicted;
  if (name == "predicted_to_smooth") return KlDirection::kPredictedToSmooth;
  throw Error("python", "unknown KL direction '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_pclc, m) {
  m.doc() = "Zero-shot slot filling with prototypical contrastive learning and label confusion";
  py::register_exception<Error>(m, "PclcError", PyExc_RuntimeError);

  m.def(
      "parse_conll",
      [](const std::string& text, const std::string& domain) {
        std::istringstream in(text);
        py::list out;
        for (const auto& u : parse_conll(in, domain)) {
          py::dict d;
          d["id"] = u.id;
          d["domain"] = u.domain;
          d["tokens"] = u.tokens;
          d["tags"] = from_bio(u.bio);
          d["slot_types"] = u.slot_types;
          out.append(d);
        }
        return out;
      },
      py::arg("text"), py::arg("domain") = "default");

  m.def("describe_slot", &describe_slot, py::arg("label"));

  m.def(
      "crf_log_partition",
      [](const Matrix& e, const Matrix& trans, const std::vector<double>& start, const std::vector<double>& end) {
        return crf_log_partition(to_tensor(e), to_tensor(trans), to_row(start), to_row(end));
      },
      py::arg("emissions"), py::arg("transitions"), py::arg("start"), py::arg("end"));

  m.def(
      "crf_nll",
      [](const Matrix& e, const std::vector<std::string>& gold, const Matrix& trans, const std::vector<double>& start,
         const std::vector<double>& end) {
        ad::Tape tape(ad::Mode::kEval);
        const CrfVars v{tape.constant(to_tensor(trans)), tape.constant(to_row(start)), tape.constant(to_row(end))};
        return crf_nll(tape.constant(to_tensor(e)), to_bio(gold), v).value().item();
      },
      py::arg("emissions"), py::arg("gold"), py::arg("transitions"), py::arg("start"), py::arg("end"));

  m.def(
      "viterbi_decode",
      [](const Matrix& e, const Matrix& trans, const std::vector<double>& start, const std::vector<double>& end) {
        return from_bio(viterbi_decode(to_tensor(e), to_tensor(trans), to_row(start), to_row(end)));
      },
      py::arg("emissions"), py::arg("transitions"), py::arg("start"), py::arg("end"));

  m.def(
      "proto_contrastive_loss",
      [](const std::vector<double>& r, const Matrix& protos, std::size_t gold, double tau) {
        ad::Tape tape(ad::Mode::kEval);
        return proto_contrastive_loss(tape.constant(to_row(r)), gold, tape.constant(to_tensor(protos)), tau)
            .value()
            .item();
      },
      py::arg("r"), py::arg("prototypes"), py::arg("gold"), py::arg("tau") = 1.0);

  m.def("confusion_target",
        [](const std::vector<double>& gold_row, const Matrix& target_block) {
          return confusion_target(gold_row, to_tensor(target_block));
        },
        py::arg("gold_prototype"), py::arg("target_block"));

  m.def("smooth_distribution",
        [](std::size_t gold, std::size_t source_count, const std::vector<double>& d_tgt, double lambda) {
          return smooth_distribution(gold, source_count, d_tgt, lambda);
        },
        py::arg("gold"), py::arg("source_count"), py::arg("d_tgt"), py::arg("lam"));

  m.def(
      "kl_confusion_loss",
      [](const std::vector<double>& r, const Matrix& protos, const std::vector<double>& d_smooth,
         const std::string& direction) {
        ad::Tape tape(ad::Mode::kEval);
        return kl_confusion_loss(tape.constant(to_row(r)), tape.constant(to_tensor(protos)), d_smooth,
                                 direction_from(direction))
            .value()
            .item();
      },
      py::arg("r"), py::arg("prototypes"), py::arg("d_smooth"), py::arg("direction") = "smooth_to_predicted");

  m.def(
      "span_f1", [](const Spans& gold, const Spans& pred) { return report_dict(span_f1(to_span_sets(gold), to_span_sets(pred))); },
      py::arg("gold"), py::arg("predicted"));

  m.def(
      "early_stop_check", [](const std::vector<double>& h, std::size_t patience) { return early_stop_check(h, patience); },
      py::arg("history"), py::arg("patience"));

  m.def("format_double", &format_double, py::arg("value"));

  m.def(
      "train",
      [](const std::map<std::string, std::string>& settings) {
        TrainOutcome o;
        {
          py::gil_scoped_release release;
          o = run_train(config_from(settings));
        }
        py::dict d;
        d["run_dir"] = o.dir.string();
        d["best_epoch"] = o.train.best_epoch;
        d["best_val_f1"] = o.train.best_val_f1;
        d["epochs"] = o.train.history.size();
        d["stopped_early"] = o.train.stopped_early;
        d["test"] = report_dict(o.test);
        return d;
      },
      py::arg("settings"), "Train with config keys given as strings; returns a summary dict.");

  m.def(
      "evaluate",
      [](const std::map<std::string, std::string>& settings, const std::string& checkpoint) {
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = run_eval(config_from(settings), checkpoint);
        }
        return report_dict(r);
      },
      py::arg("settings"), py::arg("checkpoint"));

  m.def("config_keys", [] {
    std::vector<std::string> keys;
    for (const auto& d : config_key_docs()) keys.emplace_back(d.key);
    return keys;
  });

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full = {"pclc"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a pclc command; returns (exit code, stdout text, stderr text).");
}
