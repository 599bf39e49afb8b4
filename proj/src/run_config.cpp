#include "pclc/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pclc/checkpoint.hpp"
#include "pclc/error.hpp"

namespace pclc {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error("config", key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw Error("config", key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config", key + ": expected true or false, got '" + v + "'");
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

const char* direction_text(KlDirection d) {
  return d == KlDirection::kSmoothToPredicted ? "smooth_to_predicted" : "predicted_to_smooth";
}

}  // namespace

const std::vector<ConfigKeyDoc>& config_key_docs() {
  static const std::vector<ConfigKeyDoc> docs = {
      {"corpus_dir", "directory of <domain>.conll files"},
      {"embeddings", "GloVe-style text vectors; empty for random init"},
      {"descriptions", "optional 'slot<TAB>words' description overrides"},
      {"target", "held-out target domain"},
      {"output_dir", "run directory (relative paths resolve under $PCLC_OUTPUT_ROOT)"},
      {"validation_size", "target utterances held out for early stopping"},
      {"require_pretrained", "fail when the embeddings file is missing"},
      {"word_dim", "word embedding width; must match the embeddings file"},
      {"char_dim", "character embedding width"},
      {"char_hidden", "character BiLSTM hidden size per direction"},
      {"hidden", "word BiLSTM hidden size per direction"},
      {"layers", "stacked word BiLSTM layers"},
      {"proto_dim", "prototype and entity representation width"},
      {"entity_hidden", "entity BiLSTM hidden size per direction"},
      {"lr", "Adam learning rate"},
      {"batch_size", "utterances per batch"},
      {"dropout", "dropout on embeddings and BiLSTM outputs"},
      {"patience", "early-stopping patience in epochs"},
      {"max_epochs", "epoch cap; 'auto' gives 30 zero-shot, 60 few-shot"},
      {"lambda", "label-confusion mass kept on the gold source slot"},
      {"tau", "contrastive temperature"},
      {"alpha", "weight of the label-confusion KL term"},
      {"seed", "seed for splits, initialisation, shuffling and dropout"},
      {"enable_pcl", "prototypical contrastive loss"},
      {"enable_lc", "label-confusion KL loss"},
      {"fewshot_k", "target utterances moved from test into train"},
      {"crf_weight", "multiplier on the CRF loss"},
      {"clip_norm", "global gradient-norm clip; <= 0 disables"},
      {"pc_over_both_blocks", "contrastive denominator over both prototype blocks"},
      {"kl_direction", "smooth_to_predicted or predicted_to_smooth"},
      {"log_train_f1", "also log training-set F1 each epoch"},
  };
  return docs;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const auto key = trim(raw_key);
  const auto v = trim(raw_value);
  if (key == "corpus_dir") corpus_dir = v;
  else if (key == "embeddings") embeddings = v.empty() ? std::nullopt : std::optional<fs::path>(v);
  else if (key == "descriptions") descriptions = v.empty() ? std::nullopt : std::optional<fs::path>(v);
  else if (key == "target") target = v;
  else if (key == "output_dir") output_dir = v;
  else if (key == "validation_size") validation_size = parse_size(key, v);
  else if (key == "require_pretrained") require_pretrained = parse_bool(key, v);
  else if (key == "word_dim") model.encoder.word_dim = parse_size(key, v);
  else if (key == "char_dim") model.encoder.char_dim = parse_size(key, v);
  else if (key == "char_hidden") model.encoder.char_hidden = parse_size(key, v);
  else if (key == "hidden") model.encoder.hidden = parse_size(key, v);
  else if (key == "layers") model.encoder.layers = parse_size(key, v);
  else if (key == "proto_dim") model.proto_dim = parse_size(key, v);
  else if (key == "entity_hidden") model.entity_hidden = parse_size(key, v);
  else if (key == "lr") train.lr = parse_real(key, v);
  else if (key == "batch_size") train.batch_size = parse_size(key, v);
  else if (key == "dropout") train.dropout = parse_real(key, v);
  else if (key == "patience") train.patience = parse_size(key, v);
  else if (key == "max_epochs") max_epochs = v == "auto" ? std::nullopt : std::optional<std::size_t>(parse_size(key, v));
  else if (key == "lambda") train.pclc.lambda = parse_real(key, v);
  else if (key == "tau") train.pclc.tau = parse_real(key, v);
  else if (key == "alpha") train.pclc.alpha = parse_real(key, v);
  else if (key == "seed") train.seed = parse_size(key, v);
  else if (key == "enable_pcl") train.enable_pcl = parse_bool(key, v);
  else if (key == "enable_lc") train.enable_lc = parse_bool(key, v);
  else if (key == "fewshot_k") train.fewshot_k = parse_size(key, v);
  else if (key == "crf_weight") train.crf_weight = parse_real(key, v);
  else if (key == "clip_norm") train.clip_norm = parse_real(key, v);
  else if (key == "pc_over_both_blocks") train.pc_over_both_blocks = parse_bool(key, v);
  else if (key == "kl_direction") {
    if (v == "smooth_to_predicted") train.kl_direction = KlDirection::kSmoothToPredicted;
    else if (v == "predicted_to_smooth") train.kl_direction = KlDirection::kPredictedToSmooth;
    else throw Error("config", "kl_direction: expected smooth_to_predicted or predicted_to_smooth, got '" + v + "'");
  }
  else if (key == "log_train_f1") train.log_train_f1 = parse_bool(key, v);
  else throw Error("config", "unknown key '" + key + "'");
}

void RunConfig::load_stream(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error("config", source_name + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set(body.substr(0, eq), body.substr(eq + 1));
    } catch (const Error& e) {
      throw Error("config", source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config", "cannot open config file " + path.string());
  load_stream(in, path.string());
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  auto out = snapshot();
  out.insert(out.begin() + 4, {"output_dir", output_dir.string()});
  return out;
}

std::vector<std::pair<std::string, std::string>> RunConfig::snapshot() const {
  const auto t = effective_train();
  const auto& m = model;
  return {
      {"corpus_dir", corpus_dir.string()},
      {"embeddings", embeddings ? embeddings->string() : ""},
      {"descriptions", descriptions ? descriptions->string() : ""},
      {"target", target},
      {"validation_size", std::to_string(validation_size)},
      {"require_pretrained", bool_text(require_pretrained)},
      {"word_dim", std::to_string(m.encoder.word_dim)},
      {"char_dim", std::to_string(m.encoder.char_dim)},
      {"char_hidden", std::to_string(m.encoder.char_hidden)},
      {"hidden", std::to_string(m.encoder.hidden)},
      {"layers", std::to_string(m.encoder.layers)},
      {"proto_dim", std::to_string(m.proto_dim)},
      {"entity_hidden", std::to_string(m.entity_hidden)},
      {"lr", format_double(t.lr)},
      {"batch_size", std::to_string(t.batch_size)},
      {"dropout", format_double(t.dropout)},
      {"patience", std::to_string(t.patience)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"lambda", format_double(t.pclc.lambda)},
      {"tau", format_double(t.pclc.tau)},
      {"alpha", format_double(t.pclc.alpha)},
      {"seed", std::to_string(t.seed)},
      {"enable_pcl", bool_text(t.enable_pcl)},
      {"enable_lc", bool_text(t.enable_lc)},
      {"fewshot_k", std::to_string(t.fewshot_k)},
      {"crf_weight", format_double(t.crf_weight)},
      {"clip_norm", format_double(t.clip_norm)},
      {"pc_over_both_blocks", bool_text(t.pc_over_both_blocks)},
      {"kl_direction", direction_text(t.kl_direction)},
      {"log_train_f1", bool_text(t.log_train_f1)},
  };
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.max_epochs = max_epochs.value_or(train.fewshot_k > 0 ? kFewShotEpochs : kZeroShotEpochs);
  return t;
}

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  m.encoder.dropout = train.dropout;
  return m;
}

fs::path RunConfig::run_dir() const {
  if (output_dir.is_absolute()) return output_dir;
  const char* root = std::getenv(kOutputRootEnv);
  if (root != nullptr && *root != '\0') return fs::path(root) / output_dir;
  return output_dir;
}

void RunConfig::validate() const {
  if (target.empty()) throw Error("config", "no target domain given");
  effective_train().validate();
  effective_model().validate();
  if (validation_size == 0) throw Error("config", "validation_size must be positive");
}

void write_config(std::ostream& out, const RunConfig& config) {
  for (const auto& [k, v] : config.entries()) out << k << " = " << v << "\n";
}

std::string setting_name(std::size_t fewshot_k) {
  return fewshot_k == 0 ? "zero-shot" : "few-shot-" + std::to_string(fewshot_k);
}

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  Experiment e;
  e.corpus = load_corpus_dir(config.corpus_dir);
  if (e.corpus.empty()) throw Error("experiment", "no utterances under " + config.corpus_dir.string());
  const auto overrides =
      config.descriptions ? load_descriptions(*config.descriptions) : std::map<std::string, std::vector<std::string>>{};
  e.schema = build_schema(e.corpus, overrides);
  const auto seed = config.train.seed;
  e.split = split_leave_one_out(e.corpus, e.schema, config.target, seed, config.validation_size);
  if (config.train.fewshot_k > 0) e.split = fewshot_select(e.split, static_cast<long>(config.train.fewshot_k), seed);
  e.layout = PrototypeLayout::build(e.schema, config.target);
  e.vocab = build_vocab(e.corpus, e.schema);
  Rng rng(seed ^ 0x656d626564ULL);
  e.embeddings = load_embeddings(config.embeddings, e.vocab, config.model.encoder.word_dim, rng,
                                 config.require_pretrained);
  return e;
}

EvalReport evaluate_split(const PclcModel& model, const Experiment& experiment, std::span<const std::size_t> indices) {
  SpanSets gold;
  for (auto i : indices) gold.push_back(gold_spans(experiment.corpus.at(i)));
  auto report = span_f1(gold, predict_spans(model, experiment.corpus, indices, experiment.schema));
  report = seen_unseen_report(std::move(report), experiment.split.seen_slots, experiment.split.unseen_slots);
  report.domain = experiment.split.target_domain;
  report.setting = setting_name(experiment.split.fewshot_k);
  return report;
}

namespace {

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("run", "cannot write " + path.string());
  fn(out);
  if (!out) throw Error("run", "write failed for " + path.string());
}

}  // namespace

TrainOutcome run_train(const RunConfig& config, std::ostream* progress) {
  const auto exp = prepare_experiment(config);
  TrainOutcome outcome;
  outcome.dir = config.run_dir();
  fs::create_directories(outcome.dir);
  write_file(outcome.dir / "config.txt", [&](std::ostream& o) { write_config(o, config); });
  write_file(outcome.dir / "split.tsv", [&](std::ostream& o) { write_split_manifest(o, exp.split, exp.corpus); });

  PclcModel model(config.effective_model(), exp.vocab, exp.layout, exp.embeddings.matrix, config.train.seed);
  {
    std::ofstream log(outcome.dir / "train.log", std::ios::binary);
    if (!log) throw Error("run", "cannot write " + (outcome.dir / "train.log").string());
    const TrainInputs inputs{&exp.corpus, &exp.schema, &exp.split, config.snapshot()};
    outcome.train = train_run(model, inputs, config.effective_train(), &log);
  }
  save_checkpoint(outcome.train.best, outcome.dir / "model.ckpt");

  outcome.test = evaluate_split(model, exp, exp.split.test);
  write_file(outcome.dir / "report.txt", [&](std::ostream& o) { write_report_text(o, outcome.test); });
  write_file(outcome.dir / "report.kv", [&](std::ostream& o) { write_report_kv(o, outcome.test); });
  if (progress != nullptr) {
    *progress << "trained " << outcome.train.history.size() << " epochs, best epoch " << outcome.train.best_epoch
              << " (val F1 " << format_double(outcome.train.best_val_f1) << "); artifacts in " << outcome.dir.string()
              << "\n";
  }
  return outcome;
}

EvalReport run_eval(const RunConfig& config, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw Error("eval", "checkpoint not found: " + checkpoint.string());
  const auto cp = load_checkpoint(checkpoint);
  RunConfig base = config;
  base.embeddings.reset();
  base.require_pretrained = false;
  base.model.encoder.word_dim = cp.model.encoder.word_dim;
  const auto exp = prepare_experiment(base);
  check_compatible(cp, exp.layout);
  const auto model = restore_model(cp);
  return evaluate_split(*model, exp, exp.split.test);
}

}  // namespace pclc
