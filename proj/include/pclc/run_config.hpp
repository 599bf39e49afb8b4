#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pclc/data.hpp"
#include "pclc/evaluator.hpp"
#include "pclc/model.hpp"
#include "pclc/slot_classifier.hpp"
#include "pclc/trainer.hpp"

namespace pclc {

inline constexpr const char* kOutputRootEnv = "PCLC_OUTPUT_ROOT";

// Every setting of a run. Loaded from "key = value" lines ('#' starts a
// comment); later assignments override earlier ones.
struct RunConfig {
  std::filesystem::path corpus_dir = "data/snips";
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> descriptions;
  std::string target;
  std::filesystem::path output_dir = "runs/default";
  std::size_t validation_size = kDefaultValidationSize;
  bool require_pretrained = false;
  ModelConfig model;
  TrainConfig train;
  // Unset means 30 epochs zero-shot, 60 few-shot.
  std::optional<std::size_t> max_epochs;

  void set(const std::string& key, const std::string& value);
  void load_file(const std::filesystem::path& path);
  void load_stream(std::istream& in, const std::string& source_name);

  // Effective values in a fixed key order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  // Entries that determine the trained model; excludes output location.
  std::vector<std::pair<std::string, std::string>> snapshot() const;

  TrainConfig effective_train() const;
  ModelConfig effective_model() const;
  // output_dir, resolved against $PCLC_OUTPUT_ROOT when relative.
  std::filesystem::path run_dir() const;
  void validate() const;
};

// One "key<TAB>default<TAB>meaning" row per accepted key.
struct ConfigKeyDoc {
  const char* key;
  const char* meaning;
};
const std::vector<ConfigKeyDoc>& config_key_docs();

void write_config(std::ostream& out, const RunConfig& config);

struct Experiment {
  std::vector<Utterance> corpus;
  SlotSchema schema;
  ExperimentSplit split;
  PrototypeLayout layout;
  Vocab vocab;
  EmbeddingTable embeddings;
};

Experiment prepare_experiment(const RunConfig& config);

struct TrainOutcome {
  TrainResult train;
  EvalReport test;
  std::filesystem::path dir;
};

// Trains and writes config.txt, split.tsv, train.log, model.ckpt(.bin),
// report.txt and report.kv into the run directory.
TrainOutcome run_train(const RunConfig& config, std::ostream* progress = nullptr);

// Scores the checkpoint on the experiment's test split.
EvalReport run_eval(const RunConfig& config, const std::filesystem::path& checkpoint);

EvalReport evaluate_split(const PclcModel& model, const Experiment& experiment, std::span<const std::size_t> indices);

std::string setting_name(std::size_t fewshot_k);

}  // namespace pclc
