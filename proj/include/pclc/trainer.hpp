#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/checkpoint.hpp"
#include "pclc/data.hpp"
#include "pclc/model.hpp"
#include "pclc/optim.hpp"
#include "pclc/slot_classifier.hpp"

namespace pclc {

struct TrainConfig {
  double lr = 0.0005;
  std::size_t batch_size = 64;
  double dropout = 0.3;
  std::size_t patience = 15;
  std::size_t max_epochs = 30;
  PclcHyperparams pclc;
  std::uint64_t seed = 1;
  bool enable_pcl = true;
  bool enable_lc = true;
  std::size_t fewshot_k = 0;
  double crf_weight = 1.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  // Contrastive denominator over every row, or only the entity's own block.
  bool pc_over_both_blocks = true;
  KlDirection kl_direction = KlDirection::kSmoothToPredicted;
  // Also score the training set after each epoch.
  bool log_train_f1 = false;

  void validate() const;
};

inline constexpr std::size_t kZeroShotEpochs = 30;
inline constexpr std::size_t kFewShotEpochs = 60;

// Gold-span supervision for one utterance.
struct TrainingExample {
  const Utterance* utterance;
  std::vector<TaggedSpan> spans;
  std::vector<std::size_t> rows;  // gold prototype row per span
};

TrainingExample make_example(const Utterance& utterance, const PrototypeLayout& layout);
std::vector<TrainingExample> make_examples(const std::vector<Utterance>& corpus, std::span<const std::size_t> indices,
                                           const PrototypeLayout& layout);

// Batch-averaged terms. Disabled terms are invalid Vars with value 0.
struct LossTerms {
  ad::Var total;
  ad::Var crf;
  ad::Var pc;
  ad::Var kl;
  ad::Var ce;  // plain cross-entropy, used only when PCL and LC are both off
  std::size_t entities = 0;

  double value(const ad::Var& term) const { return term.valid() ? term.value().item() : 0.0; }
};

// Which terms to build. The total is assembled only when every term is on.
struct TermMask {
  bool crf = true;
  bool pc = true;
  bool kl = true;
  bool ce = true;
};

// L = w_crf L_crf + [pcl] L_pc + [lc] alpha L_kl, or w_crf L_crf + L_ce when
// both PCL and LC are disabled. Smoothed targets are computed from the
// current prototypes and treated as constants; when `smooth_cache` is given
// and non-empty it supplies them instead (one entry per entity, batch order),
// and an empty cache is filled.
LossTerms total_loss(ad::Tape& tape, std::span<const TrainingExample> batch, const PclcModel& model,
                     const TrainConfig& config, Rng& dropout_rng,
                     std::vector<std::vector<double>>* smooth_cache = nullptr, TermMask mask = {});

// True when the best value (first occurrence, strict improvement) is at
// least max(patience, 1) epochs behind the latest one.
bool early_stop_check(std::span<const double> history, std::size_t patience);

struct EpochRecord {
  std::size_t epoch = 0;
  double l_crf = 0.0;
  double l_pc = 0.0;
  double l_kl = 0.0;
  double l_ce = 0.0;
  double val_f1 = 0.0;
  std::optional<double> train_f1;
};

// Tab-separated "key=value" fields.
std::string format_epoch(const EpochRecord& record);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  bool stopped_early = false;
  Checkpoint best;
};

struct TrainInputs {
  const std::vector<Utterance>* corpus;
  const SlotSchema* schema;
  const ExperimentSplit* split;
  std::vector<std::pair<std::string, std::string>> config_snapshot;
};

// Trains `model` in place; on return it holds the best-validation parameters.
// `log`, when set, receives one formatted line per epoch.
TrainResult train_run(PclcModel& model, const TrainInputs& inputs, const TrainConfig& config,
                      std::ostream* log = nullptr);

double span_f1_on(const PclcModel& model, const std::vector<Utterance>& corpus, std::span<const std::size_t> indices,
                  const SlotSchema& schema);

}  // namespace pclc
