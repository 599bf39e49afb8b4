#pragma once

#include <span>
#include <string>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/layers.hpp"
#include "pclc/tagger.hpp"

namespace pclc {

struct PclcHyperparams {
  double tau = 1.0;     // temperature of the contrastive softmax
  double lambda = 0.6;  // mass kept on the gold source slot
  double alpha = 1.0;   // weight of the confusion KL term

  void validate() const;
};

enum class KlDirection {
  kSmoothToPredicted,  // sum D_smooth * (log D_smooth - D_pre)
  kPredictedToSmooth,  // sum p * (D_pre - log D_smooth), D_smooth floored at 1e-12
};

enum class Block { kSource, kTarget };

const char* block_name(Block block);

// Row order of the prototype matrix: every source slot, then every target
// slot. A slot shared by source and target domains has a row in each block.
struct PrototypeLayout {
  std::string target_domain;
  std::vector<std::string> source_slots;
  std::vector<std::string> target_slots;
  // Description tokens per row, in row order.
  std::vector<std::vector<std::string>> descriptions;

  static PrototypeLayout build(const SlotSchema& schema, const std::string& target_domain);

  std::size_t boundary() const { return source_slots.size(); }
  std::size_t rows() const { return source_slots.size() + target_slots.size(); }
  const std::string& label(std::size_t row) const;
  Block block(std::size_t row) const { return row < boundary() ? Block::kSource : Block::kTarget; }
  std::size_t row_of(const std::string& slot, Block block) const;
  bool contains(const std::string& slot, Block block) const;

  friend bool operator==(const PrototypeLayout&, const PrototypeLayout&) = default;
};

// Maps averaged slot-name embeddings to prototypes:
//   z = W_skip e + W_out tanh(W_hidden e + b_hidden) + b_out
// The skip map starts as the identity when the widths agree.
class PrototypeEncoder {
 public:
  PrototypeEncoder(ad::ParameterStore& store, std::size_t word_dim, std::size_t proto_dim, Rng& init);

  // rows x proto_dim, rebuilt on every tape so gradients reach the MLP.
  ad::Var build(ad::Tape& tape, const PrototypeLayout& layout, const Vocab& vocab, const ad::Var& word_table) const;
  // rows x word_dim mean description embeddings.
  ad::Var name_embeddings(ad::Tape& tape, const PrototypeLayout& layout, const Vocab& vocab,
                          const ad::Var& word_table) const;

  const Linear& hidden() const { return hidden_; }
  const Linear& output() const { return output_; }
  ad::Parameter& skip() const { return *skip_; }
  std::size_t dim() const { return output_.out(); }

 private:
  Linear hidden_;
  Linear output_;
  ad::Parameter* skip_;
};

// Span encoder: BiLSTM over the span's Stage-1 states, final states projected to d.
class EntityEncoder {
 public:
  EntityEncoder(ad::ParameterStore& store, std::size_t input_dim, std::size_t hidden, std::size_t proto_dim, Rng& init);

  // 1 x proto_dim representation of rows [span.start, span.end] of `states`.
  ad::Var encode(ad::Tape& tape, const ad::Var& states, const TaggedSpan& span) const;

 private:
  BiLstm lstm_;
  Linear projection_;
};

// 1 x C dot products r . z^c given the transposed prototype matrix (d x C).
ad::Var prototype_scores(const ad::Var& r, const ad::Var& prototypes_t);

// -log softmax(scores / tau)[gold].
ad::Var proto_contrastive_loss(const ad::Var& scores, std::size_t gold, double tau);
ad::Var proto_contrastive_loss(const ad::Var& r, std::size_t gold, const ad::Var& prototypes, double tau);

// Clamped, L1-normalised cosine similarities between the gold prototype and
// each target-block row; uniform when no similarity is positive.
std::vector<double> confusion_target(std::span<const double> gold_prototype, const ad::Tensor& target_block);

// [lambda * one_hot(gold) over the source block, (1 - lambda) * D_tgt].
std::vector<double> smooth_distribution(std::size_t gold, std::size_t source_count, std::span<const double> d_tgt,
                                        double lambda);

// KL between the smoothed target and log_softmax(scores); 0 log 0 := 0.
ad::Var kl_confusion_loss(const ad::Var& scores, std::span<const double> d_smooth,
                          KlDirection direction = KlDirection::kSmoothToPredicted);
ad::Var kl_confusion_loss(const ad::Var& r, const ad::Var& prototypes, std::span<const double> d_smooth,
                          KlDirection direction = KlDirection::kSmoothToPredicted);

// Row in [begin, end) maximising r . z; ties go to the lowest row.
std::size_t predict_row(std::span<const double> r, const ad::Tensor& prototypes, std::size_t begin, std::size_t end);
std::size_t predict_row(std::span<const double> r, const ad::Tensor& prototypes, std::span<const std::size_t> candidates);
// Label of the best target-block row.
const std::string& predict_slot_type(std::span<const double> r, const ad::Tensor& prototypes,
                                     const PrototypeLayout& layout);

}  // namespace pclc
