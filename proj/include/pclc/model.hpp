#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/evaluator.hpp"
#include "pclc/layers.hpp"
#include "pclc/slot_classifier.hpp"
#include "pclc/tagger.hpp"

namespace pclc {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t proto_dim = 300;
  std::size_t entity_hidden = 200;  // per direction

  void validate() const;
  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.encoder.word_dim == b.encoder.word_dim && a.encoder.char_dim == b.encoder.char_dim &&
           a.encoder.char_hidden == b.encoder.char_hidden && a.encoder.hidden == b.encoder.hidden &&
           a.encoder.layers == b.encoder.layers && a.encoder.dropout == b.encoder.dropout &&
           a.proto_dim == b.proto_dim && a.entity_hidden == b.entity_hidden;
  }
};

// Both stages plus the prototype MLP over one parameter store.
class PclcModel {
 public:
  PclcModel(const ModelConfig& config, Vocab vocab, PrototypeLayout layout, const ad::Tensor& word_embeddings,
            std::uint64_t init_seed);
  PclcModel(const PclcModel&) = delete;
  PclcModel& operator=(const PclcModel&) = delete;

  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const PrototypeLayout& layout() const { return layout_; }

  // T x 2*hidden Stage-1 states.
  ad::Var encode(ad::Tape& tape, const std::vector<std::string>& tokens, Rng& dropout_rng) const;
  // T x 3 CRF emission scores.
  ad::Var emissions(ad::Tape& tape, const ad::Var& states) const;
  CrfVars crf(ad::Tape& tape) const { return CrfVars::bind(tape, crf_); }
  ad::Var prototypes(ad::Tape& tape) const;
  ad::Var entity(ad::Tape& tape, const ad::Var& states, const TaggedSpan& span) const;

  ad::Tensor prototype_values() const;

  // Viterbi spans typed by the best prototype among `candidates`.
  std::vector<SpanPrediction> predict(const std::vector<std::string>& tokens, const ad::Tensor& prototypes,
                                      std::span<const std::size_t> candidates) const;

  const CrfLayer& crf_layer() const { return crf_; }
  const PrototypeEncoder& prototype_encoder() const { return prototype_encoder_; }

 private:
  ModelConfig config_;
  Vocab vocab_;
  PrototypeLayout layout_;
  ad::ParameterStore store_;
  Rng init_;
  WordCharEncoder encoder_;
  Linear emission_;
  CrfLayer crf_;
  PrototypeEncoder prototype_encoder_;
  EntityEncoder entity_encoder_;
};

// Prototype rows an utterance from `domain` may be labelled with: the target
// block for the target domain, the domain's own source-block rows otherwise.
std::vector<std::size_t> candidate_rows(const PrototypeLayout& layout, const SlotSchema& schema,
                                        const std::string& domain);

// Predicted spans for corpus[indices[i]], each restricted to its domain's rows.
SpanSets predict_spans(const PclcModel& model, const std::vector<Utterance>& corpus,
                       std::span<const std::size_t> indices, const SlotSchema& schema);

}  // namespace pclc
