#pragma once

#include <span>
#include <string>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/layers.hpp"
#include "pclc/rng.hpp"

namespace pclc {

struct EncoderConfig {
  std::size_t word_dim = 300;
  std::size_t char_dim = 25;
  std::size_t char_hidden = 25;  // per direction
  std::size_t hidden = 200;      // per direction
  std::size_t layers = 2;
  double dropout = 0.3;

  void validate() const;
  std::size_t output_dim() const { return 2 * hidden; }
};

// Word embeddings concatenated with a character BiLSTM summary per token,
// followed by a stacked BiLSTM. Dropout applies to the embedding layer and to
// every BiLSTM layer's output.
class WordCharEncoder {
 public:
  WordCharEncoder(ad::ParameterStore& store, const EncoderConfig& config, const Vocab& vocab,
                  const ad::Tensor& word_embeddings, Rng& init);

  // T x 2*hidden hidden states; dropout only when the tape is in train mode.
  ad::Var encode(ad::Tape& tape, const std::vector<std::string>& tokens, const Vocab& vocab, Rng& dropout_rng) const;

  ad::Parameter& word_embeddings() const { return *word_embeddings_; }
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  ad::Parameter* word_embeddings_;
  ad::Parameter* char_embeddings_;
  BiLstm char_lstm_;
  std::vector<BiLstm> layers_;
};

// Linear-chain CRF over {O, B, I} with explicit start and end scores.
struct CrfLayer {
  ad::Parameter* transitions;  // 3x3, [from][to]
  ad::Parameter* start;        // 1x3
  ad::Parameter* end;          // 1x3

  static CrfLayer create(ad::ParameterStore& store, const std::string& prefix);
};

struct CrfVars {
  ad::Var transitions;
  ad::Var start;
  ad::Var end;

  static CrfVars bind(ad::Tape& tape, const CrfLayer& crf);
};

// log Z(emissions) - score(gold) for a T x 3 emission matrix.
ad::Var crf_nll(const ad::Var& emissions, std::span<const Bio> gold, const CrfVars& crf);
// Forward-algorithm log partition on plain values.
double crf_log_partition(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                         const ad::Tensor& end);
double crf_path_score(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                      const ad::Tensor& end, std::span<const Bio> path);
// Highest-scoring path; each backpointer and the final state prefer the
// lowest label index among ties.
std::vector<Bio> viterbi_decode(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                                const ad::Tensor& end);

struct TaggedSpan {
  std::size_t start;  // inclusive
  std::size_t end;    // inclusive
  friend bool operator==(const TaggedSpan&, const TaggedSpan&) = default;
};

// Maximal B I* runs. A stray I (at the start or after O) opens a new span.
std::vector<TaggedSpan> extract_spans(std::span<const Bio> tags);

}  // namespace pclc
