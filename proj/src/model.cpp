#include "pclc/model.hpp"

#include <map>

#include "pclc/error.hpp"

namespace pclc {

void ModelConfig::validate() const {
  encoder.validate();
  if (proto_dim == 0 || entity_hidden == 0) throw Error("model", "proto_dim and entity_hidden must be positive");
}

PclcModel::PclcModel(const ModelConfig& config, Vocab vocab, PrototypeLayout layout, const ad::Tensor& word_embeddings,
                     std::uint64_t init_seed)
    : config_((config.validate(), config)),
      vocab_(std::move(vocab)),
      layout_(std::move(layout)),
      init_(init_seed),
      encoder_(store_, config_.encoder, vocab_, word_embeddings, init_),
      emission_(store_, "tagger.emission", config_.encoder.output_dim(), kNumBio, init_),
      crf_(CrfLayer::create(store_, "crf")),
      prototype_encoder_(store_, config_.encoder.word_dim, config_.proto_dim, init_),
      entity_encoder_(store_, config_.encoder.output_dim(), config_.entity_hidden, config_.proto_dim, init_) {
  if (layout_.rows() == 0) throw Error("model", "prototype layout has no rows");
}

ad::Var PclcModel::encode(ad::Tape& tape, const std::vector<std::string>& tokens, Rng& dropout_rng) const {
  return encoder_.encode(tape, tokens, vocab_, dropout_rng);
}

ad::Var PclcModel::emissions(ad::Tape& tape, const ad::Var& states) const { return emission_(tape, states); }

ad::Var PclcModel::prototypes(ad::Tape& tape) const {
  return prototype_encoder_.build(tape, layout_, vocab_, tape.param(encoder_.word_embeddings()));
}

ad::Var PclcModel::entity(ad::Tape& tape, const ad::Var& states, const TaggedSpan& span) const {
  return entity_encoder_.encode(tape, states, span);
}

ad::Tensor PclcModel::prototype_values() const {
  ad::Tape tape(ad::Mode::kEval);
  return prototypes(tape).value();
}

std::vector<SpanPrediction> PclcModel::predict(const std::vector<std::string>& tokens, const ad::Tensor& prototypes,
                                               std::span<const std::size_t> candidates) const {
  ad::Tape tape(ad::Mode::kEval);
  Rng unused(0);
  const auto states = encode(tape, tokens, unused);
  const auto em = emissions(tape, states);
  const auto tags = viterbi_decode(em.value(), crf_.transitions->value, crf_.start->value, crf_.end->value);
  std::vector<SpanPrediction> out;
  for (const auto& span : extract_spans(tags)) {
    const auto r = entity(tape, states, span);
    const auto row = predict_row(r.value().data(), prototypes, candidates);
    out.push_back({span.start, span.end, layout_.label(row)});
  }
  return out;
}

std::vector<std::size_t> candidate_rows(const PrototypeLayout& layout, const SlotSchema& schema,
                                        const std::string& domain) {
  std::vector<std::size_t> rows;
  if (domain == layout.target_domain) {
    for (std::size_t r = layout.boundary(); r < layout.rows(); ++r) rows.push_back(r);
  } else {
    for (const auto& slot : schema.slots_of(domain)) rows.push_back(layout.row_of(slot, Block::kSource));
  }
  if (rows.empty()) throw Error("predict", "domain '" + domain + "' has no slots");
  return rows;
}

SpanSets predict_spans(const PclcModel& model, const std::vector<Utterance>& corpus,
                       std::span<const std::size_t> indices, const SlotSchema& schema) {
  const auto prototypes = model.prototype_values();
  std::map<std::string, std::vector<std::size_t>> candidates;
  SpanSets out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& u = corpus.at(i);
    auto it = candidates.find(u.domain);
    if (it == candidates.end()) it = candidates.emplace(u.domain, candidate_rows(model.layout(), schema, u.domain)).first;
    out.push_back(model.predict(u.tokens, prototypes, it->second));
  }
  return out;
}

}  // namespace pclc
