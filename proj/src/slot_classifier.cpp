#include "pclc/slot_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "pclc/error.hpp"

namespace pclc {

void PclcHyperparams::validate() const {
  if (!(tau > 0.0)) throw Error("pclc", "tau must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("pclc", "lambda must be in [0, 1]");
  if (!(alpha >= 0.0)) throw Error("pclc", "alpha must be non-negative");
}

const char* block_name(Block block) { return block == Block::kSource ? "source" : "target"; }

PrototypeLayout PrototypeLayout::build(const SlotSchema& schema, const std::string& target_domain) {
  if (!schema.has_domain(target_domain)) throw Error("prototypes", "unknown target domain '" + target_domain + "'");
  std::set<std::string> source;
  for (const auto& d : schema.domains) {
    if (d == target_domain) continue;
    for (const auto& s : schema.slots_of(d)) source.insert(s);
  }
  PrototypeLayout layout;
  layout.target_domain = target_domain;
  layout.source_slots.assign(source.begin(), source.end());
  layout.target_slots = schema.slots_of(target_domain);
  for (const auto& s : layout.source_slots) layout.descriptions.push_back(schema.description(s));
  for (const auto& s : layout.target_slots) layout.descriptions.push_back(schema.description(s));
  return layout;
}

const std::string& PrototypeLayout::label(std::size_t row) const {
  if (row >= rows()) throw Error("prototypes", "row " + std::to_string(row) + " out of range");
  return row < boundary() ? source_slots[row] : target_slots[row - boundary()];
}

std::size_t PrototypeLayout::row_of(const std::string& slot, Block block) const {
  const auto& list = block == Block::kSource ? source_slots : target_slots;
  auto it = std::find(list.begin(), list.end(), slot);
  if (it == list.end()) {
    throw Error("prototypes", "slot '" + slot + "' not in the " + block_name(block) + " block");
  }
  const auto offset = static_cast<std::size_t>(it - list.begin());
  return block == Block::kSource ? offset : boundary() + offset;
}

bool PrototypeLayout::contains(const std::string& slot, Block block) const {
  const auto& list = block == Block::kSource ? source_slots : target_slots;
  return std::find(list.begin(), list.end(), slot) != list.end();
}

PrototypeEncoder::PrototypeEncoder(ad::ParameterStore& store, std::size_t word_dim, std::size_t proto_dim, Rng& init)
    : hidden_(store, "prototype.hidden", word_dim, proto_dim, init),
      output_(store, "prototype.output", proto_dim, proto_dim, init) {
  ad::Tensor skip(word_dim, proto_dim);
  if (word_dim == proto_dim) {
    for (std::size_t i = 0; i < word_dim; ++i) skip(i, i) = 1.0;
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(word_dim));
    for (double& x : skip.data()) x = init.uniform(-bound, bound);
  }
  skip_ = &store.add("prototype.skip", std::move(skip));
}

ad::Var PrototypeEncoder::name_embeddings(ad::Tape& tape, const PrototypeLayout& layout, const Vocab& vocab,
                                          const ad::Var& word_table) const {
  std::vector<std::size_t> ids;
  for (const auto& desc : layout.descriptions) {
    if (desc.empty()) throw Error("build_prototypes", "empty slot description");
    for (const auto& w : desc) ids.push_back(vocab.word_index(w));
  }
  ad::Tensor averaging(layout.rows(), ids.size());
  std::size_t col = 0;
  for (std::size_t r = 0; r < layout.rows(); ++r) {
    const auto n = layout.descriptions[r].size();
    for (std::size_t k = 0; k < n; ++k) averaging(r, col++) = 1.0 / static_cast<double>(n);
  }
  return ad::matmul(tape.constant(std::move(averaging)), ad::embedding_lookup(word_table, ids));
}

ad::Var PrototypeEncoder::build(ad::Tape& tape, const PrototypeLayout& layout, const Vocab& vocab,
                                const ad::Var& word_table) const {
  if (layout.rows() == 0) throw Error("build_prototypes", "no slots");
  const auto names = name_embeddings(tape, layout, vocab, word_table);
  const auto refined = output_(tape, ad::tanh(hidden_(tape, names)));
  return ad::add(ad::matmul(names, tape.param(*skip_)), refined);
}

EntityEncoder::EntityEncoder(ad::ParameterStore& store, std::size_t input_dim, std::size_t hidden,
                             std::size_t proto_dim, Rng& init)
    : lstm_(store, "entity.lstm", input_dim, hidden, init), projection_(store, "entity.projection", 2 * hidden, proto_dim, init) {}

ad::Var EntityEncoder::encode(ad::Tape& tape, const ad::Var& states, const TaggedSpan& span) const {
  if (span.end < span.start || span.end >= states.value().rows()) {
    throw Error("encode_entity", "span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                                     "] outside " + std::to_string(states.value().rows()) + " states");
  }
  const auto rows = ad::slice_rows(states, span.start, span.end + 1);
  return projection_(tape, lstm_.final_states(tape, rows));
}

ad::Var prototype_scores(const ad::Var& r, const ad::Var& prototypes_t) { return ad::matmul(r, prototypes_t); }

ad::Var proto_contrastive_loss(const ad::Var& scores, std::size_t gold, double tau) {
  if (!(tau > 0.0)) throw Error("proto_contrastive_loss", "temperature must be positive");
  const auto& sv = scores.value();
  if (sv.rows() != 1 || gold >= sv.cols()) {
    throw Error("proto_contrastive_loss", "gold index " + std::to_string(gold) + " invalid for scores " + sv.shape_string());
  }
  const auto scaled = tau == 1.0 ? scores : ad::scale(scores, 1.0 / tau);
  const std::pair<std::size_t, std::size_t> pos{0, gold};
  return ad::sub(ad::log_sum_exp(scaled, 1), ad::gather(scaled, std::span(&pos, 1)));
}

ad::Var proto_contrastive_loss(const ad::Var& r, std::size_t gold, const ad::Var& prototypes, double tau) {
  return proto_contrastive_loss(prototype_scores(r, ad::transpose(prototypes)), gold, tau);
}

std::vector<double> confusion_target(std::span<const double> gold_prototype, const ad::Tensor& target_block) {
  if (target_block.rows() == 0) throw Error("confusion_target", "empty target block");
  if (target_block.cols() != gold_prototype.size()) {
    throw Error("confusion_target", "prototype width " + std::to_string(gold_prototype.size()) +
                                        " does not match target block " + target_block.shape_string());
  }
  const auto n = target_block.rows();
  const auto d = target_block.cols();
  std::vector<double> sims(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = target_block.data().subspan(j * d, d);
    sims[j] = std::max(0.0, ad::cosine_similarity(gold_prototype, row));
    total += sims[j];
  }
  if (total == 0.0) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  for (double& s : sims) s /= total;
  return sims;
}

std::vector<double> smooth_distribution(std::size_t gold, std::size_t source_count, std::span<const double> d_tgt,
                                        double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("smooth_distribution", "lambda must be in [0, 1]");
  if (gold >= source_count) {
    throw Error("smooth_distribution", "gold index " + std::to_string(gold) + " outside source block of " +
                                           std::to_string(source_count));
  }
  double mass = 0.0;
  for (double p : d_tgt) {
    if (p < 0.0) throw Error("smooth_distribution", "negative target mass");
    mass += p;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw Error("smooth_distribution", "target distribution sums to " + std::to_string(mass));
  std::vector<double> out(source_count + d_tgt.size(), 0.0);
  out[gold] = lambda;
  for (std::size_t j = 0; j < d_tgt.size(); ++j) out[source_count + j] = (1.0 - lambda) * d_tgt[j];
  return out;
}

ad::Var kl_confusion_loss(const ad::Var& scores, std::span<const double> d_smooth, KlDirection direction) {
  const auto& sv = scores.value();
  if (sv.rows() != 1 || sv.cols() != d_smooth.size()) {
    throw Error("kl_confusion_loss", "scores " + sv.shape_string() + " vs distribution of length " +
                                         std::to_string(d_smooth.size()));
  }
  auto& tape = *scores.tape();
  const auto log_pred = ad::log_softmax(scores, 1);
  const auto n = d_smooth.size();
  if (direction == KlDirection::kSmoothToPredicted) {
    ad::Tensor target(1, n), log_target(1, n);
    for (std::size_t c = 0; c < n; ++c) {
      target[c] = d_smooth[c];
      log_target[c] = d_smooth[c] > 0.0 ? std::log(d_smooth[c]) : 0.0;
    }
    return ad::sum(ad::mul(tape.constant(std::move(target)), ad::sub(tape.constant(std::move(log_target)), log_pred)));
  }
  ad::Tensor log_target(1, n);
  for (std::size_t c = 0; c < n; ++c) log_target[c] = std::log(std::max(d_smooth[c], 1e-12));
  return ad::sum(ad::mul(ad::exp(log_pred), ad::sub(log_pred, tape.constant(std::move(log_target)))));
}

ad::Var kl_confusion_loss(const ad::Var& r, const ad::Var& prototypes, std::span<const double> d_smooth,
                          KlDirection direction) {
  return kl_confusion_loss(prototype_scores(r, ad::transpose(prototypes)), d_smooth, direction);
}

std::size_t predict_row(std::span<const double> r, const ad::Tensor& prototypes, std::size_t begin, std::size_t end) {
  if (begin >= end || end > prototypes.rows()) throw Error("predict_slot_type", "empty candidate block");
  if (r.size() != prototypes.cols()) throw Error("predict_slot_type", "representation width does not match prototypes");
  std::size_t best = begin;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t row = begin; row < end; ++row) {
    double s = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) s += r[k] * prototypes(row, k);
    if (s > best_score) {
      best_score = s;
      best = row;
    }
  }
  return best;
}

std::size_t predict_row(std::span<const double> r, const ad::Tensor& prototypes, std::span<const std::size_t> candidates) {
  if (candidates.empty()) throw Error("predict_slot_type", "no candidate rows");
  if (r.size() != prototypes.cols()) throw Error("predict_slot_type", "representation width does not match prototypes");
  std::size_t best = candidates[0];
  double best_score = -std::numeric_limits<double>::infinity();
  for (auto row : candidates) {
    if (row >= prototypes.rows()) throw Error("predict_slot_type", "candidate row out of range");
    double s = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) s += r[k] * prototypes(row, k);
    if (s > best_score || (s == best_score && row < best)) {
      best_score = s;
      best = row;
    }
  }
  return best;
}

const std::string& predict_slot_type(std::span<const double> r, const ad::Tensor& prototypes,
                                     const PrototypeLayout& layout) {
  if (layout.target_slots.empty()) throw Error("predict_slot_type", "empty target block");
  return layout.label(predict_row(r, prototypes, layout.boundary(), layout.rows()));
}

}  // namespace pclc
