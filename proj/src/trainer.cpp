#include "pclc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "pclc/error.hpp"
#include "pclc/evaluator.hpp"

namespace pclc {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("train_config", "lr must be positive");
  if (batch_size == 0) throw Error("train_config", "batch_size must be positive");
  if (max_epochs == 0) throw Error("train_config", "max_epochs must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("train_config", "dropout must be in [0, 1)");
  if (!(crf_weight >= 0.0)) throw Error("train_config", "crf_weight must be non-negative");
  pclc.validate();
}

TrainingExample make_example(const Utterance& utterance, const PrototypeLayout& layout) {
  TrainingExample ex{&utterance, extract_spans(utterance.bio), {}};
  const auto block = utterance.domain == layout.target_domain ? Block::kTarget : Block::kSource;
  for (const auto& span : ex.spans) ex.rows.push_back(layout.row_of(utterance.slot_types[span.start], block));
  return ex;
}

std::vector<TrainingExample> make_examples(const std::vector<Utterance>& corpus, std::span<const std::size_t> indices,
                                           const PrototypeLayout& layout) {
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(make_example(corpus.at(i), layout));
  return out;
}

namespace {

ad::Var mean_of(const std::vector<ad::Var>& terms) {
  if (terms.empty()) return {};
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

std::vector<double> smoothed_target(const PrototypeLayout& layout, const ad::Tensor& protos,
                                    const ad::Tensor& target_block, std::size_t gold, double lambda) {
  if (layout.block(gold) == Block::kTarget) {
    std::vector<double> one_hot(layout.rows(), 0.0);
    one_hot[gold] = 1.0;
    return one_hot;
  }
  std::span<const double> z(protos.data().data() + gold * protos.cols(), protos.cols());
  const auto d_tgt = confusion_target(z, target_block);
  return smooth_distribution(gold, layout.boundary(), d_tgt, lambda);
}

ad::Tensor rows_of(const ad::Tensor& t, std::size_t begin, std::size_t end) {
  ad::Tensor out(end - begin, t.cols());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
            t.data().begin() + static_cast<std::ptrdiff_t>(end * t.cols()), out.data().begin());
  return out;
}

}  // namespace

LossTerms total_loss(ad::Tape& tape, std::span<const TrainingExample> batch, const PclcModel& model,
                     const TrainConfig& config, Rng& dropout_rng, std::vector<std::vector<double>>* smooth_cache,
                     TermMask mask) {
  if (batch.empty()) throw Error("total_loss", "empty batch");
  config.pclc.validate();
  const auto& layout = model.layout();
  const bool baseline = !config.enable_pcl && !config.enable_lc;
  const bool want_pc = mask.pc && config.enable_pcl;
  const bool want_kl = mask.kl && config.enable_lc;
  const bool want_ce = mask.ce && baseline;

  LossTerms terms;
  for (const auto& ex : batch) terms.entities += ex.spans.size();
  const bool stage2 = (want_pc || want_kl || want_ce) && terms.entities > 0;

  ad::Var protos, protos_t;
  ad::Tensor target_block;
  if (stage2) {
    protos = model.prototypes(tape);
    protos_t = ad::transpose(protos);
    if (want_kl) target_block = rows_of(protos.value(), layout.boundary(), layout.rows());
  }
  const bool fill_cache = smooth_cache != nullptr && smooth_cache->empty();
  if (want_kl && stage2 && smooth_cache != nullptr && !fill_cache && smooth_cache->size() != terms.entities) {
    throw Error("total_loss", "smoothing cache holds " + std::to_string(smooth_cache->size()) + " targets for " +
                                  std::to_string(terms.entities) + " entities");
  }

  std::optional<CrfVars> crf;
  if (mask.crf) crf = model.crf(tape);
  std::vector<ad::Var> crf_terms, pc_terms, kl_terms, ce_terms;
  std::size_t entity = 0;
  for (const auto& ex : batch) {
    const auto& u = *ex.utterance;
    const auto states = model.encode(tape, u.tokens, dropout_rng);
    if (mask.crf) crf_terms.push_back(crf_nll(model.emissions(tape, states), u.bio, *crf));
    if (!stage2) continue;
    for (std::size_t k = 0; k < ex.spans.size(); ++k, ++entity) {
      const auto r = model.entity(tape, states, ex.spans[k]);
      const auto scores = prototype_scores(r, protos_t);
      const auto gold = ex.rows[k];
      const bool source = layout.block(gold) == Block::kSource;
      const std::size_t begin = source ? 0 : layout.boundary();
      const std::size_t end = source ? layout.boundary() : layout.rows();
      if (want_pc) {
        pc_terms.push_back(config.pc_over_both_blocks
                               ? proto_contrastive_loss(scores, gold, config.pclc.tau)
                               : proto_contrastive_loss(ad::slice_cols(scores, begin, end), gold - begin,
                                                        config.pclc.tau));
      }
      if (want_kl) {
        std::vector<double> d;
        if (smooth_cache != nullptr && !fill_cache) {
          d = (*smooth_cache)[entity];
        } else {
          d = smoothed_target(layout, protos.value(), target_block, gold, config.pclc.lambda);
          if (fill_cache) smooth_cache->push_back(d);
        }
        kl_terms.push_back(kl_confusion_loss(scores, d, config.kl_direction));
      }
      if (want_ce) ce_terms.push_back(proto_contrastive_loss(ad::slice_cols(scores, begin, end), gold - begin, 1.0));
    }
  }

  terms.crf = mean_of(crf_terms);
  terms.pc = mean_of(pc_terms);
  terms.kl = mean_of(kl_terms);
  terms.ce = mean_of(ce_terms);

  std::vector<ad::Var> parts;
  if (terms.crf.valid()) parts.push_back(ad::scale(terms.crf, config.crf_weight));
  if (terms.pc.valid()) parts.push_back(terms.pc);
  if (terms.kl.valid()) parts.push_back(ad::scale(terms.kl, config.pclc.alpha));
  if (terms.ce.valid()) parts.push_back(terms.ce);
  if (parts.empty()) {
    terms.total = tape.constant(ad::Tensor::scalar(0.0));
  } else {
    terms.total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) terms.total = ad::add(terms.total, parts[i]);
  }
  return terms;
}

bool early_stop_check(std::span<const double> history, std::size_t patience) {
  if (history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] > history[best]) best = i;
  return history.size() - 1 - best >= std::max<std::size_t>(patience, 1);
}

std::string format_epoch(const EpochRecord& r) {
  std::string line = "epoch=" + std::to_string(r.epoch) + "\tl_crf=" + format_double(r.l_crf) +
                     "\tl_pc=" + format_double(r.l_pc) + "\tl_kl=" + format_double(r.l_kl) +
                     "\tl_ce=" + format_double(r.l_ce) + "\tval_f1=" + format_double(r.val_f1);
  if (r.train_f1) line += "\ttrain_f1=" + format_double(*r.train_f1);
  return line;
}

double span_f1_on(const PclcModel& model, const std::vector<Utterance>& corpus, std::span<const std::size_t> indices,
                  const SlotSchema& schema) {
  if (indices.empty()) return 0.0;
  SpanSets gold;
  for (auto i : indices) gold.push_back(gold_spans(corpus.at(i)));
  return span_f1(gold, predict_spans(model, corpus, indices, schema)).f1();
}

namespace {

void check_finite(double value, const char* term, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(value)) {
    throw Error("train", std::string("non-finite ") + term + " (" + format_double(value) + ") at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace

TrainResult train_run(PclcModel& model, const TrainInputs& inputs, const TrainConfig& config, std::ostream* log) {
  config.validate();
  const auto& corpus = *inputs.corpus;
  const auto& split = *inputs.split;
  const auto examples = make_examples(corpus, split.train, model.layout());
  if (examples.empty()) throw Error("train", "training set is empty");

  auto& store = model.params();
  ad::Adam adam(ad::AdamConfig{config.lr});
  Rng shuffle_rng(config.seed ^ 0x73687566666c65ULL);
  Rng dropout_rng(config.seed ^ 0x64726f706f7574ULL);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainingExample> batch;
  std::vector<double> val_history;

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t j = start; j < std::min(order.size(), start + config.batch_size); ++j)
        batch.push_back(examples[order[j]]);
      ad::Tape tape(ad::Mode::kTrain);
      const auto terms = total_loss(tape, batch, model, config, dropout_rng);
      ++batches;
      const double crf = terms.value(terms.crf), pc = terms.value(terms.pc);
      const double kl = terms.value(terms.kl), ce = terms.value(terms.ce);
      check_finite(crf, "L_crf", epoch, batches);
      check_finite(pc, "L_pc", epoch, batches);
      check_finite(kl, "L_kl", epoch, batches);
      check_finite(ce, "L_ce", epoch, batches);
      rec.l_crf += crf;
      rec.l_pc += pc;
      rec.l_kl += kl;
      rec.l_ce += ce;

      store.zero_grad();
      tape.backward(terms.total);
      if (config.clip_norm > 0.0) {
        const double norm = store.grad_norm();
        check_finite(norm, "gradient norm", epoch, batches);
        if (norm > config.clip_norm) store.scale_grad(config.clip_norm / norm);
      }
      adam.step(store);
    }
    const double n = static_cast<double>(batches);
    rec.l_crf /= n;
    rec.l_pc /= n;
    rec.l_kl /= n;
    rec.l_ce /= n;
    rec.val_f1 = span_f1_on(model, corpus, split.validation, *inputs.schema);
    if (config.log_train_f1) rec.train_f1 = span_f1_on(model, corpus, split.train, *inputs.schema);
    if (log != nullptr) *log << format_epoch(rec) << "\n" << std::flush;
    result.history.push_back(rec);
    val_history.push_back(rec.val_f1);

    if (epoch == 1 || rec.val_f1 > result.best_val_f1) {
      result.best_epoch = epoch;
      result.best_val_f1 = rec.val_f1;
      result.best = make_checkpoint(model, adam, epoch, rec.val_f1, inputs.config_snapshot);
    }
    if (early_stop_check(val_history, config.patience)) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }

  for (std::size_t i = 0; i < store.size(); ++i) store[i].value = result.best.tensors[i];
  return result;
}

}  // namespace pclc
