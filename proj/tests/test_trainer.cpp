#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "pclc/error.hpp"
#include "pclc/run_config.hpp"
#include "pclc/trainer.hpp"
#include "support.hpp"

using namespace pclc;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.corpus_dir = fixtures::data_path("data/overfit");
  c.target = "weather";
  c.model.encoder.word_dim = 8;
  c.model.encoder.char_dim = 4;
  c.model.encoder.char_hidden = 4;
  c.model.encoder.hidden = 8;
  c.model.proto_dim = 8;
  c.model.entity_hidden = 6;
  c.train.lr = 0.01;
  c.train.batch_size = 8;
  c.train.dropout = 0.1;
  c.max_epochs = 4;
  return c;
}

struct Run {
  Experiment exp;
  std::unique_ptr<PclcModel> model;
};

Run make_run(const RunConfig& c) {
  Run r{prepare_experiment(c), nullptr};
  r.model = std::make_unique<PclcModel>(c.effective_model(), r.exp.vocab, r.exp.layout, r.exp.embeddings.matrix,
                                        c.train.seed);
  return r;
}

TrainResult train(Run& r, const RunConfig& c, std::ostream* log = nullptr) {
  const TrainInputs in{&r.exp.corpus, &r.exp.schema, &r.exp.split, c.snapshot()};
  return train_run(*r.model, in, c.effective_train(), log);
}

double eval_terms(const std::vector<TrainingExample>& batch, const PclcModel& model, const TrainConfig& config,
                  TermMask mask, std::vector<std::vector<double>>* cache, ad::Var LossTerms::*term) {
  ad::Tape tape;
  Rng drop(99);
  const auto t = total_loss(tape, batch, model, config, drop, cache, mask);
  return t.value(t.*term);
}

}  // namespace

TEST_CASE("default training configuration") {
  const TrainConfig c;
  CHECK(c.lr == 0.0005);
  CHECK(c.batch_size == 64);
  CHECK(c.dropout == 0.3);
  CHECK(c.patience == 15);
  CHECK(c.max_epochs == kZeroShotEpochs);
  CHECK(kZeroShotEpochs == 30);
  CHECK(kFewShotEpochs == 60);
  CHECK(c.pclc.lambda == 0.6);
  CHECK(c.enable_pcl);
  CHECK(c.enable_lc);
  CHECK(c.clip_norm == 5.0);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.max_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("early stopping") {
  const std::vector<double> plateau = {0.5, 0.6, 0.6, 0.6};
  CHECK_FALSE(early_stop_check(std::span(plateau).first(3), 2));
  CHECK(early_stop_check(plateau, 2));
  const std::vector<double> rising = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  for (std::size_t n = 1; n <= rising.size(); ++n)
    for (std::size_t p : {0, 1, 3}) CHECK_FALSE(early_stop_check(std::span(rising).first(n), p));
  const std::vector<double> one = {0.7};
  for (std::size_t p : {0, 1, 15}) CHECK_FALSE(early_stop_check(one, p));
  const std::vector<double> dip = {0.7, 0.6};
  CHECK(early_stop_check(dip, 0));
  CHECK_FALSE(early_stop_check(dip, 2));
}

TEST_CASE("training examples point at the right block") {
  auto t = fixtures::toy_model();
  const auto src = make_example(t.corpus[1], t.layout);
  CHECK(src.spans == std::vector<TaggedSpan>{{1, 2}});
  CHECK(src.rows == std::vector<std::size_t>{t.layout.row_of("person_name", Block::kSource)});
  const auto tgt = make_example(t.corpus[4], t.layout);
  CHECK(tgt.rows == std::vector<std::size_t>{t.layout.row_of("genre", Block::kTarget),
                                             t.layout.row_of("artist", Block::kTarget)});
}

TEST_CASE("loss terms") {
  auto t = fixtures::toy_model();
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const auto batch = make_examples(t.corpus, idx, t.layout);
  TrainConfig config;
  config.pclc.alpha = 0.7;
  config.crf_weight = 1.3;

  SUBCASE("total is the weighted sum of separately evaluated terms") {
    std::vector<std::vector<double>> cache;
    const TermMask all;
    ad::Tape tape;
    Rng drop(99);
    const auto terms = total_loss(tape, batch, *t.model, config, drop, &cache, all);
    CHECK(terms.entities == 6);
    CHECK(cache.size() == 6);
    CHECK_FALSE(terms.ce.valid());
    const double crf = eval_terms(batch, *t.model, config, {true, false, false, false}, nullptr, &LossTerms::crf);
    const double pc = eval_terms(batch, *t.model, config, {false, true, false, false}, nullptr, &LossTerms::pc);
    const double kl = eval_terms(batch, *t.model, config, {false, false, true, false}, &cache, &LossTerms::kl);
    CHECK(std::abs(terms.total.value().item() - (1.3 * crf + pc + 0.7 * kl)) < 1e-12);

    // Direct CRF average, bypassing total_loss.
    ad::Tape direct(ad::Mode::kEval);
    Rng d2(99);
    double sum = 0;
    for (const auto& ex : batch) {
      const auto states = t.model->encode(direct, ex.utterance->tokens, d2);
      sum += crf_nll(t.model->emissions(direct, states), ex.utterance->bio, t.model->crf(direct)).value().item();
    }
    CHECK(std::abs(crf - sum / 4.0) < 1e-12);
  }
  SUBCASE("disabling both PCL and LC leaves L_crf plus cross-entropy") {
    config.enable_pcl = config.enable_lc = false;
    ad::Tape tape;
    Rng drop(99);
    const auto terms = total_loss(tape, batch, *t.model, config, drop);
    CHECK_FALSE(terms.pc.valid());
    CHECK_FALSE(terms.kl.valid());
    REQUIRE(terms.ce.valid());
    CHECK(std::abs(terms.total.value().item() - (1.3 * terms.value(terms.crf) + terms.value(terms.ce))) < 1e-12);
  }
  SUBCASE("flags are independent") {
    config.enable_lc = false;
    ad::Tape tape;
    Rng drop(99);
    const auto terms = total_loss(tape, batch, *t.model, config, drop);
    CHECK(terms.pc.valid());
    CHECK_FALSE(terms.kl.valid());
    CHECK_FALSE(terms.ce.valid());
  }
  SUBCASE("all-O batch has only the CRF term") {
    const std::vector<Utterance> plain = {fixtures::utterance("alpha", 9, {{"go", "O"}, {"to", "O"}})};
    const std::vector<std::size_t> one = {0};
    const auto b = make_examples(plain, one, t.layout);
    ad::Tape tape;
    Rng drop(99);
    const auto terms = total_loss(tape, b, *t.model, config, drop);
    CHECK(terms.entities == 0);
    CHECK(terms.value(terms.pc) == 0.0);
    CHECK(terms.value(terms.kl) == 0.0);
    CHECK(terms.total.value().item() == doctest::Approx(1.3 * terms.value(terms.crf)).epsilon(1e-15));
  }
  SUBCASE("empty batch is an error") {
    ad::Tape tape;
    Rng drop(99);
    CHECK_THROWS_AS(total_loss(tape, {}, *t.model, config, drop), Error);
  }
}

TEST_CASE("every parameter receives gradient on the overfit corpus") {
  const auto c = small_config();
  auto r = make_run(c);
  auto& store = r.model->params();
  const auto examples = make_examples(r.exp.corpus, r.exp.split.train, r.exp.layout);
  std::set<std::string> touched;
  const auto config = c.effective_train();
  for (std::size_t start = 0; start < examples.size(); start += 8) {
    const auto end = std::min(examples.size(), start + 8);
    std::vector<TrainingExample> batch(examples.begin() + static_cast<long>(start),
                                       examples.begin() + static_cast<long>(end));
    ad::Tape tape;
    Rng drop(5);
    const auto terms = total_loss(tape, batch, *r.model, config, drop);
    store.zero_grad();
    tape.backward(terms.total);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double g : store[i].grad.data())
        if (g != 0.0) touched.insert(store[i].name);
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    INFO(store[i].name);
    CHECK(touched.count(store[i].name) == 1);
  }
}

TEST_CASE("training loop") {
  auto c = small_config();

  SUBCASE("log lines and best-checkpoint retention") {
    c.max_epochs = 5;
    c.train.patience = 5;
    auto r = make_run(c);
    std::ostringstream log;
    const auto result = train(r, c, &log);
    CHECK(result.history.size() == 5);
    std::size_t lines = 0;
    std::istringstream in(log.str());
    for (std::string line; std::getline(in, line); ++lines) {
      CHECK(line.rfind("epoch=" + std::to_string(lines + 1) + "\tl_crf=", 0) == 0);
      CHECK(line.find("\tval_f1=") != std::string::npos);
    }
    CHECK(lines == 5);
    double best = -1;
    std::size_t best_epoch = 0;
    for (const auto& rec : result.history)
      if (rec.val_f1 > best) best = rec.val_f1, best_epoch = rec.epoch;
    CHECK(result.best_val_f1 == best);
    CHECK(result.best_epoch == best_epoch);
    CHECK(result.best.epoch == best_epoch);
    for (std::size_t i = 0; i < r.model->params().size(); ++i)
      CHECK(r.model->params()[i].value == result.best.tensors[i]);
    CHECK(span_f1_on(*r.model, r.exp.corpus, r.exp.split.validation, r.exp.schema) == best);
  }
  SUBCASE("same seed gives the same trajectory") {
    auto a = make_run(c), b = make_run(c);
    const auto ha = train(a, c).history, hb = train(b, c).history;
    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(format_epoch(ha[i]) == format_epoch(hb[i]));
    for (std::size_t i = 0; i < a.model->params().size(); ++i)
      CHECK(a.model->params()[i].value == b.model->params()[i].value);
  }
  SUBCASE("patience 0 stops after the first epoch without improvement") {
    c.max_epochs = 12;
    c.train.patience = 0;
    auto r = make_run(c);
    const auto result = train(r, c);
    const auto& h = result.history;
    std::vector<double> f1;
    for (const auto& rec : h) f1.push_back(rec.val_f1);
    for (std::size_t n = 1; n < f1.size(); ++n) CHECK_FALSE(early_stop_check(std::span(f1).first(n), 0));
    if (h.size() < 12) {
      CHECK(result.stopped_early);
      CHECK(h.back().val_f1 <= result.best_val_f1);
      CHECK(h.size() == result.best_epoch + 1);
    }
  }
  SUBCASE("a non-finite loss names the offending term") {
    auto r = make_run(c);
    r.model->crf_layer().transitions->value.fill(std::numeric_limits<double>::quiet_NaN());
    try {
      train(r, c);
      FAIL("expected an error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("L_crf") != std::string::npos);
      CHECK(msg.find("epoch 1") != std::string::npos);
    }
  }
}
