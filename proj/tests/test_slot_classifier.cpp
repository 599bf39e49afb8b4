#include <doctest.h>

#include <cmath>

#include "pclc/error.hpp"
#include "pclc/slot_classifier.hpp"
#include "support.hpp"

using namespace pclc;
using ad::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<std::vector<oracle::ld>> rows_of(const Tensor& t) {
  std::vector<std::vector<oracle::ld>> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::vector<oracle::ld> row;
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    out.push_back(row);
  }
  return out;
}

std::vector<double> scores_of(const Tensor& r, const Tensor& protos) {
  std::vector<double> s(protos.rows(), 0.0);
  for (std::size_t c = 0; c < protos.rows(); ++c)
    for (std::size_t k = 0; k < r.cols(); ++k) s[c] += r[k] * protos(c, k);
  return s;
}

double pc_value(const Tensor& scores, std::size_t gold, double tau) {
  ad::Tape tape;
  return proto_contrastive_loss(tape.constant(scores), gold, tau).value().item();
}

double kl_value(const Tensor& scores, const std::vector<double>& d, KlDirection dir = KlDirection::kSmoothToPredicted) {
  ad::Tape tape;
  return kl_confusion_loss(tape.constant(scores), d, dir).value().item();
}

}  // namespace

TEST_CASE("default hyperparameters and validation") {
  const PclcHyperparams h;
  CHECK(h.tau == 1.0);
  CHECK(h.lambda == 0.6);
  CHECK(h.alpha == 1.0);
  PclcHyperparams bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("prototype layout has a source block then a target block") {
  const auto corpus = fixtures::toy_corpus();
  auto extra = corpus;
  extra.push_back(fixtures::utterance("beta", 2, {{"paris", "B-city"}}));
  const auto schema = build_schema(extra);
  const auto layout = PrototypeLayout::build(schema, "beta");
  CHECK(layout.source_slots == std::vector<std::string>{"city", "day", "person_name"});
  CHECK(layout.target_slots == std::vector<std::string>{"artist", "city", "genre"});
  CHECK(layout.boundary() == 3);
  CHECK(layout.rows() == 6);
  CHECK(layout.row_of("city", Block::kSource) == 0);
  CHECK(layout.row_of("city", Block::kTarget) == 4);
  CHECK(layout.block(2) == Block::kSource);
  CHECK(layout.block(3) == Block::kTarget);
  CHECK(layout.label(5) == "genre");
  CHECK_FALSE(layout.contains("genre", Block::kSource));
  CHECK_THROWS_AS(layout.row_of("genre", Block::kSource), Error);
  CHECK(layout.descriptions.size() == 6);
  CHECK(layout.descriptions[2] == std::vector<std::string>{"person", "name"});
  CHECK_THROWS_AS(PrototypeLayout::build(schema, "gamma"), Error);
}

TEST_CASE("prototypes") {
  auto t = fixtures::toy_model();
  auto& model = *t.model;
  ad::Tape tape(ad::Mode::kEval);
  const auto protos = model.prototypes(tape).value();
  CHECK(protos.rows() == t.layout.rows());
  CHECK(protos.cols() == 8);
  for (std::size_t r = 0; r < protos.rows(); ++r) {
    double norm = 0;
    for (std::size_t c = 0; c < protos.cols(); ++c) norm += protos(r, c) * protos(r, c);
    CHECK(std::isfinite(norm));
    CHECK(norm > 0.0);
  }

  SUBCASE("zero hidden contribution leaves the identity skip map") {
    auto& enc = model.prototype_encoder();
    enc.output().weight().value.fill(0.0);
    enc.output().bias().value.fill(0.0);
    ad::Tape t2(ad::Mode::kEval);
    const auto table = t2.param(model.params().get("encoder.word_embeddings"));
    const auto names = enc.name_embeddings(t2, t.layout, t.vocab, table).value();
    CHECK(enc.build(t2, t.layout, t.vocab, table).value() == names);
  }
  SUBCASE("identical descriptions give identical rows") {
    PrototypeLayout twin = t.layout;
    twin.descriptions[1] = twin.descriptions[0];
    ad::Tape t2(ad::Mode::kEval);
    const auto table = t2.param(model.params().get("encoder.word_embeddings"));
    const auto p = model.prototype_encoder().build(t2, twin, t.vocab, table).value();
    for (std::size_t c = 0; c < p.cols(); ++c) CHECK(p(0, c) == p(1, c));
  }
  SUBCASE("empty description is an error") {
    PrototypeLayout broken = t.layout;
    broken.descriptions[0].clear();
    ad::Tape t2;
    const auto table = t2.param(model.params().get("encoder.word_embeddings"));
    CHECK_THROWS_AS(model.prototype_encoder().build(t2, broken, t.vocab, table), Error);
  }
}

TEST_CASE("entity encoder") {
  auto t = fixtures::toy_model();
  auto& model = *t.model;
  Rng drop(1);
  const std::vector<std::string> tokens = {"go", "to", "paris", "monday"};
  ad::Tape a(ad::Mode::kEval), b(ad::Mode::kEval);
  const auto sa = model.encode(a, tokens, drop);
  const auto sb = model.encode(b, tokens, drop);
  CHECK(model.entity(a, sa, {2, 2}).value().cols() == 8);
  CHECK(model.entity(a, sa, {1, 3}).value().cols() == 8);
  CHECK(model.entity(a, sa, {0, 1}).value() == model.entity(b, sb, {0, 1}).value());
  CHECK_THROWS_AS(model.entity(a, sa, {3, 2}), Error);
  CHECK_THROWS_AS(model.entity(a, sa, {2, 4}), Error);
}

TEST_CASE("contrastive loss") {
  CHECK(pc_value(Tensor::row({0.7, 0.7}), 0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(pc_value(Tensor::row({3.2}), 0, 1.0) == 0.0);
  CHECK_THROWS_AS(pc_value(Tensor::row({1.0, 2.0}), 0, 0.0), Error);
  CHECK_THROWS_AS(pc_value(Tensor::row({1.0, 2.0}), 2, 1.0), Error);

  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    const auto r = random_tensor(1, 6, rng, 2.0), protos = random_tensor(5, 6, rng, 2.0);
    const auto gold = static_cast<std::size_t>(rng.below(5));
    for (double tau : {0.5, 1.0}) {
      ad::Tape tape;
      const double got =
          proto_contrastive_loss(tape.constant(r), gold, tape.constant(protos), tau).value().item();
      const auto want = oracle::contrastive(oracle::widen(r.data()), rows_of(protos), gold, tau);
      CHECK(std::abs(got - static_cast<double>(want)) < 1e-10);
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("confusion target") {
  SUBCASE("single target slot") {
    const std::vector<double> z = {1.0, 2.0};
    CHECK(confusion_target(z, Tensor(1, 2, std::vector<double>{-3.0, 0.5})) == std::vector<double>{1.0});
  }
  SUBCASE("similarities 0.6 and 0.2 normalise to 0.75 and 0.25") {
    // Unit rows at the chosen angles to z = e1.
    const std::vector<double> z = {1.0, 0.0};
    const Tensor block(2, 2, std::vector<double>{0.6, 0.8, 0.2, std::sqrt(1.0 - 0.04)});
    const auto d = confusion_target(z, block);
    CHECK(d[0] == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(d[1] == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("negative similarity is clamped") {
    const std::vector<double> z = {1.0, 0.0};
    const Tensor block(2, 2, std::vector<double>{0.5, std::sqrt(0.75), -0.5, std::sqrt(0.75)});
    CHECK(confusion_target(z, block) == std::vector<double>{1.0, 0.0});
  }
  SUBCASE("uniform when no similarity is positive") {
    const std::vector<double> z = {1.0, 0.0};
    const Tensor block(2, 2, std::vector<double>{-1.0, 0.0, 0.0, 1.0});
    CHECK(confusion_target(z, block) == std::vector<double>{0.5, 0.5});
  }
  SUBCASE("errors") {
    const std::vector<double> z = {1.0, 0.0}, zero = {0.0, 0.0};
    CHECK_THROWS_AS(confusion_target(z, Tensor(2, 2, std::vector<double>{1, 0, 0, 0})), Error);
    CHECK_THROWS_AS(confusion_target(zero, Tensor(1, 2, 1.0)), Error);
    CHECK_THROWS_AS(confusion_target(z, Tensor(0, 2)), Error);
  }
}

TEST_CASE("smoothed distribution") {
  const std::vector<double> d_tgt = {0.75, 0.25};
  const auto d = smooth_distribution(1, 2, d_tgt, 0.6);
  REQUIRE(d.size() == 4);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(d[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(d[3] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(smooth_distribution(0, 2, d_tgt, 1.0) == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(smooth_distribution(0, 2, d_tgt, 0.0) == std::vector<double>{0.0, 0.0, 0.75, 0.25});
  CHECK_THROWS_AS(smooth_distribution(2, 2, d_tgt, 0.6), Error);
  CHECK_THROWS_AS(smooth_distribution(0, 2, d_tgt, 1.2), Error);

  Rng rng(22);
  for (int i = 0; i < 200; ++i) {
    const std::size_t S = 1 + rng.below(6), T = 1 + rng.below(6), d = 2 + rng.below(5);
    const auto protos = random_tensor(T + 1, d, rng);
    std::vector<double> z(protos.data().begin(), protos.data().begin() + static_cast<long>(d));
    Tensor block(T, d, std::vector<double>(protos.data().begin() + static_cast<long>(d), protos.data().end()));
    for (double lambda : {0.0, 0.3, 0.6, 1.0}) {
      const auto out = smooth_distribution(rng.below(S), S, confusion_target(z, block), lambda);
      double total = 0;
      for (double v : out) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("kl confusion loss") {
  SUBCASE("zero when the prediction equals the target") {
    const std::vector<double> d = {0.1, 0.6, 0.3};
    CHECK(kl_value(Tensor::row({std::log(0.1), std::log(0.6), std::log(0.3)}), d) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(kl_value(Tensor::row({std::log(0.1), std::log(0.6), std::log(0.3)}), d)) < 1e-12);
  }
  SUBCASE("zero-mass entries contribute nothing") {
    const std::vector<double> d = {0.0, 0.5, 0.5};
    CHECK(kl_value(Tensor::row({-40.0, 1.0, 1.0}), d) == doctest::Approx(kl_value(Tensor::row({5.0, 1.0, 1.0}), d) +
                                                                          std::log(std::exp(-40.0) + 2 * std::exp(1.0)) -
                                                                          std::log(std::exp(5.0) + 2 * std::exp(1.0)))
                                                             .epsilon(1e-12));
  }
  SUBCASE("length mismatch") {
    const std::vector<double> d = {0.5, 0.5};
    CHECK_THROWS_AS(kl_value(Tensor::row({1.0, 2.0, 3.0}), d), Error);
  }
  SUBCASE("random pairs against extended precision") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
      const std::size_t C = 2 + rng.below(7);
      const auto scores = random_tensor(1, C, rng, 3.0);
      std::vector<double> d(C);
      double total = 0;
      for (auto& v : d) total += (v = rng.uniform() < 0.3 ? 0.0 : rng.uniform());
      if (total == 0) d[0] = total = 1.0;
      for (auto& v : d) v /= total;
      const double fwd = kl_value(scores, d);
      const double rev = kl_value(scores, d, KlDirection::kPredictedToSmooth);
      CHECK(fwd >= 0.0);
      CHECK(std::abs(fwd - static_cast<double>(oracle::kl_smooth_to_predicted(oracle::widen(d),
                                                                              oracle::widen(scores.data())))) < 1e-10);
      CHECK(std::abs(rev - static_cast<double>(oracle::kl_predicted_to_smooth(oracle::widen(d),
                                                                              oracle::widen(scores.data())))) < 1e-9);
    }
  }
}

TEST_CASE("prediction") {
  SUBCASE("axis-aligned prototypes") {
    Tensor protos(3, 3);
    for (std::size_t i = 0; i < 3; ++i) protos(i, i) = 1.0;
    const std::vector<double> r = {0.1, 0.2, 0.9};
    CHECK(predict_row(r, protos, 0, 3) == 2);
    const std::vector<double> flat = {0.5, 0.5, 0.5};
    CHECK(predict_row(flat, protos, 0, 3) == 0);
    CHECK(predict_row(flat, protos, 1, 3) == 1);
    CHECK_THROWS_AS(predict_row(flat, protos, 2, 2), Error);
  }
  SUBCASE("target block only") {
    PrototypeLayout layout;
    layout.source_slots = {"a", "b"};
    layout.target_slots = {"c", "d"};
    Tensor protos(4, 2, std::vector<double>{10, 10, 10, 10, 1, 0, 0, 1});
    const std::vector<double> r = {0.2, 0.9};
    CHECK(predict_slot_type(r, protos, layout) == "d");
  }
  SUBCASE("random instances agree with a direct scan and with positive rescaling") {
    Rng rng(24);
    for (int i = 0; i < 100; ++i) {
      const auto protos = random_tensor(7, 4, rng);
      const auto r = random_tensor(1, 4, rng);
      const auto s = scores_of(r, protos);
      std::size_t best = 2;
      for (std::size_t c = 3; c < 7; ++c)
        if (s[c] > s[best]) best = c;
      CHECK(predict_row(r.data(), protos, 2, 7) == best);
      const double k = 0.01 + rng.uniform() * 100.0;
      Tensor sp = protos, sr = r;
      for (auto& v : sp.data()) v *= k;
      for (auto& v : sr.data()) v *= k;
      CHECK(predict_row(sr.data(), sp, 2, 7) == best);
    }
  }
}

TEST_CASE("stage-2 gradients match finite differences") {
  auto t = fixtures::toy_model(5, fixtures::toy_model_config(4));
  auto& model = *t.model;
  Rng drop(1);
  const std::vector<std::string> tokens = {"call", "ann", "lee"};
  const std::size_t gold = t.layout.row_of("person_name", Block::kSource);
  // Fixed smoothed target so only L_pc + alpha L_kl is differentiated.
  ad::Tape probe(ad::Mode::kEval);
  const auto p0 = model.prototypes(probe).value();
  std::vector<double> z(p0.cols());
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = p0(gold, c);
  Tensor block(t.layout.target_slots.size(), p0.cols());
  for (std::size_t r = 0; r < block.rows(); ++r)
    for (std::size_t c = 0; c < block.cols(); ++c) block(r, c) = p0(t.layout.boundary() + r, c);
  const auto d = smooth_distribution(gold, t.layout.boundary(), confusion_target(z, block), 0.6);

  auto loss = [&](bool backward) {
    ad::Tape tape(ad::Mode::kEval);
    Rng dr(1);
    const auto states = model.encode(tape, tokens, dr);
    const auto r = model.entity(tape, states, {1, 2});
    const auto protos = model.prototypes(tape);
    const auto l = ad::add(proto_contrastive_loss(r, gold, protos, 0.7), ad::scale(kl_confusion_loss(r, protos, d), 0.8));
    if (backward) tape.backward(l);
    return l.value().item();
  };
  model.params().zero_grad();
  loss(true);
  const auto check = oracle::finite_difference_check(model.params(), [&] { return loss(false); }, 1e-5, 1e-3);
  INFO(check.worst);
  CHECK(check.max_rel < 1e-6);
}
