#include <doctest.h>

#include <cmath>

#include "pclc/error.hpp"
#include "pclc/tagger.hpp"
#include "support.hpp"

using namespace pclc;
using ad::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 2.0) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> as_ints(const std::vector<Bio>& tags) {
  std::vector<int> out;
  for (auto t : tags) out.push_back(static_cast<int>(t));
  return out;
}

struct Encoder {
  Vocab vocab;
  ad::ParameterStore store;
  std::unique_ptr<WordCharEncoder> encoder;
};

std::unique_ptr<Encoder> make_encoder(double dropout = 0.3) {
  auto e = std::make_unique<Encoder>();
  const auto corpus = fixtures::toy_corpus();
  e->vocab = build_vocab(corpus, build_schema(corpus));
  EncoderConfig c;
  c.word_dim = 6;
  c.char_dim = 3;
  c.char_hidden = 2;
  c.hidden = 5;
  c.dropout = dropout;
  Rng rng(1);
  const auto emb = load_embeddings(std::nullopt, e->vocab, c.word_dim, rng);
  e->encoder = std::make_unique<WordCharEncoder>(e->store, c, e->vocab, emb.matrix, rng);
  return e;
}

}  // namespace

TEST_CASE("default encoder configuration") {
  const EncoderConfig c;
  CHECK(c.hidden == 200);
  CHECK(c.layers == 2);
  CHECK(c.dropout == 0.3);
  CHECK(c.output_dim() == 400);
  EncoderConfig bad;
  bad.hidden = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("encoder output shape and eval determinism") {
  auto e = make_encoder();
  Rng drop(2);
  const std::vector<std::string> tokens = {"go", "to", "paris", "monday", "unknownword"};
  ad::Tape a(ad::Mode::kEval), b(ad::Mode::kEval);
  const auto ha = e->encoder->encode(a, tokens, e->vocab, drop).value();
  const auto hb = e->encoder->encode(b, tokens, e->vocab, drop).value();
  CHECK(ha.rows() == 5);
  CHECK(ha.cols() == 10);
  CHECK(ha == hb);
  ad::Tape c;
  CHECK_THROWS_AS(e->encoder->encode(c, {}, e->vocab, drop), Error);
}

TEST_CASE("single-token utterance") {
  auto e = make_encoder();
  Rng drop(2);
  ad::Tape tape(ad::Mode::kEval);
  const auto h = e->encoder->encode(tape, {"paris"}, e->vocab, drop).value();
  CHECK(h.rows() == 1);
  CHECK(h.cols() == 10);
}

TEST_CASE("dropout changes train-mode outputs only") {
  auto e = make_encoder(0.5);
  Rng d1(3), d2(4);
  ad::Tape a, b;
  const std::vector<std::string> tokens = {"go", "to", "rome"};
  CHECK(e->encoder->encode(a, tokens, e->vocab, d1).value() != e->encoder->encode(b, tokens, e->vocab, d2).value());
}

TEST_CASE("crf nll analytic cases") {
  ad::Tape tape;
  const CrfVars zero{tape.constant(Tensor(3, 3)), tape.constant(Tensor(1, 3)), tape.constant(Tensor(1, 3))};
  SUBCASE("single token reduces to log-sum-exp minus the gold emission") {
    const auto e = Tensor::row({0.3, -1.2, 2.0});
    const std::vector<Bio> gold = {Bio::kB};
    const double nll = crf_nll(tape.constant(e), gold, zero).value().item();
    CHECK(nll == doctest::Approx(ad::log_sum_exp(e.data()) - (-1.2)).epsilon(1e-14));
  }
  SUBCASE("all-zero scores give T ln 3") {
    const std::vector<Bio> gold = {Bio::kO, Bio::kB, Bio::kI, Bio::kO};
    const double nll = crf_nll(tape.constant(Tensor(4, 3)), gold, zero).value().item();
    CHECK(nll == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-14));
  }
  SUBCASE("shape mismatch") {
    const std::vector<Bio> gold = {Bio::kO};
    CHECK_THROWS_AS(crf_nll(tape.constant(Tensor(2, 3)), gold, zero), Error);
    CHECK_THROWS_AS(crf_nll(tape.constant(Tensor(1, 4)), gold, zero), Error);
  }
}

TEST_CASE("crf partition and nll match exhaustive enumeration") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const std::size_t T = 5;
    const auto e = random_tensor(T, 3, rng), tr = random_tensor(3, 3, rng);
    const auto st = random_tensor(1, 3, rng), en = random_tensor(1, 3, rng);
    const auto brute = oracle::crf_brute_force(e, tr, st, en);
    CHECK(std::abs(crf_log_partition(e, tr, st, en) - static_cast<double>(brute.log_z)) < 1e-9);

    std::vector<Bio> gold(T);
    for (auto& g : gold) g = static_cast<Bio>(rng.below(3));
    ad::Tape tape;
    const CrfVars v{tape.constant(tr), tape.constant(st), tape.constant(en)};
    const double nll = crf_nll(tape.constant(e), gold, v).value().item();
    CHECK(std::abs(nll - static_cast<double>(brute.log_z - oracle::path_score(e, tr, st, en, as_ints(gold)))) < 1e-9);
    CHECK(nll >= 0.0);
    CHECK(std::exp(-nll) <= 1.0);
    CHECK(std::abs(crf_path_score(e, tr, st, en, gold) -
                   static_cast<double>(oracle::path_score(e, tr, st, en, as_ints(gold)))) < 1e-12);

    const auto best = viterbi_decode(e, tr, st, en);
    CHECK(as_ints(best) == brute.best);
    CHECK(crf_path_score(e, tr, st, en, best) >= crf_path_score(e, tr, st, en, gold));
  }
}

TEST_CASE("viterbi special cases") {
  const Tensor zt(3, 3), zs(1, 3), ze(1, 3);
  SUBCASE("decoupled tokens take their own argmax") {
    const Tensor e(3, 3, std::vector<double>{0, 1, 0, 2, 0, 0, 0, 0, 3});
    CHECK(viterbi_decode(e, zt, zs, ze) == std::vector<Bio>{Bio::kB, Bio::kO, Bio::kI});
  }
  SUBCASE("all-zero scores decode to all O") {
    CHECK(viterbi_decode(Tensor(4, 3), zt, zs, ze) == std::vector<Bio>(4, Bio::kO));
  }
}

TEST_CASE("crf gradients match finite differences") {
  Rng rng(6);
  ad::ParameterStore store;
  store.add("e", random_tensor(4, 3, rng));
  const auto crf = CrfLayer::create(store, "crf");
  for (auto* p : {crf.transitions, crf.start, crf.end}) p->value = random_tensor(p->value.rows(), p->value.cols(), rng);
  const std::vector<Bio> gold = {Bio::kB, Bio::kI, Bio::kO, Bio::kB};
  auto loss = [&](bool backward) {
    ad::Tape tape;
    const auto l = crf_nll(tape.param(store.get("e")), gold, CrfVars::bind(tape, crf));
    if (backward) tape.backward(l);
    return l.value().item();
  };
  store.zero_grad();
  loss(true);
  CHECK(oracle::finite_difference_check(store, [&] { return loss(false); }, 1e-4, 1e-3).max_rel < 1e-6);
}

TEST_CASE("span extraction") {
  using B = Bio;
  CHECK(extract_spans(std::vector<Bio>{B::kB, B::kI, B::kO, B::kB}) ==
        std::vector<TaggedSpan>{{0, 1}, {3, 3}});
  CHECK(extract_spans(std::vector<Bio>{B::kI, B::kI}) == std::vector<TaggedSpan>{{0, 1}});
  CHECK(extract_spans(std::vector<Bio>{B::kO, B::kO, B::kO}).empty());
  CHECK(extract_spans(std::vector<Bio>{B::kB, B::kB, B::kO, B::kI}) ==
        std::vector<TaggedSpan>{{0, 0}, {1, 1}, {3, 3}});
}
