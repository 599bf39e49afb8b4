#pragma once

// Test-only oracles written independently of the library code paths, plus
// small fixtures shared by several test binaries.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/model.hpp"
#include "pclc/rng.hpp"
#include "pclc/slot_classifier.hpp"
#include "pclc/trainer.hpp"

#ifndef PCLC_SOURCE_DIR
#define PCLC_SOURCE_DIR "."
#endif

namespace oracle {

using ld = long double;

// Direct exp/log in extended precision; callers keep inputs moderate.
inline ld log_sum_exp(const std::vector<ld>& xs) {
  ld s = 0;
  for (ld x : xs) s += std::exp(x);
  return std::log(s);
}

inline std::vector<ld> widen(std::span<const double> xs) { return {xs.begin(), xs.end()}; }

// -log( exp(s_gold / tau) / sum_c exp(s_c / tau) ), with s_c = r . z_c.
inline ld contrastive(const std::vector<ld>& r, const std::vector<std::vector<ld>>& protos, std::size_t gold, ld tau) {
  std::vector<ld> scaled;
  for (const auto& z : protos) {
    ld dot = 0;
    for (std::size_t k = 0; k < r.size(); ++k) dot += r[k] * z[k];
    scaled.push_back(dot / tau);
  }
  ld denom = 0;
  for (ld s : scaled) denom += std::exp(s);
  return -std::log(std::exp(scaled[gold]) / denom);
}

// sum_c p_c (log p_c - log q_c) with q = softmax(scores), 0 log 0 = 0.
inline ld kl_smooth_to_predicted(const std::vector<ld>& p, const std::vector<ld>& scores) {
  ld denom = 0;
  for (ld s : scores) denom += std::exp(s);
  ld out = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] == 0) continue;
    const ld q = std::exp(scores[c]) / denom;
    out += p[c] * std::log(p[c] / q);
  }
  return out;
}

// sum_c q_c (log q_c - log max(p_c, 1e-12)).
inline ld kl_predicted_to_smooth(const std::vector<ld>& p, const std::vector<ld>& scores) {
  ld denom = 0;
  for (ld s : scores) denom += std::exp(s);
  ld out = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const ld q = std::exp(scores[c]) / denom;
    out += q * (std::log(q) - std::log(std::max<ld>(p[c], 1e-12L)));
  }
  return out;
}

// Score of one tag path: start + emissions + transitions + end.
inline ld path_score(const pclc::ad::Tensor& e, const pclc::ad::Tensor& trans, const pclc::ad::Tensor& start,
                     const pclc::ad::Tensor& end, const std::vector<int>& path) {
  ld s = start[path[0]];
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += e(t, path[t]);
    if (t > 0) s += trans(path[t - 1], path[t]);
  }
  return s + end[path.back()];
}

// Enumerates all 3^T paths. Returns (log partition, best path, best score);
// the best path is the first maximum in lexicographic order.
struct CrfBruteForce {
  ld log_z;
  std::vector<int> best;
  ld best_score;
};

inline CrfBruteForce crf_brute_force(const pclc::ad::Tensor& e, const pclc::ad::Tensor& trans,
                                     const pclc::ad::Tensor& start, const pclc::ad::Tensor& end) {
  const std::size_t T = e.rows();
  std::size_t total = 1;
  for (std::size_t t = 0; t < T; ++t) total *= 3;
  CrfBruteForce out{0, {}, -std::numeric_limits<ld>::infinity()};
  ld z = 0;
  std::vector<int> path(T);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t t = T; t-- > 0;) {
      path[t] = static_cast<int>(c % 3);
      c /= 3;
    }
    const ld s = path_score(e, trans, start, end, path);
    z += std::exp(s);
    if (s > out.best_score) {
      out.best_score = s;
      out.best = path;
    }
  }
  out.log_z = std::log(z);
  return out;
}

// conlleval-style chunk scorer over per-token "B-x" / "I-x" / "O" strings.
struct ChunkCounts {
  std::size_t correct = 0, guessed = 0, gold = 0;
};

struct Chunk {
  std::size_t begin, end;
  std::string type;
  bool operator<(const Chunk& o) const { return std::tie(begin, end, type) < std::tie(o.begin, o.end, o.type); }
};

inline std::vector<Chunk> conll_chunks(const std::vector<std::string>& tags) {
  std::vector<Chunk> out;
  std::string prev_tag = "O", prev_type;
  std::size_t open = 0;
  bool in_chunk = false;
  auto split = [](const std::string& t) -> std::pair<std::string, std::string> {
    if (t == "O") return {"O", ""};
    return {t.substr(0, 1), t.substr(2)};
  };
  for (std::size_t i = 0; i <= tags.size(); ++i) {
    const auto [tag, type] = i < tags.size() ? split(tags[i]) : std::pair<std::string, std::string>{"O", ""};
    const bool chunk_end = in_chunk && (tag == "B" || tag == "O" || type != prev_type);
    const bool chunk_start = tag == "B" || (tag == "I" && (prev_tag == "O" || type != prev_type));
    if (chunk_end) {
      out.push_back({open, i - 1, prev_type});
      in_chunk = false;
    }
    if (chunk_start) {
      open = i;
      in_chunk = true;
    }
    prev_tag = tag;
    prev_type = type;
  }
  return out;
}

// Per-type (correct, guessed, gold) counts over a corpus of tag sequences.
inline std::map<std::string, ChunkCounts> conll_score(const std::vector<std::vector<std::string>>& gold,
                                                      const std::vector<std::vector<std::string>>& pred) {
  std::map<std::string, ChunkCounts> out;
  for (std::size_t u = 0; u < gold.size(); ++u) {
    const auto g = conll_chunks(gold[u]);
    const auto p = conll_chunks(pred[u]);
    std::set<Chunk> gs(g.begin(), g.end());
    for (const auto& c : g) ++out[c.type].gold;
    for (const auto& c : p) {
      ++out[c.type].guessed;
      if (gs.count(c)) ++out[c.type].correct;
    }
  }
  return out;
}

// Scalar Adam on f(w) = (w - 3)^2.
inline double adam_quadratic(double w, double lr, int steps) {
  double m = 0, v = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2.0 * (w - 3.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }
  return w;
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences for every scalar of every parameter, compared with the
// analytic gradient already in p.grad. Relative error is
// |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(pclc::ad::ParameterStore& store, const std::function<double()>& loss,
                                         double eps, double floor) {
  GradCheck out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + eps;
      const double up = loss();
      p.value[k] = saved - eps;
      const double down = loss();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad.empty() ? 0.0 : p.grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        std::ostringstream s;
        s << p.name << "[" << k << "] analytic " << analytic << " numeric " << numeric;
        out.worst = s.str();
      }
    }
  }
  return out;
}

}  // namespace oracle

namespace fixtures {

inline pclc::Utterance utterance(const std::string& domain, std::size_t idx,
                                 const std::vector<std::pair<std::string, std::string>>& tagged) {
  std::ostringstream s;
  for (const auto& [w, t] : tagged) s << w << '\t' << t << '\n';
  std::istringstream in(s.str());
  auto u = pclc::parse_conll(in, domain).at(0);
  u.id = domain + ":" + std::to_string(idx);
  return u;
}

// Three source slots in "alpha", two unseen slots in "beta". Twelve corpus
// words and six description words give a 20-entry vocabulary with pad/unk.
inline std::vector<pclc::Utterance> toy_corpus() {
  using P = std::vector<std::pair<std::string, std::string>>;
  return {
      utterance("alpha", 0, P{{"go", "O"}, {"to", "O"}, {"paris", "B-city"}, {"monday", "B-day"}}),
      utterance("alpha", 1, P{{"call", "O"}, {"ann", "B-person_name"}, {"lee", "I-person_name"}}),
      utterance("alpha", 2, P{{"to", "O"}, {"rome", "B-city"}, {"call", "O"}, {"ann", "B-person_name"}}),
      utterance("alpha", 3, P{{"friday", "B-day"}, {"go", "O"}}),
      utterance("beta", 0, P{{"play", "O"}, {"jazz", "B-genre"}, {"miles", "B-artist"}}),
      utterance("beta", 1, P{{"play", "O"}, {"miles", "B-artist"}}),
  };
}

struct ToyModel {
  std::vector<pclc::Utterance> corpus;
  pclc::SlotSchema schema;
  pclc::PrototypeLayout layout;
  pclc::Vocab vocab;
  std::unique_ptr<pclc::PclcModel> model;
};

inline pclc::ModelConfig toy_model_config(std::size_t d = 8) {
  pclc::ModelConfig c;
  c.encoder.word_dim = d;
  c.encoder.char_dim = 4;
  c.encoder.char_hidden = 3;
  c.encoder.hidden = 4;
  c.encoder.layers = 2;
  c.encoder.dropout = 0.0;
  c.proto_dim = d;
  c.entity_hidden = 4;
  return c;
}

inline ToyModel toy_model(std::uint64_t seed = 3, pclc::ModelConfig config = toy_model_config()) {
  ToyModel t;
  t.corpus = toy_corpus();
  t.schema = pclc::build_schema(t.corpus);
  t.layout = pclc::PrototypeLayout::build(t.schema, "beta");
  t.vocab = pclc::build_vocab(t.corpus, t.schema);
  pclc::Rng rng(seed);
  const auto emb = pclc::load_embeddings(std::nullopt, t.vocab, config.encoder.word_dim, rng);
  t.model = std::make_unique<pclc::PclcModel>(config, t.vocab, t.layout, emb.matrix, seed);
  return t;
}

inline std::string data_path(const std::string& rel) { return std::string(PCLC_SOURCE_DIR) + "/" + rel; }

}  // namespace fixtures
