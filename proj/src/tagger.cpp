#include "pclc/tagger.hpp"

#include <array>
#include <limits>

#include "pclc/error.hpp"

namespace pclc {

void EncoderConfig::validate() const {
  if (word_dim == 0 || char_dim == 0 || char_hidden == 0 || hidden == 0 || layers == 0) {
    throw Error("encoder", "all dimensions and the layer count must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("encoder", "dropout must be in [0, 1)");
}

namespace {

std::vector<BiLstm> make_layers(ad::ParameterStore& store, const EncoderConfig& c, Rng& init) {
  std::vector<BiLstm> layers;
  std::size_t in = c.word_dim + 2 * c.char_hidden;
  for (std::size_t l = 0; l < c.layers; ++l) {
    layers.emplace_back(store, "encoder.lstm" + std::to_string(l), in, c.hidden, init);
    in = 2 * c.hidden;
  }
  return layers;
}

ad::Tensor random_table(std::size_t rows, std::size_t cols, Rng& init) {
  ad::Tensor t(rows, cols);
  for (std::size_t r = 1; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = init.uniform(-0.1, 0.1);
  return t;
}

}  // namespace

WordCharEncoder::WordCharEncoder(ad::ParameterStore& store, const EncoderConfig& config, const Vocab& vocab,
                                 const ad::Tensor& word_embeddings, Rng& init)
    : config_((config.validate(), config)),
      word_embeddings_(&store.add("encoder.word_embeddings", word_embeddings)),
      char_embeddings_(&store.add("encoder.char_embeddings", random_table(vocab.char_count(), config.char_dim, init))),
      char_lstm_(store, "encoder.char_lstm", config.char_dim, config.char_hidden, init),
      layers_(make_layers(store, config, init)) {
  if (word_embeddings.rows() != vocab.word_count() || word_embeddings.cols() != config.word_dim) {
    throw Error("encoder", "word embedding table " + word_embeddings.shape_string() + " does not match vocab " +
                               std::to_string(vocab.word_count()) + " x word_dim " + std::to_string(config.word_dim));
  }
}

ad::Var WordCharEncoder::encode(ad::Tape& tape, const std::vector<std::string>& tokens, const Vocab& vocab,
                                Rng& dropout_rng) const {
  if (tokens.empty()) throw Error("encode_utterance", "empty utterance");
  const auto word_ids = vocab.word_indices(tokens);
  const auto words = ad::embedding_lookup(tape.param(*word_embeddings_), word_ids);
  const auto char_table = tape.param(*char_embeddings_);

  std::vector<ad::Var> char_features;
  char_features.reserve(tokens.size());
  for (const auto& token : tokens) {
    auto ids = vocab.char_indices(token);
    if (ids.empty()) ids.push_back(Vocab::kUnk);
    char_features.push_back(char_lstm_.final_states(tape, ad::embedding_lookup(char_table, ids)));
  }
  const auto chars = char_features.size() == 1 ? char_features[0] : ad::concat(char_features, 0);
  const ad::Var parts[] = {words, chars};
  auto x = ad::dropout(ad::concat(parts, 1), config_.dropout, dropout_rng);
  for (const auto& layer : layers_) x = ad::dropout(layer.run(tape, x), config_.dropout, dropout_rng);
  return x;
}

CrfLayer CrfLayer::create(ad::ParameterStore& store, const std::string& prefix) {
  return CrfLayer{&store.add(prefix + ".transitions", ad::Tensor(kNumBio, kNumBio)),
                  &store.add(prefix + ".start", ad::Tensor(1, kNumBio)),
                  &store.add(prefix + ".end", ad::Tensor(1, kNumBio))};
}

CrfVars CrfVars::bind(ad::Tape& tape, const CrfLayer& crf) {
  return CrfVars{tape.param(*crf.transitions), tape.param(*crf.start), tape.param(*crf.end)};
}

namespace {

void check_crf_shapes(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                      const ad::Tensor& end, const char* op) {
  if (emissions.rows() == 0 || emissions.cols() != kNumBio) {
    throw Error(op, "emissions must be T x 3 with T >= 1, got " + emissions.shape_string());
  }
  if (transitions.rows() != kNumBio || transitions.cols() != kNumBio || start.size() != kNumBio ||
      end.size() != kNumBio) {
    throw Error(op, "transition/start/end shapes " + transitions.shape_string() + ", " + start.shape_string() + ", " +
                        end.shape_string() + " are not 3x3, 1x3, 1x3");
  }
}

}  // namespace

ad::Var crf_nll(const ad::Var& emissions, std::span<const Bio> gold, const CrfVars& crf) {
  const auto& ev = emissions.value();
  check_crf_shapes(ev, crf.transitions.value(), crf.start.value(), crf.end.value(), "crf_nll");
  const auto steps = ev.rows();
  if (gold.size() != steps) {
    throw Error("crf_nll", "gold length " + std::to_string(gold.size()) + " does not match " + std::to_string(steps) +
                               " emission rows");
  }

  // alpha is 1x3; alpha' = logsumexp_i(alpha_i + trans[i][j]) + e_t[j]
  auto alpha = ad::add(crf.start, ad::slice_rows(emissions, 0, 1));
  for (std::size_t t = 1; t < steps; ++t) {
    const auto scores = ad::add(ad::transpose(alpha), crf.transitions);
    alpha = ad::add(ad::log_sum_exp(scores, 0), ad::slice_rows(emissions, t, t + 1));
  }
  const auto log_z = ad::log_sum_exp(ad::add(alpha, crf.end), 1);

  std::vector<std::pair<std::size_t, std::size_t>> emit;
  std::vector<std::pair<std::size_t, std::size_t>> trans;
  for (std::size_t t = 0; t < steps; ++t) {
    emit.emplace_back(t, static_cast<std::size_t>(gold[t]));
    if (t > 0) trans.emplace_back(static_cast<std::size_t>(gold[t - 1]), static_cast<std::size_t>(gold[t]));
  }
  const std::pair<std::size_t, std::size_t> first{0, static_cast<std::size_t>(gold.front())};
  const std::pair<std::size_t, std::size_t> last{0, static_cast<std::size_t>(gold.back())};
  auto gold_score = ad::add(ad::sum(ad::gather(emissions, emit)),
                            ad::add(ad::gather(crf.start, std::span(&first, 1)), ad::gather(crf.end, std::span(&last, 1))));
  if (!trans.empty()) gold_score = ad::add(gold_score, ad::sum(ad::gather(crf.transitions, trans)));
  return ad::sub(log_z, gold_score);
}

double crf_log_partition(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                         const ad::Tensor& end) {
  check_crf_shapes(emissions, transitions, start, end, "crf_log_partition");
  std::array<double, kNumBio> alpha{};
  for (std::size_t j = 0; j < kNumBio; ++j) alpha[j] = start[j] + emissions(0, j);
  for (std::size_t t = 1; t < emissions.rows(); ++t) {
    std::array<double, kNumBio> next{};
    for (std::size_t j = 0; j < kNumBio; ++j) {
      std::array<double, kNumBio> in{};
      for (std::size_t i = 0; i < kNumBio; ++i) in[i] = alpha[i] + transitions(i, j);
      next[j] = ad::log_sum_exp(in) + emissions(t, j);
    }
    alpha = next;
  }
  for (std::size_t j = 0; j < kNumBio; ++j) alpha[j] += end[j];
  return ad::log_sum_exp(alpha);
}

double crf_path_score(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                      const ad::Tensor& end, std::span<const Bio> path) {
  check_crf_shapes(emissions, transitions, start, end, "crf_path_score");
  if (path.size() != emissions.rows()) throw Error("crf_path_score", "path length does not match emissions");
  double s = start[static_cast<std::size_t>(path.front())] + end[static_cast<std::size_t>(path.back())];
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += emissions(t, static_cast<std::size_t>(path[t]));
    if (t > 0) s += transitions(static_cast<std::size_t>(path[t - 1]), static_cast<std::size_t>(path[t]));
  }
  return s;
}

std::vector<Bio> viterbi_decode(const ad::Tensor& emissions, const ad::Tensor& transitions, const ad::Tensor& start,
                                const ad::Tensor& end) {
  check_crf_shapes(emissions, transitions, start, end, "viterbi_decode");
  const auto steps = emissions.rows();
  std::vector<std::array<std::size_t, kNumBio>> back(steps);
  std::array<double, kNumBio> delta{};
  for (std::size_t j = 0; j < kNumBio; ++j) delta[j] = start[j] + emissions(0, j);
  for (std::size_t t = 1; t < steps; ++t) {
    std::array<double, kNumBio> next{};
    for (std::size_t j = 0; j < kNumBio; ++j) {
      std::size_t best = 0;
      double best_score = delta[0] + transitions(0, j);
      for (std::size_t i = 1; i < kNumBio; ++i) {
        const double s = delta[i] + transitions(i, j);
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      back[t][j] = best;
      next[j] = best_score + emissions(t, j);
    }
    delta = next;
  }
  std::size_t state = 0;
  double best_score = delta[0] + end[0];
  for (std::size_t j = 1; j < kNumBio; ++j) {
    if (delta[j] + end[j] > best_score) {
      best_score = delta[j] + end[j];
      state = j;
    }
  }
  std::vector<Bio> path(steps);
  for (std::size_t t = steps; t-- > 0;) {
    path[t] = static_cast<Bio>(state);
    if (t > 0) state = back[t][state];
  }
  return path;
}

std::vector<TaggedSpan> extract_spans(std::span<const Bio> tags) {
  std::vector<TaggedSpan> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == Bio::kO) continue;
    // B, or an I that could not continue anything, opens a span.
    const bool continues = tags[i] == Bio::kI && !spans.empty() && spans.back().end + 1 == i;
    if (continues) spans.back().end = i;
    else spans.push_back({i, i});
  }
  return spans;
}

}  // namespace pclc
