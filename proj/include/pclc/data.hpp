#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/rng.hpp"

namespace pclc {

enum class Bio : std::uint8_t { kO = 0, kB = 1, kI = 2 };

inline constexpr std::size_t kNumBio = 3;

char bio_letter(Bio tag);

struct Utterance {
  std::string id;  // "<domain>:<position in its file>"
  std::vector<std::string> tokens;
  std::vector<Bio> bio;
  std::vector<std::string> slot_types;  // empty string where bio == O
  std::string domain;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Reads "token<TAB>tag" lines; blank lines end utterances. A "# domain: NAME"
// line switches the domain of the following utterances. An I-x that does not
// continue an x span is stored as B-x.
std::vector<Utterance> parse_conll(std::istream& in, const std::string& default_domain,
                                   const std::string& source_name = "<stream>");
std::vector<Utterance> parse_conll(const std::filesystem::path& path);
void write_conll(std::ostream& out, const std::vector<Utterance>& utterances);

// Every "<domain>.conll" file in `dir`, in file-name order.
std::vector<Utterance> load_corpus_dir(const std::filesystem::path& dir);

// "playlist_owner" -> {"playlist", "owner"}; camelCase boundaries also split.
std::vector<std::string> describe_slot(const std::string& label);

struct SlotSchema {
  std::vector<std::string> domains;
  std::map<std::string, std::vector<std::string>> slots;
  std::map<std::string, std::vector<std::string>> description_tokens;

  const std::vector<std::string>& slots_of(const std::string& domain) const;
  const std::vector<std::string>& description(const std::string& slot) const;
  bool has_domain(const std::string& domain) const;
};

// Domains and slot lists in sorted order. `overrides` replaces the derived
// description of the slots it names.
SlotSchema build_schema(const std::vector<Utterance>& corpus,
                        const std::map<std::string, std::vector<std::string>>& overrides = {});

// "slot<TAB>word word ..." lines; missing file yields no overrides.
std::map<std::string, std::vector<std::string>> load_descriptions(const std::filesystem::path& path);

// Splits UTF-8 text into code points.
std::vector<std::string> utf8_chars(const std::string& text);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocab() = default;
  Vocab(std::vector<std::string> words, std::vector<std::string> chars);

  std::size_t word_index(const std::string& word) const;
  std::size_t char_index(const std::string& ch) const;
  std::vector<std::size_t> word_indices(const std::vector<std::string>& tokens) const;
  std::vector<std::size_t> char_indices(const std::string& token) const;

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& chars() const { return chars_; }
  std::size_t word_count() const { return words_.size(); }
  std::size_t char_count() const { return chars_.size(); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_ && a.chars_ == b.chars_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> chars_;
  std::unordered_map<std::string, std::size_t> word_ids_;
  std::unordered_map<std::string, std::size_t> char_ids_;
};

// Sorted insertion: the result depends only on the set of tokens seen.
Vocab build_vocab(const std::vector<Utterance>& corpus, const SlotSchema& schema);

struct EmbeddingTable {
  ad::Tensor matrix;  // vocab.word_count() x dim
  std::size_t dim = 0;
  bool trainable = true;
  std::size_t pretrained_rows = 0;
};

// GloVe-style "word f1 ... fd". Rows missing from the file are uniform in
// [-0.1, 0.1]; the padding row is zero. With no file, `dim` sets the width.
EmbeddingTable load_embeddings(const std::optional<std::filesystem::path>& path, const Vocab& vocab,
                               std::size_t dim, Rng& rng, bool require_pretrained = false);

struct SeenUnseen {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
};

SeenUnseen classify_seen_unseen(const SlotSchema& schema, const std::string& target_domain);

// Partitions hold indices into the corpus the split was built from.
struct ExperimentSplit {
  std::string target_domain;
  std::uint64_t seed = 0;
  std::size_t fewshot_k = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::vector<std::string> seen_slots;
  std::vector<std::string> unseen_slots;

  friend bool operator==(const ExperimentSplit&, const ExperimentSplit&) = default;
};

inline constexpr std::size_t kDefaultValidationSize = 500;

ExperimentSplit split_leave_one_out(const std::vector<Utterance>& corpus, const SlotSchema& schema,
                                    const std::string& target_domain, std::uint64_t seed,
                                    std::size_t validation_size = kDefaultValidationSize);

ExperimentSplit fewshot_select(const ExperimentSplit& split, long k, std::uint64_t seed);

void write_split_manifest(std::ostream& out, const ExperimentSplit& split, const std::vector<Utterance>& corpus);
ExperimentSplit read_split_manifest(std::istream& in, const std::vector<Utterance>& corpus, const SlotSchema& schema);

}  // namespace pclc
