#include "pclc/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "pclc/error.hpp"

namespace pclc {

namespace fs = std::filesystem;

char bio_letter(Bio tag) {
  switch (tag) {
    case Bio::kO: return 'O';
    case Bio::kB: return 'B';
    case Bio::kI: return 'I';
  }
  return '?';
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::vector<Utterance> parse_conll(std::istream& in, const std::string& default_domain,
                                   const std::string& source_name) {
  std::vector<Utterance> out;
  std::map<std::string, std::size_t> per_domain;
  std::string domain = default_domain;
  Utterance current;
  auto flush = [&] {
    if (current.tokens.empty()) return;
    current.domain = domain;
    current.id = domain + ":" + std::to_string(per_domain[domain]++);
    out.push_back(std::move(current));
    current = Utterance{};
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto where = source_name + ":" + std::to_string(line_no);
    if (trim(line).empty()) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      const auto t = trim(line);
      if (t.rfind("# domain:", 0) == 0) {
        flush();
        domain = trim(t.substr(9));
        if (domain.empty()) throw Error("parse_conll", where + ": empty domain name");
        continue;
      }
      throw Error("parse_conll", where + ": expected 'token<TAB>tag', got '" + line + "'");
    }
    const auto token = line.substr(0, tab);
    const auto tag = trim(line.substr(tab + 1));
    if (token.empty()) throw Error("parse_conll", where + ": empty token");
    Bio bio;
    std::string slot;
    if (tag == "O") {
      bio = Bio::kO;
    } else if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
      bio = tag[0] == 'B' ? Bio::kB : Bio::kI;
      slot = tag.substr(2);
    } else {
      throw Error("parse_conll", where + ": unknown tag '" + tag + "'");
    }
    if (bio == Bio::kI && (current.bio.empty() || current.bio.back() == Bio::kO || current.slot_types.back() != slot)) {
      bio = Bio::kB;
    }
    current.tokens.push_back(token);
    current.bio.push_back(bio);
    current.slot_types.push_back(slot);
  }
  flush();
  return out;
}

std::vector<Utterance> parse_conll(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("parse_conll", "cannot open " + path.string());
  return parse_conll(in, path.stem().string(), path.filename().string());
}

void write_conll(std::ostream& out, const std::vector<Utterance>& utterances) {
  std::string domain;
  for (const auto& u : utterances) {
    if (u.domain != domain) {
      out << "# domain: " << u.domain << "\n";
      domain = u.domain;
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
      out << u.tokens[i] << '\t';
      if (u.bio[i] == Bio::kO) out << 'O';
      else out << bio_letter(u.bio[i]) << '-' << u.slot_types[i];
      out << '\n';
    }
    out << '\n';
  }
}

std::vector<Utterance> load_corpus_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("load_corpus", "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".conll") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("load_corpus", "no .conll files in " + dir.string());
  std::vector<Utterance> corpus;
  for (const auto& f : files) {
    auto part = parse_conll(f);
    corpus.insert(corpus.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return corpus;
}

std::vector<std::string> describe_slot(const std::string& label) {
  std::vector<std::string> words;
  std::string cur;
  auto push = [&] {
    if (!cur.empty()) words.push_back(lower(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < label.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(label[i]);
    if (c == '_' || c == '-' || c == ' ' || c == '.') {
      push();
      continue;
    }
    if (std::isupper(c) && i > 0 && std::islower(static_cast<unsigned char>(label[i - 1]))) push();
    cur.push_back(static_cast<char>(c));
  }
  push();
  return words;
}

const std::vector<std::string>& SlotSchema::slots_of(const std::string& domain) const {
  auto it = slots.find(domain);
  if (it == slots.end()) throw Error("schema", "unknown domain '" + domain + "'");
  return it->second;
}

const std::vector<std::string>& SlotSchema::description(const std::string& slot) const {
  auto it = description_tokens.find(slot);
  if (it == description_tokens.end()) throw Error("schema", "no description for slot '" + slot + "'");
  return it->second;
}

bool SlotSchema::has_domain(const std::string& domain) const { return slots.count(domain) != 0; }

SlotSchema build_schema(const std::vector<Utterance>& corpus,
                        const std::map<std::string, std::vector<std::string>>& overrides) {
  std::map<std::string, std::set<std::string>> per_domain;
  for (const auto& u : corpus) {
    auto& set = per_domain[u.domain];
    for (std::size_t i = 0; i < u.size(); ++i)
      if (u.bio[i] != Bio::kO) set.insert(u.slot_types[i]);
  }
  SlotSchema schema;
  for (const auto& [domain, set] : per_domain) {
    schema.domains.push_back(domain);
    schema.slots[domain] = std::vector<std::string>(set.begin(), set.end());
    for (const auto& slot : set) {
      if (schema.description_tokens.count(slot)) continue;
      auto it = overrides.find(slot);
      auto words = it != overrides.end() ? it->second : describe_slot(slot);
      if (words.empty()) throw Error("schema", "slot '" + slot + "' has an empty description");
      schema.description_tokens[slot] = std::move(words);
    }
  }
  return schema;
}

std::map<std::string, std::vector<std::string>> load_descriptions(const fs::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("load_descriptions", path.string() + ":" + std::to_string(line_no) + ": expected 'slot<TAB>words'");
    }
    auto words = split_ws(line.substr(tab + 1));
    for (auto& w : words) w = lower(w);
    if (words.empty()) throw Error("load_descriptions", path.string() + ":" + std::to_string(line_no) + ": empty description");
    out[line.substr(0, tab)] = std::move(words);
  }
  return out;
}

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> words, std::vector<std::string> chars)
    : words_(std::move(words)), chars_(std::move(chars)) {
  if (words_.size() < 2 || words_[kPad] != kPadToken || words_[kUnk] != kUnkToken ||
      chars_.size() < 2 || chars_[kPad] != kPadToken || chars_[kUnk] != kUnkToken) {
    throw Error("vocab", "word and char lists must start with <pad>, <unk>");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!word_ids_.emplace(words_[i], i).second) throw Error("vocab", "duplicate word '" + words_[i] + "'");
  }
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    if (!char_ids_.emplace(chars_[i], i).second) throw Error("vocab", "duplicate char '" + chars_[i] + "'");
  }
}

std::size_t Vocab::word_index(const std::string& word) const {
  auto it = word_ids_.find(word);
  return it == word_ids_.end() || it->second == kPad ? kUnk : it->second;
}

std::size_t Vocab::char_index(const std::string& ch) const {
  auto it = char_ids_.find(ch);
  return it == char_ids_.end() || it->second == kPad ? kUnk : it->second;
}

std::vector<std::size_t> Vocab::word_indices(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(word_index(t));
  return ids;
}

std::vector<std::size_t> Vocab::char_indices(const std::string& token) const {
  std::vector<std::size_t> ids;
  for (const auto& c : utf8_chars(token)) ids.push_back(char_index(c));
  return ids;
}

Vocab build_vocab(const std::vector<Utterance>& corpus, const SlotSchema& schema) {
  std::set<std::string> words;
  std::set<std::string> chars;
  auto add_word = [&](const std::string& w) {
    words.insert(w);
    for (auto& c : utf8_chars(w)) chars.insert(std::move(c));
  };
  for (const auto& u : corpus)
    for (const auto& t : u.tokens) add_word(t);
  for (const auto& [slot, desc] : schema.description_tokens)
    for (const auto& w : desc) add_word(w);
  words.erase(Vocab::kPadToken);
  words.erase(Vocab::kUnkToken);
  std::vector<std::string> w{Vocab::kPadToken, Vocab::kUnkToken};
  w.insert(w.end(), words.begin(), words.end());
  std::vector<std::string> c{Vocab::kPadToken, Vocab::kUnkToken};
  c.insert(c.end(), chars.begin(), chars.end());
  return Vocab(std::move(w), std::move(c));
}

EmbeddingTable load_embeddings(const std::optional<fs::path>& path, const Vocab& vocab, std::size_t dim, Rng& rng,
                               bool require_pretrained) {
  std::unordered_map<std::size_t, std::vector<double>> rows;
  if (path && !path->empty()) {
    std::ifstream in(*path);
    if (!in) {
      if (require_pretrained) throw Error("load_embeddings", "cannot open " + path->string());
    } else {
      std::size_t file_dim = 0;
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto sp = line.find(' ');
        if (trim(line).empty()) continue;
        if (sp == std::string::npos) {
          throw Error("load_embeddings", path->string() + ":" + std::to_string(line_no) + ": no vector values");
        }
        std::vector<double> values;
        const char* p = line.data() + sp;
        const char* end = line.data() + line.size();
        while (p < end) {
          while (p < end && *p == ' ') ++p;
          if (p >= end) break;
          double v = 0.0;
          auto [next, ec] = std::from_chars(p, end, v);
          if (ec != std::errc()) {
            throw Error("load_embeddings", path->string() + ":" + std::to_string(line_no) + ": bad number");
          }
          values.push_back(v);
          p = next;
        }
        if (file_dim == 0) file_dim = values.size();
        if (values.size() != file_dim) {
          throw Error("load_embeddings", path->string() + ":" + std::to_string(line_no) + ": dimension " +
                                             std::to_string(values.size()) + " differs from " + std::to_string(file_dim));
        }
        const auto word = line.substr(0, sp);
        auto idx = vocab.word_index(word);
        if (idx == Vocab::kUnk && word != Vocab::kUnkToken) continue;
        rows[idx] = std::move(values);
      }
      if (file_dim != 0 && file_dim != dim) {
        throw Error("load_embeddings", "file dimension " + std::to_string(file_dim) + " does not match word_dim " +
                                           std::to_string(dim));
      }
    }
  } else if (require_pretrained) {
    throw Error("load_embeddings", "pretrained embeddings required but no file given");
  }

  EmbeddingTable table;
  table.dim = dim;
  table.matrix = ad::Tensor(vocab.word_count(), dim);
  for (std::size_t i = 0; i < vocab.word_count(); ++i) {
    if (i == Vocab::kPad) continue;
    if (auto it = rows.find(i); it != rows.end()) {
      for (std::size_t d = 0; d < dim; ++d) table.matrix(i, d) = it->second[d];
      ++table.pretrained_rows;
    } else {
      for (std::size_t d = 0; d < dim; ++d) table.matrix(i, d) = rng.uniform(-0.1, 0.1);
    }
  }
  return table;
}

SeenUnseen classify_seen_unseen(const SlotSchema& schema, const std::string& target_domain) {
  const auto& target = schema.slots_of(target_domain);
  std::set<std::string> source;
  for (const auto& d : schema.domains) {
    if (d == target_domain) continue;
    for (const auto& s : schema.slots_of(d)) source.insert(s);
  }
  SeenUnseen out;
  for (const auto& s : target) (source.count(s) ? out.seen : out.unseen).push_back(s);
  return out;
}

ExperimentSplit split_leave_one_out(const std::vector<Utterance>& corpus, const SlotSchema& schema,
                                    const std::string& target_domain, std::uint64_t seed,
                                    std::size_t validation_size) {
  if (!schema.has_domain(target_domain)) throw Error("split", "unknown target domain '" + target_domain + "'");
  ExperimentSplit split;
  split.target_domain = target_domain;
  split.seed = seed;
  std::vector<std::size_t> target;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].domain == target_domain) target.push_back(i);
    else split.train.push_back(i);
  }
  const std::size_t n = target.size();
  const std::size_t n_val = n > validation_size ? validation_size : std::min(validation_size, n / 2);
  Rng rng(seed);
  rng.shuffle(target);
  split.validation.assign(target.begin(), target.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.test.assign(target.begin() + static_cast<std::ptrdiff_t>(n_val), target.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  auto groups = classify_seen_unseen(schema, target_domain);
  split.seen_slots = std::move(groups.seen);
  split.unseen_slots = std::move(groups.unseen);
  return split;
}

ExperimentSplit fewshot_select(const ExperimentSplit& split, long k, std::uint64_t seed) {
  if (k < 0) throw Error("fewshot_select", "sample count must be non-negative, got " + std::to_string(k));
  const auto count = static_cast<std::size_t>(k);
  if (count > split.test.size()) {
    throw Error("fewshot_select", "requested " + std::to_string(k) + " samples but the test pool has " +
                                      std::to_string(split.test.size()));
  }
  ExperimentSplit out = split;
  if (count == 0) return out;
  out.fewshot_k = count;
  auto pool = split.test;
  Rng rng(seed ^ 0x5eedf00dULL);
  rng.shuffle(pool);
  std::vector<std::size_t> picked(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<std::size_t> rest(pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end());
  std::sort(picked.begin(), picked.end());
  std::sort(rest.begin(), rest.end());
  out.train.insert(out.train.end(), picked.begin(), picked.end());
  out.test = std::move(rest);
  return out;
}

void write_split_manifest(std::ostream& out, const ExperimentSplit& split, const std::vector<Utterance>& corpus) {
  out << "# split manifest v1\n";
  out << "target\t" << split.target_domain << "\n";
  out << "seed\t" << split.seed << "\n";
  out << "fewshot_k\t" << split.fewshot_k << "\n";
  for (const auto& s : split.seen_slots) out << "seen\t" << s << "\n";
  for (const auto& s : split.unseen_slots) out << "unseen\t" << s << "\n";
  for (auto i : split.train) out << "train\t" << corpus.at(i).id << "\n";
  for (auto i : split.validation) out << "validation\t" << corpus.at(i).id << "\n";
  for (auto i : split.test) out << "test\t" << corpus.at(i).id << "\n";
}

ExperimentSplit read_split_manifest(std::istream& in, const std::vector<Utterance>& corpus, const SlotSchema& schema) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_id.emplace(corpus[i].id, i);
  ExperimentSplit split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("split_manifest", "line " + std::to_string(line_no) + ": missing tab");
    const auto key = line.substr(0, tab);
    const auto value = line.substr(tab + 1);
    auto lookup = [&]() {
      auto it = by_id.find(value);
      if (it == by_id.end()) {
        throw Error("split_manifest", "line " + std::to_string(line_no) + ": unknown utterance id '" + value + "'");
      }
      return it->second;
    };
    if (key == "target") split.target_domain = value;
    else if (key == "seed") split.seed = std::stoull(value);
    else if (key == "fewshot_k") split.fewshot_k = std::stoull(value);
    else if (key == "seen") split.seen_slots.push_back(value);
    else if (key == "unseen") split.unseen_slots.push_back(value);
    else if (key == "train") split.train.push_back(lookup());
    else if (key == "validation") split.validation.push_back(lookup());
    else if (key == "test") split.test.push_back(lookup());
    else throw Error("split_manifest", "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  if (!schema.has_domain(split.target_domain)) {
    throw Error("split_manifest", "target domain '" + split.target_domain + "' not in corpus");
  }
  return split;
}

}  // namespace pclc
