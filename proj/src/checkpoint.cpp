#include "pclc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include "pclc/error.hpp"
#include "pclc/evaluator.hpp"

namespace pclc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "pclc-checkpoint";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab - pos));
    if (tab == std::string::npos) return out;
    pos = tab + 1;
  }
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::uint64_t to_little_endian(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::little) return bits;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((bits >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return out;
}

void append(std::string& payload, const ad::Tensor& t) {
  for (double v : t.data()) {
    const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    payload.append(bytes, 8);
  }
}

ad::Tensor read_tensor(const std::string& payload, std::size_t rows, std::size_t cols, std::size_t offset) {
  ad::Tensor t(rows, cols);
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, payload.data() + 8 * (offset + k), 8);
    t[k] = std::bit_cast<double>(to_little_endian(bits));
  }
  return t;
}

std::size_t to_size(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error("checkpoint", "bad " + what + " '" + s + "'");
  }
}

void write_model_config(std::ostream& out, const ModelConfig& m) {
  out << "model\tword_dim\t" << m.encoder.word_dim << "\n";
  out << "model\tchar_dim\t" << m.encoder.char_dim << "\n";
  out << "model\tchar_hidden\t" << m.encoder.char_hidden << "\n";
  out << "model\thidden\t" << m.encoder.hidden << "\n";
  out << "model\tlayers\t" << m.encoder.layers << "\n";
  out << "model\tdropout\t" << format_double(m.encoder.dropout) << "\n";
  out << "model\tproto_dim\t" << m.proto_dim << "\n";
  out << "model\tentity_hidden\t" << m.entity_hidden << "\n";
}

void read_model_config(ModelConfig& m, const std::string& key, const std::string& value) {
  if (key == "word_dim") m.encoder.word_dim = to_size(value, key);
  else if (key == "char_dim") m.encoder.char_dim = to_size(value, key);
  else if (key == "char_hidden") m.encoder.char_hidden = to_size(value, key);
  else if (key == "hidden") m.encoder.hidden = to_size(value, key);
  else if (key == "layers") m.encoder.layers = to_size(value, key);
  else if (key == "dropout") m.encoder.dropout = parse_double(value);
  else if (key == "proto_dim") m.proto_dim = to_size(value, key);
  else if (key == "entity_hidden") m.entity_hidden = to_size(value, key);
  else throw Error("checkpoint", "unknown model key '" + key + "'");
}

}  // namespace

fs::path payload_path(const fs::path& manifest) { return fs::path(manifest.string() + ".bin"); }

Checkpoint make_checkpoint(const PclcModel& model, const ad::Adam& optimizer, std::size_t epoch, double best_val_f1,
                           std::vector<std::pair<std::string, std::string>> config) {
  Checkpoint c;
  c.config = std::move(config);
  c.model = model.config();
  c.vocab = model.vocab();
  c.layout = model.layout();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    c.names.push_back(model.params()[i].name);
    c.tensors.push_back(model.params()[i].value);
  }
  c.adam_steps = optimizer.steps();
  c.adam_first = optimizer.first_moments();
  c.adam_second = optimizer.second_moments();
  c.epoch = epoch;
  c.best_val_f1 = best_val_f1;
  return c;
}

void save_checkpoint(const Checkpoint& c, const fs::path& path) {
  if (c.names.size() != c.tensors.size()) throw Error("checkpoint", "name/tensor count mismatch");
  std::ostringstream manifest;
  std::string payload;
  manifest << kMagic << '\t' << Checkpoint::kFormatVersion << "\n";
  manifest << "epoch\t" << c.epoch << "\n";
  manifest << "best_val_f1\t" << format_double(c.best_val_f1) << "\n";
  manifest << "adam_steps\t" << c.adam_steps << "\n";
  for (const auto& [k, v] : c.config) manifest << "config\t" << k << '\t' << v << "\n";
  write_model_config(manifest, c.model);
  manifest << "target_domain\t" << c.layout.target_domain << "\n";
  for (std::size_t r = 0; r < c.layout.rows(); ++r) {
    manifest << (r < c.layout.boundary() ? "source_slot" : "target_slot") << '\t' << c.layout.label(r) << '\t'
             << join(c.layout.descriptions[r]) << "\n";
  }
  for (const auto& w : c.vocab.words()) manifest << "word\t" << w << "\n";
  for (const auto& ch : c.vocab.chars()) manifest << "char\t" << ch << "\n";
  auto emit = [&](const std::string& kind, const std::string& name, const ad::Tensor& t) {
    manifest << kind << '\t' << name << '\t' << t.rows() << '\t' << t.cols() << '\t' << payload.size() / 8 << "\n";
    append(payload, t);
  };
  for (std::size_t i = 0; i < c.names.size(); ++i) emit("tensor", c.names[i], c.tensors[i]);
  for (std::size_t i = 0; i < c.adam_first.size(); ++i) emit("adam_first", std::to_string(i), c.adam_first[i]);
  for (std::size_t i = 0; i < c.adam_second.size(); ++i) emit("adam_second", std::to_string(i), c.adam_second[i]);
  manifest << "payload_bytes\t" << payload.size() << "\n";

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream m(path, std::ios::binary);
  std::ofstream p(payload_path(path), std::ios::binary);
  if (!m || !p) throw Error("checkpoint", "cannot write " + path.string());
  m << manifest.str();
  p.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!m || !p) throw Error("checkpoint", "write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream m(path, std::ios::binary);
  if (!m) throw Error("checkpoint", "checkpoint not found: " + path.string());
  std::ifstream p(payload_path(path), std::ios::binary);
  if (!p) throw Error("checkpoint", "payload not found: " + payload_path(path).string());
  const std::string payload((std::istreambuf_iterator<char>(p)), std::istreambuf_iterator<char>());

  Checkpoint c;
  struct Entry {
    std::string kind, name;
    std::size_t rows, cols, offset;
  };
  std::vector<Entry> entries;
  std::vector<std::string> words, chars;
  std::optional<std::size_t> declared_bytes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(m, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    const auto& key = f[0];
    auto need = [&](std::size_t n) {
      if (f.size() < n) throw Error("checkpoint", "manifest line " + std::to_string(line_no) + " is truncated");
    };
    if (line_no == 1) {
      if (key != kMagic) throw Error("checkpoint", path.string() + " is not a checkpoint manifest");
      need(2);
      if (f[1] != std::to_string(Checkpoint::kFormatVersion)) {
        throw Error("checkpoint", "format version " + f[1] + " is not supported (expected " +
                                      std::to_string(Checkpoint::kFormatVersion) + ")");
      }
      continue;
    }
    if (key == "epoch") { need(2); c.epoch = to_size(f[1], key); }
    else if (key == "best_val_f1") { need(2); c.best_val_f1 = parse_double(f[1]); }
    else if (key == "adam_steps") { need(2); c.adam_steps = to_size(f[1], key); }
    else if (key == "config") { need(3); c.config.emplace_back(f[1], f[2]); }
    else if (key == "model") { need(3); read_model_config(c.model, f[1], f[2]); }
    else if (key == "target_domain") { need(2); c.layout.target_domain = f[1]; }
    else if (key == "source_slot" || key == "target_slot") {
      need(3);
      (key == "source_slot" ? c.layout.source_slots : c.layout.target_slots).push_back(f[1]);
      if (key == "source_slot" && !c.layout.target_slots.empty()) {
        throw Error("checkpoint", "source slot listed after target slots");
      }
      c.layout.descriptions.push_back(split_spaces(f[2]));
    }
    else if (key == "word") { need(2); words.push_back(f[1]); }
    else if (key == "char") { need(2); chars.push_back(f[1]); }
    else if (key == "tensor" || key == "adam_first" || key == "adam_second") {
      need(5);
      entries.push_back({key, f[1], to_size(f[2], "rows"), to_size(f[3], "cols"), to_size(f[4], "offset")});
    }
    else if (key == "payload_bytes") { need(2); declared_bytes = to_size(f[1], key); }
    else throw Error("checkpoint", "unknown manifest key '" + key + "' on line " + std::to_string(line_no));
  }
  if (line_no == 0) throw Error("checkpoint", path.string() + " is empty");

  std::size_t expected = 0;
  for (const auto& e : entries) expected = std::max(expected, 8 * (e.offset + e.rows * e.cols));
  if (declared_bytes && *declared_bytes != expected) {
    throw Error("checkpoint", "manifest declares " + std::to_string(*declared_bytes) + " payload bytes but lists " +
                                  std::to_string(expected));
  }
  if (payload.size() != expected) {
    throw Error("checkpoint", "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                  std::to_string(expected));
  }
  for (const auto& e : entries) {
    auto t = read_tensor(payload, e.rows, e.cols, e.offset);
    if (e.kind == "tensor") {
      c.names.push_back(e.name);
      c.tensors.push_back(std::move(t));
    } else if (e.kind == "adam_first") {
      c.adam_first.push_back(std::move(t));
    } else {
      c.adam_second.push_back(std::move(t));
    }
  }
  c.vocab = Vocab(std::move(words), std::move(chars));
  return c;
}

void check_compatible(const Checkpoint& c, const PrototypeLayout& expected) {
  if (c.layout.target_domain != expected.target_domain) {
    throw Error("checkpoint", "checkpoint was trained for target '" + c.layout.target_domain + "', not '" +
                                  expected.target_domain + "'");
  }
  if (c.layout.source_slots != expected.source_slots || c.layout.target_slots != expected.target_slots) {
    throw Error("checkpoint", "prototype row order differs from the current experiment");
  }
  if (c.layout.descriptions != expected.descriptions) {
    throw Error("checkpoint", "slot descriptions differ from the current experiment");
  }
}

std::unique_ptr<PclcModel> restore_model(const Checkpoint& c) {
  ad::Tensor placeholder(c.vocab.word_count(), c.model.encoder.word_dim);
  auto model = std::make_unique<PclcModel>(c.model, c.vocab, c.layout, placeholder, 0);
  auto& store = model->params();
  if (store.size() != c.names.size()) {
    throw Error("checkpoint", "checkpoint has " + std::to_string(c.names.size()) + " tensors, model expects " +
                                  std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < c.names.size(); ++i) {
    auto& p = store.get(c.names[i]);
    if (!p.value.same_shape(c.tensors[i])) {
      throw Error("checkpoint", "tensor '" + c.names[i] + "' has shape " + c.tensors[i].shape_string() +
                                    ", model expects " + p.value.shape_string());
    }
    p.value = c.tensors[i];
  }
  return model;
}

void restore_optimizer(const Checkpoint& c, ad::Adam& optimizer) {
  optimizer.restore(c.adam_steps, c.adam_first, c.adam_second);
}

}  // namespace pclc
