#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pclc/autodiff.hpp"
#include "pclc/data.hpp"
#include "pclc/model.hpp"
#include "pclc/optim.hpp"
#include "pclc/slot_classifier.hpp"

namespace pclc {

// On disk: a text manifest at `path` (tab-separated key/value lines listing
// config, vocab, prototype rows and tensor names/shapes/offsets) and a raw
// little-endian float64 payload at `path` + ".bin".
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::vector<std::pair<std::string, std::string>> config;
  ModelConfig model;
  Vocab vocab;
  PrototypeLayout layout;
  std::vector<std::string> names;
  std::vector<ad::Tensor> tensors;
  std::uint64_t adam_steps = 0;
  std::vector<ad::Tensor> adam_first;
  std::vector<ad::Tensor> adam_second;
  std::size_t epoch = 0;
  double best_val_f1 = 0.0;
};

Checkpoint make_checkpoint(const PclcModel& model, const ad::Adam& optimizer, std::size_t epoch, double best_val_f1,
                           std::vector<std::pair<std::string, std::string>> config);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path payload_path(const std::filesystem::path& manifest);

// Fails unless the checkpoint's prototype rows match `expected` exactly.
void check_compatible(const Checkpoint& checkpoint, const PrototypeLayout& expected);

std::unique_ptr<PclcModel> restore_model(const Checkpoint& checkpoint);
void restore_optimizer(const Checkpoint& checkpoint, ad::Adam& optimizer);

}  // namespace pclc
