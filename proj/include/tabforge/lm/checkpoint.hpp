#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/lm/head.hpp"
#include "tabforge/lm/model.hpp"
#include "tabforge/lm/trainer.hpp"

namespace tabforge::lm {

// File layout: 8-byte magic "TABFORGE", u32 version, u64 header length, JSON
// header, then the little-endian float32 blob. The header holds the model
// config, an optional head description, free-form metadata and the tensor
// index [{name, rows, cols, offset}] with offsets counted in floats.
struct Checkpoint {
  ModelConfig config;
  std::optional<nlohmann::json> head;  // Head::to_json()
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<float>> tensors;
  std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;

  const std::vector<float>& tensor(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  void put(const std::string& name, std::size_t rows, std::size_t cols, std::vector<float> data);
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Packing helpers. Optimizer moments are stored as "optim.<g>.m" / ".v"
// (doubles split into two 32-bit words) with the step count in
// meta["optim_steps"].
template <typename Scalar>
Checkpoint make_checkpoint(const Transformer<Scalar>& model, const Head<Scalar>* head = nullptr,
                           const TrainState* state = nullptr);
template <typename Scalar>
Transformer<Scalar> model_from_checkpoint(const Checkpoint& ckpt);
template <typename Scalar>
Head<Scalar> head_from_checkpoint(const Checkpoint& ckpt);
TrainState train_state_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg);

}  // namespace tabforge::lm
