#include "tabforge/lm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "tabforge/error.hpp"

namespace tabforge::lm {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'B', 'F', 'O', 'R', 'G', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ParseError("truncated checkpoint", 0);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

// Optimizer moments are doubles; each is stored as two 32-bit words so a
// resumed run continues bit-for-bit.
std::vector<float> pack_doubles(const std::vector<double>& values) {
  std::vector<float> out;
  out.reserve(values.size() * 2);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    out.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits & 0xffffffffULL)));
    out.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits >> 32)));
  }
  return out;
}

std::vector<double> unpack_doubles(const std::vector<float>& words) {
  if (words.size() % 2 != 0) throw StructuralError("packed double tensor has odd length");
  std::vector<double> out(words.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t lo = std::bit_cast<std::uint32_t>(words[2 * i]);
    const std::uint64_t hi = std::bit_cast<std::uint32_t>(words[2 * i + 1]);
    out[i] = std::bit_cast<double>(lo | (hi << 32));
  }
  return out;
}

}  // namespace

const std::vector<float>& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw StructuralError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put(const std::string& name, std::size_t rows, std::size_t cols, std::vector<float> data) {
  if (data.size() != rows * cols) throw StructuralError("tensor '" + name + "' size does not match its shape");
  shapes[name] = {rows, cols};
  tensors[name] = std::move(data);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, data] : ckpt.tensors) {
    const auto [rows, cols] = ckpt.shapes.at(name);
    index.push_back({{"name", name}, {"rows", rows}, {"cols", cols}, {"offset", offset}});
    offset += data.size();
  }
  nlohmann::json header = {{"format", "tabforge-checkpoint"},
                           {"config", ckpt.config.to_json()},
                           {"head", ckpt.head ? *ckpt.head : nlohmann::json()},
                           {"meta", ckpt.meta},
                           {"tensors", index},
                           {"blob_floats", offset}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, data] : ckpt.tensors)
      for (float v : data) write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError(path.string() + " is not a tabforge checkpoint", 0);
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  const auto header_len = read_le<std::uint64_t>(in);
  if (header_len > (1ULL << 30)) throw ParseError("implausible checkpoint header length", 0);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw ParseError("truncated checkpoint", 0);
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  if (!header.at("head").is_null()) ckpt.head = header.at("head");
  ckpt.meta = header.at("meta");
  const auto total = header.at("blob_floats").get<std::size_t>();
  std::vector<float> blob(total);
  for (auto& v : blob) v = std::bit_cast<float>(read_le<std::uint32_t>(in));
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<std::size_t>();
    const auto cols = t.at("cols").get<std::size_t>();
    const auto off = t.at("offset").get<std::size_t>();
    if (off + rows * cols > total) throw ParseError("tensor '" + name + "' runs past the blob", 0);
    ckpt.put(name, rows, cols, std::vector<float>(blob.begin() + off, blob.begin() + off + rows * cols));
  }
  return ckpt;
}

template <typename Scalar>
Checkpoint make_checkpoint(const Transformer<Scalar>& model, const Head<Scalar>* head, const TrainState* state) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  const auto params = model.parameters();
  for (const auto& t : model.tensors()) {
    std::vector<float> data(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(params[t.offset + i]);
    ckpt.put(t.name, t.rows, t.cols, std::move(data));
  }
  if (head) {
    ckpt.head = head->to_json();
    const auto hp = head->parameters();
    const auto d = static_cast<std::size_t>(head->d_model());
    const auto c = static_cast<std::size_t>(head->n_outputs());
    std::vector<float> w(hp.begin(), hp.begin() + static_cast<std::ptrdiff_t>(d * c));
    std::vector<float> b(hp.begin() + static_cast<std::ptrdiff_t>(d * c), hp.end());
    ckpt.put("head.weight", d, c, std::move(w));
    ckpt.put("head.bias", 1, c, std::move(b));
  }
  if (state) {
    ckpt.meta["optim_steps"] = state->step;
    ckpt.meta["losses"] = state->losses;
    ckpt.meta["learning_rates"] = state->learning_rates;
    ckpt.meta["optim_groups"] = state->optimizers.size();
    for (std::size_t g = 0; g < state->optimizers.size(); ++g) {
      const auto& opt = state->optimizers[g];
      ckpt.meta["optim_adam_steps"].push_back(opt.steps_taken());
      const std::string prefix = "optim." + std::to_string(g);
      ckpt.put(prefix + ".m", 1, 2 * opt.first_moment().size(), pack_doubles(opt.first_moment()));
      ckpt.put(prefix + ".v", 1, 2 * opt.second_moment().size(), pack_doubles(opt.second_moment()));
    }
  }
  return ckpt;
}

template <typename Scalar>
Transformer<Scalar> model_from_checkpoint(const Checkpoint& ckpt) {
  Transformer<Scalar> model(ckpt.config, 0);
  auto params = model.parameters();
  for (const auto& t : model.tensors()) {
    const auto& data = ckpt.tensor(t.name);
    if (data.size() != t.size()) throw StructuralError("tensor '" + t.name + "' has the wrong size");
    for (std::size_t i = 0; i < t.size(); ++i) params[t.offset + i] = static_cast<Scalar>(data[i]);
  }
  return model;
}

template <typename Scalar>
Head<Scalar> head_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.head) throw StructuralError("checkpoint has no head");
  const auto& j = *ckpt.head;
  Head<Scalar> head(head_kind_from_string(j.at("kind").get<std::string>()), j.at("d_model").get<int>(),
                    j.at("n_outputs").get<int>(), 0);
  head.set_target_scaling(j.at("target_mean").get<double>(), j.at("target_std").get<double>());
  const auto& w = ckpt.tensor("head.weight");
  const auto& b = ckpt.tensor("head.bias");
  auto p = head.parameters();
  if (w.size() + b.size() != p.size()) throw StructuralError("head tensors have the wrong size");
  std::copy(w.begin(), w.end(), p.begin());
  std::copy(b.begin(), b.end(), p.begin() + static_cast<std::ptrdiff_t>(w.size()));
  return head;
}

TrainState train_state_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg) {
  TrainState state;
  if (!ckpt.meta.contains("optim_steps")) return state;
  state.step = ckpt.meta.at("optim_steps").get<std::size_t>();
  state.losses = ckpt.meta.at("losses").get<std::vector<double>>();
  state.learning_rates = ckpt.meta.at("learning_rates").get<std::vector<double>>();
  const auto groups = ckpt.meta.at("optim_groups").get<std::size_t>();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::string prefix = "optim." + std::to_string(g);
    const auto& m = ckpt.tensor(prefix + ".m");
    const auto& v = ckpt.tensor(prefix + ".v");
    Adam opt(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    opt.restore(ckpt.meta.at("optim_adam_steps").at(g).get<std::size_t>(), unpack_doubles(m), unpack_doubles(v));
    state.optimizers.push_back(std::move(opt));
  }
  return state;
}

template Checkpoint make_checkpoint<float>(const Transformer<float>&, const Head<float>*, const TrainState*);
template Checkpoint make_checkpoint<double>(const Transformer<double>&, const Head<double>*, const TrainState*);
template Transformer<float> model_from_checkpoint<float>(const Checkpoint&);
template Transformer<double> model_from_checkpoint<double>(const Checkpoint&);
template Head<float> head_from_checkpoint<float>(const Checkpoint&);
template Head<double> head_from_checkpoint<double>(const Checkpoint&);

}  // namespace tabforge::lm
