// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "protoocc/errors.hpp"
#include "protoocc/train.hpp"

namespace protoocc::harness {

namespace {

constexpr char kMagic[4] = {'P', 'O', 'C', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 0;

template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

// Config field that fixes a tensor's shape, for error messages.
std::string field_for(const std::string& tensor) {
  if (tensor == "encoder.query") return "model.query";
  if (tensor.find("attention.score") != std::string::npos || tensor.find("attention.offset") != std::string::npos)
    return "model.n_points";
  if (tensor.find("attention.value") != std::string::npos || tensor.find("projection.0.weight") != std::string::npos)
    return "render.channels";
  if (tensor.rfind("decoder.classifier", 0) == 0) return "scene.num_classes";
  if (tensor.rfind("decoder.up", 0) == 0) return "scene.H";
  return "model.d";
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  const nlohmann::json meta{{"config", to_json(ckpt.config)},
                            {"step", ckpt.step},
                            {"rng_state", {{"key", ckpt.rng_state.key}, {"counter", ckpt.rng_state.counter}}}};
  const std::string text = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kFloat32);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string(kMagic, 4)) throw FormatError("not a POCC checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  const auto meta_len = in.get<std::uint32_t>("config length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(meta_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  Checkpoint ckpt;
  if (!meta.is_object() || !meta.contains("config") || !meta.contains("step") || !meta.contains("rng_state"))
    throw FormatError("checkpoint metadata needs config, step and rng_state");
  try {
    ckpt.step = meta.at("step").get<std::uint64_t>();
    ckpt.rng_state.key = meta.at("rng_state").at("key").get<std::uint64_t>();
    ckpt.rng_state.counter = meta.at("rng_state").at("counter").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }
  ckpt.config = config_from_json(meta.at("config"));

  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>("tensor name length");
    std::string name = in.take(name_len, "tensor name");
    if (in.get<std::uint8_t>("dtype") != kFloat32) throw FormatError("tensor '" + name + "' has an unknown dtype");
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>("dims");
    const std::size_t n = shape_numel(shape);
    if (n > bytes.size()) throw FormatError("checkpoint truncated while reading tensor '" + name + "'");
    std::vector<double> values(n);
    for (auto& x : values) x = std::bit_cast<float>(in.get<std::uint32_t>("tensor payload"));
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Checkpoint ckpt = decode_checkpoint(ss.str());
  ckpt.config.validate();
  // Shapes must be those the stored config builds.
  Rng scratch(0);
  const auto expected = Model::init(ckpt.config, scratch).named_parameters();
  const std::size_t common = std::min(expected.size(), ckpt.tensors.size());
  for (std::size_t i = 0; i < common; ++i) {
    const auto& [name, t] = ckpt.tensors[i];
    if (name != expected[i].first)
      throw ConfigError("checkpoint tensor '" + name + "' where '" + expected[i].first + "' was expected (config field '" +
                        field_for(expected[i].first) + "')");
    if (t.shape() != expected[i].second.shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + " but config field '" +
                        field_for(name) + "' implies " + shape_str(expected[i].second.shape()));
  }
  if (expected.size() != ckpt.tensors.size()) {
    const auto& extra = common < expected.size() ? expected[common].first : ckpt.tensors[common].first;
    throw ConfigError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors but the config implies " +
                      std::to_string(expected.size()) + " (config field '" +
                      (extra.rfind("encoder.layer", 0) == 0 ? "model.encoder_layers" : field_for(extra)) + "')");
  }
  return ckpt;
}

}  // namespace protoocc::harness
