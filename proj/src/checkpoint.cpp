#include "fpliif/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpliif/config_io.hpp"
#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'P', 'L', 'F'};
constexpr std::size_t kPreamble = 4 + 4 + 8;

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Parsed {
  nlohmann::json header;
  std::size_t payload_offset = 0;
};

Parsed parse(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (bytes.size() < kPreamble) throw CorruptionError(path.string() + ": truncated preamble");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPreamble) throw CorruptionError(path.string() + ": truncated header");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.begin() + kPreamble,
                                     bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": unreadable header: " + e.what());
  }
  p.payload_offset = kPreamble + header_len;
  return p;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& t = model.parameters()[i];
    tensors.push_back({{"name", model.names()[i]}, {"shape", t.shape()}, {"dtype", "f32"},
                       {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  const nlohmann::json header{{"config", model.config()},
                              {"byte_order", "little"},
                              {"tensors", tensors},
                              {"meta", meta}};
  const std::string text = header.dump();

  std::vector<unsigned char> bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.reserve(bytes.size() + offset);
  for (const auto& t : model.parameters()) {
    for (Index k = 0; k < t.size(); ++k) {
      put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(t.data()(k))));
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const auto bytes = read_all(path);
  const Parsed p = parse(bytes, path);
  const std::string where = path.string() + ": ";

  ModelConfig config;
  try {
    from_json(p.header.at("config"), config);
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "bad config in header: " + e.what());
  }
  if (p.header.value("byte_order", "little") != "little") throw FormatError(where + "payload must be little-endian");

  // Shapes come from the configuration; the header must agree with them.
  Model<Scalar> reference = build_model<Scalar>(config, 0);
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < reference.names().size(); ++i) position.emplace(reference.names()[i], i);

  const auto& records = p.header.at("tensors");
  if (records.size() != reference.names().size()) {
    throw CorruptionError(where + "header lists " + std::to_string(records.size()) +
                          " tensors, configuration implies " + std::to_string(reference.names().size()));
  }
  const std::size_t payload = bytes.size() - p.payload_offset;
  std::vector<bool> seen(reference.names().size(), false);
  for (const auto& rec : records) {
    const auto name = rec.at("name").get<std::string>();
    auto it = position.find(name);
    if (it == position.end()) throw CorruptionError(where + "unexpected tensor " + name);
    if (seen[it->second]) throw CorruptionError(where + "duplicate tensor " + name);
    seen[it->second] = true;
    Tensor<Scalar>& t = reference.parameters()[it->second];
    const auto shape = rec.at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw CorruptionError(where + "tensor " + name + " has shape " + to_string(shape) +
                            ", configuration implies " + to_string(t.shape()));
    }
    if (rec.value("dtype", "f32") != "f32") throw FormatError(where + "tensor " + name + " is not f32");
    const auto offset = rec.at("offset").get<std::uint64_t>();
    const std::uint64_t len = static_cast<std::uint64_t>(t.size()) * 4;
    if (offset > payload || len > payload - offset) {
      throw CorruptionError(where + "payload truncated inside tensor " + name);
    }
    const unsigned char* src = bytes.data() + p.payload_offset + offset;
    auto& data = t.data();
    for (Index k = 0; k < t.size(); ++k) {
      data(k) = static_cast<Scalar>(std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * k)));
    }
  }
  if (meta != nullptr) *meta = p.header.value("meta", nlohmann::json::object());
  return reference;
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return parse(bytes, path).header;
}

template void save_checkpoint(const Model<float>&, const std::filesystem::path&, const nlohmann::json&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&, const nlohmann::json&);
template Model<float> load_checkpoint(const std::filesystem::path&, nlohmann::json*);
template Model<double> load_checkpoint(const std::filesystem::path&, nlohmann::json*);

}  // namespace fpliif
