#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "fpliif/checkpoint.hpp"
#include "fpliif/config_io.hpp"
#include "fpliif/errors.hpp"
#include "fpliif/random.hpp"

using namespace fpliif;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_width = 4;
  c.group_sizes = {1, 1, 1};
  c.rcmlp_dims = {8, 6};
  c.head_width = 8;
  c.head_depth = 1;
  c.num_classes = 3;
  c.input_resolution = 16;
  return c;
}

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("fpliif_test_ckpt_" + name); }

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TensorF random_image(std::uint64_t seed) {
  Rng rng(seed);
  TensorF::Array a(3 * 16 * 16);
  for (Index i = 0; i < a.size(); ++i) a(i) = static_cast<float>(uniform01(rng));
  return TensorF({1, 3, 16, 16}, std::move(a));
}

}  // namespace

TEST_CASE("save then load reproduces logits bitwise") {
  const auto m = build_model<float>(tiny_config(), 3);
  const auto path = temp("roundtrip.fplf");
  save_checkpoint(m, path, {{"note", "x"}});
  CHECK(!fs::exists(path.string() + ".tmp"));
  Json meta;
  const auto back = load_checkpoint<float>(path, &meta);
  CHECK(meta["note"] == "x");
  CHECK(back.config() == m.config());
  CHECK(back.names() == m.names());
  NoGradGuard guard;
  const auto img = random_image(1);
  CHECK((forward(m, img, 12, 20).data() == forward(back, img, 12, 20).data()).all());

  const auto header = read_checkpoint_header(path);
  CHECK(header["byte_order"] == "little");
  CHECK(header["tensors"].size() == m.parameters().size());
}

TEST_CASE("hand-assembled little-endian file loads on any host") {
  const auto config = tiny_config();
  const auto shapes = build_model<float>(config, 0);

  // 1.5, -2.25, 0.25, 0 as little-endian IEEE-754 single precision.
  const unsigned char pattern[4][4] = {{0x00, 0x00, 0xC0, 0x3F},
                                       {0x00, 0x00, 0x10, 0xC0},
                                       {0x00, 0x00, 0x80, 0x3E},
                                       {0x00, 0x00, 0x00, 0x00}};
  const float values[4] = {1.5f, -2.25f, 0.25f, 0.0f};

  // Tensor records listed in reverse order; payload in construction order.
  Json tensors = Json::array();
  std::vector<unsigned char> payload;
  std::vector<std::uint64_t> offsets;
  for (const auto& t : shapes.parameters()) {
    offsets.push_back(payload.size());
    for (Index k = 0; k < t.size(); ++k) payload.insert(payload.end(), pattern[k % 4], pattern[k % 4] + 4);
  }
  for (std::size_t i = shapes.parameters().size(); i-- > 0;) {
    tensors.push_back({{"name", shapes.names()[i]},
                       {"shape", shapes.parameters()[i].shape()},
                       {"dtype", "f32"},
                       {"offset", offsets[i]}});
  }
  const std::string text = Json{{"config", config}, {"byte_order", "little"}, {"tensors", tensors}, {"meta", Json::object()}}.dump();

  std::vector<unsigned char> file{'F', 'P', 'L', 'F', 0x01, 0x00, 0x00, 0x00};
  for (int b = 0; b < 8; ++b) file.push_back(static_cast<unsigned char>((text.size() >> (8 * b)) & 0xFF));
  file.insert(file.end(), text.begin(), text.end());
  file.insert(file.end(), payload.begin(), payload.end());
  const auto path = temp("fixture.fplf");
  write_bytes(path, file);

  const auto m = load_checkpoint<double>(path);
  for (const auto& t : m.parameters()) {
    for (Index k = 0; k < t.size(); ++k) CHECK(t.data()(k) == static_cast<double>(values[k % 4]));
  }

  // Our own writer produces the same bytes for the same values.
  Model<float> same(config);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) same.add_parameter(m.names()[i], cast<float>(m.parameters()[i]));
  const auto ours = temp("fixture_rewrite.fplf");
  save_checkpoint(same, ours);
  const auto rewritten = read_bytes(ours);
  CHECK(std::vector<unsigned char>(rewritten.end() - static_cast<long>(payload.size()), rewritten.end()) == payload);
  CHECK(std::vector<unsigned char>(rewritten.begin(), rewritten.begin() + 8) ==
        std::vector<unsigned char>(file.begin(), file.begin() + 8));
}

TEST_CASE("format and corruption errors") {
  const auto m = build_model<float>(tiny_config(), 4);
  const auto path = temp("errors.fplf");
  save_checkpoint(m, path);
  const auto good = read_bytes(path);

  auto bad = good;
  bad[0] = 'X';
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);

  bad = good;
  bad[4] = 2;
  write_bytes(path, bad);
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);

  write_bytes(path, std::vector<unsigned char>(good.begin(), good.end() - 10));
  CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptionError);

  write_bytes(path, std::vector<unsigned char>(good.begin(), good.begin() + 6));
  CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptionError);

  // Header claims a different shape than the configuration implies.
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(good[8 + static_cast<std::size_t>(b)]) << (8 * b);
  Json j = Json::parse(std::string(good.begin() + 16, good.begin() + 16 + static_cast<long>(len)));
  j["tensors"][0]["shape"] = Shape{4, 3, 3, 2};
  const std::string text = j.dump();
  std::vector<unsigned char> reshaped(good.begin(), good.begin() + 8);
  for (int b = 0; b < 8; ++b) reshaped.push_back(static_cast<unsigned char>((text.size() >> (8 * b)) & 0xFF));
  reshaped.insert(reshaped.end(), text.begin(), text.end());
  reshaped.insert(reshaped.end(), good.begin() + 16 + static_cast<long>(len), good.end());
  write_bytes(path, reshaped);
  CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptionError);

  CHECK_THROWS_AS(load_checkpoint<float>(temp("does_not_exist.fplf")), FormatError);
}
