#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "test_support.hpp"
#include "triskelion/persistence.hpp"

namespace {

using namespace triskelion;
using namespace triskelion::persistence;
using Bytes = std::vector<std::uint8_t>;

Checkpoint trained_checkpoint() {
  optim::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const auto out = optim::train(cfg, support::synthetic_dataset(32, 1), nullptr);
  return Checkpoint{cfg, out.state};
}

const Checkpoint& fixture() {
  static const Checkpoint c = trained_checkpoint();
  return c;
}

std::uint32_t read_u32(const Bytes& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = support::scratch_dir("persist");
  save(fixture(), dir / "a.trsk");
  const auto loaded = load(dir / "a.trsk");
  save(loaded, dir / "b.trsk");
  EXPECT_EQ(data::read_file(dir / "a.trsk"), data::read_file(dir / "b.trsk"));
  EXPECT_EQ(loaded.state.params.weights, fixture().state.params.weights);
  EXPECT_EQ(loaded.state.params.buffers, fixture().state.params.buffers);
  EXPECT_EQ(loaded.state.adam.m, fixture().state.adam.m);
  EXPECT_EQ(loaded.state.adam.v, fixture().state.adam.v);
  EXPECT_EQ(loaded.state.adam.t, fixture().state.adam.t);
  EXPECT_EQ(loaded.state.epochs_done, 1u);
  EXPECT_EQ(optim::to_key_values(loaded.config), optim::to_key_values(fixture().config));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, EncodingIsCanonical) {
  EXPECT_EQ(encode(fixture()), encode(fixture()));
  EXPECT_EQ(encode(decode(encode(fixture()))), encode(fixture()));
}

TEST(Format, HeaderAndRecordLayout) {
  Checkpoint c = fixture();
  const Bytes bytes = encode(c);
  ASSERT_GE(bytes.size(), 11u);
  EXPECT_EQ(std::memcmp(bytes.data(), "TRSK1", 5), 0);
  EXPECT_EQ(bytes[5] | (bytes[6] << 8), kFormatVersion);
  const std::uint32_t config_len = read_u32(bytes, 7);
  const std::string text(bytes.begin() + 11, bytes.begin() + 11 + config_len);
  EXPECT_NE(text.find("seed=5\n"), std::string::npos);
  // records: every param, buffer and both Adam moments
  const std::uint32_t count = read_u32(bytes, 11 + config_len);
  EXPECT_EQ(count, c.state.params.weights.size() * 3 + c.state.params.buffers.size());

  std::size_t expected = 11 + config_len + 4;
  auto add = [&](const std::string& prefix, const auto& group) {
    for (const auto& [n, t] : group) expected += 2 + (prefix + n).size() + 1 + 4 * t.rank() + 4 * t.size();
  };
  add("param/", c.state.params.weights);
  add("buffer/", c.state.params.buffers);
  add("adam_m/", c.state.adam.m);
  add("adam_v/", c.state.adam.v);
  EXPECT_EQ(bytes.size(), expected);
}

TEST(Format, SingleRecordArithmetic) {
  Checkpoint empty;
  Checkpoint one;
  one.state.params.weights.emplace("w", Tensor<float>({2, 3}, 1.5f));
  const Bytes e = encode(empty), o = encode(one);
  const std::string name = "param/w";
  ASSERT_EQ(o.size() - e.size(), 2 + name.size() + 1 + 8 + 24);
  EXPECT_EQ(read_u32(o, 11 + read_u32(o, 7)), 1u);
  const std::size_t at = e.size();  // the record follows the header
  EXPECT_EQ(o[at], name.size());
  EXPECT_EQ(o[at + 1], 0);
  EXPECT_EQ(std::string(o.begin() + at + 2, o.begin() + at + 2 + name.size()), name);
  EXPECT_EQ(o[at + 2 + name.size()], 2);
  EXPECT_EQ(read_u32(o, at + 3 + name.size()), 2u);
  EXPECT_EQ(read_u32(o, at + 7 + name.size()), 3u);
  // 1.5f little-endian
  EXPECT_EQ(read_u32(o, at + 11 + name.size()), 0x3FC00000u);
}

// Walking the records by their own length fields lands exactly on EOF.
TEST(Format, RecordWalkCoversFile) {
  const Bytes bytes = encode(fixture());
  const std::uint32_t config_len = read_u32(bytes, 7);
  std::size_t at = 11 + config_len + 4;
  bool found = false;
  while (at < bytes.size()) {
    const std::size_t name_len = bytes[at] | (bytes[at + 1] << 8);
    const std::string name(bytes.begin() + at + 2, bytes.begin() + at + 2 + name_len);
    const std::size_t rank = bytes[at + 2 + name_len];
    std::size_t elems = 1;
    for (std::size_t r = 0; r < rank; ++r) elems *= read_u32(bytes, at + 3 + name_len + 4 * r);
    const std::size_t size = 2 + name_len + 1 + 4 * rank + 4 * elems;
    if (name == "param/cls.fc2.weight") {
      EXPECT_EQ(rank, 2u);
      EXPECT_EQ(size, 2 + name_len + 1 + 8 + 4 * 10 * 128);
      found = true;
    }
    at += size;
  }
  EXPECT_EQ(at, bytes.size());
  EXPECT_TRUE(found);
}

TEST(Errors, BadMagicAndVersion) {
  Bytes bytes = encode(fixture());
  Bytes bad = bytes;
  std::memcpy(bad.data(), "XXXXX", 5);
  EXPECT_KIND(decode(bad), ErrorKind::BadMagic);
  EXPECT_KIND(decode(Bytes{'T', 'R'}), ErrorKind::BadMagic);
  bad = bytes;
  bad[5] = 2;
  EXPECT_KIND(decode(bad), ErrorKind::UnsupportedVersion);
  bad[5] = 0;
  EXPECT_KIND(decode(bad), ErrorKind::UnsupportedVersion);
}

TEST(Errors, TruncationIsCorrupt) {
  const Bytes bytes = encode(fixture());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 100, bytes.size() / 2, std::size_t{12}}) {
    const Bytes part(bytes.begin(), bytes.begin() + cut);
    EXPECT_KIND(decode(part), ErrorKind::CorruptRecord) << cut;
  }
  Bytes extra = bytes;
  extra.push_back(0);
  EXPECT_KIND(decode(extra), ErrorKind::CorruptRecord);
}

TEST(Errors, WrongShapeIsRejected) {
  Checkpoint c = fixture();
  c.state.params.weights.at("cls.fc2.weight") = Tensor<float>({10, 127});
  EXPECT_KIND(decode(encode(c)), ErrorKind::ShapeMismatch);
  c = fixture();
  c.state.adam.m.at("dec.fc.bias") = Tensor<float>({3});
  EXPECT_KIND(decode(encode(c)), ErrorKind::ShapeMismatch);
}

TEST(Errors, MissingFileIsIoError) {
  EXPECT_KIND(load("/nonexistent/dir/x.trsk"), ErrorKind::IoError);
  EXPECT_KIND(save(fixture(), "/nonexistent/dir/x.trsk"), ErrorKind::IoError);
}

TEST(Checkpoint, EvaluateIsBitwiseAfterReload) {
  const auto test_set = support::synthetic_dataset(50, 9);
  const auto before = optim::evaluate(fixture().state.params, test_set);
  const auto after = optim::evaluate(decode(encode(fixture())).state.params, test_set);
  EXPECT_EQ(before.mu, after.mu);
  EXPECT_EQ(before.logits, after.logits);
  EXPECT_EQ(before.recon_mse, after.recon_mse);
  EXPECT_EQ(before.accuracy, after.accuracy);
}

TEST(ConfigText, RoundTripAndManifest) {
  const std::map<std::string, std::string> kv{{"b", "2"}, {"a", "x y"}, {"c", ""}};
  const auto text = config_text(kv);
  EXPECT_EQ(text, "a=x y\nb=2\nc=\n");
  EXPECT_EQ(parse_config_text(text), kv);
  EXPECT_KIND(config_text({{"a=b", "1"}}), ErrorKind::InvalidArgument);
  EXPECT_KIND(config_text({{"a", "1\n2"}}), ErrorKind::InvalidArgument);
  const auto m = manifest(optim::preset_config("desk"));
  EXPECT_NE(m.find("format_version=1\n"), std::string::npos);
  EXPECT_NE(m.find("preset=desk\n"), std::string::npos);
  EXPECT_NE(m.find("seed=42\n"), std::string::npos);
}

}  // namespace
