#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "triskelion/optim.hpp"

// Checkpoint layout (all integers little-endian):
//   "TRSK1" | u16 version | u32 config length | config text
//   | u32 record count | records sorted by name
// record: u16 name length | name | u8 rank | u32 dims[rank] | f32 payload
namespace triskelion::persistence {

inline constexpr char kMagic[5] = {'T', 'R', 'S', 'K', '1'};
inline constexpr std::uint16_t kFormatVersion = 1;

struct Checkpoint {
  optim::TrainConfig config;
  optim::TrainState state;  // params (weights + running stats), Adam moments, epochs done
};

std::vector<std::uint8_t> encode(const Checkpoint& checkpoint);
// BadMagic, UnsupportedVersion, CorruptRecord, ShapeMismatch.
Checkpoint decode(std::span<const std::uint8_t> bytes);

// Writes and fsyncs; IoError on failure.
void save(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// Sorted key=value lines; the config block and manifest.txt share it.
std::string config_text(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> parse_config_text(const std::string& text);

// Full config plus format version, one key per line.
std::string manifest(const optim::TrainConfig& config);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace triskelion::persistence
