#include "triskelion/persistence.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <set>
#include <sstream>

#include "triskelion/data.hpp"
#include "triskelion/error.hpp"

namespace triskelion::persistence {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(ErrorKind::CorruptRecord, std::string("truncated ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void put_record(Writer& w, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xFFFF) fail(ErrorKind::InvalidArgument, "record name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float f : t.values()) w.f32(f);
}

const std::string kParam = "param/";
const std::string kBuffer = "buffer/";
const std::string kAdamM = "adam_m/";
const std::string kAdamV = "adam_v/";

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorKind::CorruptRecord, "config block lacks " + key);
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorKind::CorruptRecord, "bad value for " + key);
  return static_cast<std::size_t>(v);
}

void check_same_layout(const std::map<std::string, Tensor<float>>& params,
                       const std::map<std::string, Tensor<float>>& moments, const char* what) {
  if (moments.size() != params.size()) fail(ErrorKind::ShapeMismatch, std::string(what) + " count differs from parameters");
  for (const auto& [name, p] : params) {
    const auto it = moments.find(name);
    if (it == moments.end() || it->second.shape() != p.shape()) {
      fail(ErrorKind::ShapeMismatch, std::string(what) + " missing or misshapen for " + name);
    }
  }
}

}  // namespace

std::string config_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      fail(ErrorKind::InvalidArgument, "config key/value not representable: " + k);
    }
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::CorruptRecord, "config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string manifest(const optim::TrainConfig& config) {
  auto kv = optim::to_key_values(config);
  kv["format_version"] = std::to_string(kFormatVersion);
  return config_text(kv);
}

std::vector<std::uint8_t> encode(const Checkpoint& ck) {
  const auto& st = ck.state;
  auto kv = optim::to_key_values(ck.config);
  kv["adam_t"] = std::to_string(st.adam.t);
  kv["epochs_done"] = std::to_string(st.epochs_done);
  kv["bn_eps"] = "1e-05";
  kv["bn_momentum"] = "0.1";
  const std::string text = config_text(kv);

  std::map<std::string, const Tensor<float>*> records;
  for (const auto& [n, t] : st.params.weights) records[kParam + n] = &t;
  for (const auto& [n, t] : st.params.buffers) records[kBuffer + n] = &t;
  for (const auto& [n, t] : st.adam.m) records[kAdamM + n] = &t;
  for (const auto& [n, t] : st.adam.v) records[kAdamV + n] = &t;

  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) put_record(w, name, *t);
  return w.take();
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin())) {
    fail(ErrorKind::BadMagic, "not a checkpoint file");
  }
  Reader r(bytes.subspan(sizeof kMagic));
  const std::uint16_t version = r.u16("version");
  if (version == 0 || version > kFormatVersion) {
    fail(ErrorKind::UnsupportedVersion, "checkpoint format version " + std::to_string(version));
  }
  const std::uint32_t text_len = r.u32("config length");
  const auto kv = parse_config_text(r.str(text_len, "config block"));

  Checkpoint ck;
  ck.config = optim::from_key_values(kv);
  ck.state.adam.t = parse_count(kv, "adam_t");
  ck.state.epochs_done = parse_count(kv, "epochs_done");

  const std::uint32_t count = r.u32("record count");
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16("record name length");
    std::string name = r.str(len, "record name");
    if (i > 0 && name <= previous) fail(ErrorKind::CorruptRecord, "records out of order or duplicated at " + name);
    const std::uint8_t rank = r.u8("record rank");
    if (rank == 0) fail(ErrorKind::CorruptRecord, "zero-rank record " + name);
    Shape shape(rank);
    std::uint64_t elems = 1;
    for (auto& d : shape) {
      d = r.u32("record dims");
      if (d == 0) fail(ErrorKind::CorruptRecord, "zero extent in " + name);
      elems *= d;
    }
    if (elems > r.remaining() / 4) fail(ErrorKind::CorruptRecord, "payload of " + name + " shorter than its dims");
    std::vector<float> values(elems);
    for (auto& f : values) f = std::bit_cast<float>(r.u32("payload"));
    Tensor<float> t(shape, std::move(values));

    auto route = [&](const std::string& prefix, std::map<std::string, Tensor<float>>& into) {
      if (name.rfind(prefix, 0) != 0) return false;
      into.emplace(name.substr(prefix.size()), std::move(t));
      return true;
    };
    if (!route(kParam, ck.state.params.weights) && !route(kBuffer, ck.state.params.buffers) &&
        !route(kAdamM, ck.state.adam.m) && !route(kAdamV, ck.state.adam.v)) {
      fail(ErrorKind::CorruptRecord, "unknown record " + name);
    }
    previous = std::move(name);
  }
  if (r.remaining() != 0) fail(ErrorKind::CorruptRecord, "trailing bytes after last record");

  model::validate(ck.state.params);
  check_same_layout(ck.state.params.weights, ck.state.adam.m, "adam_m");
  check_same_layout(ck.state.params.weights, ck.state.adam.v, "adam_v");
  return ck;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail(ErrorKind::IoError, "cannot open " + path.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      fail(ErrorKind::IoError, "write to " + path.string() + " failed: " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    fail(ErrorKind::IoError, "fsync " + path.string() + " failed: " + std::strerror(err));
  }
  if (::close(fd) != 0) fail(ErrorKind::IoError, "close " + path.string() + " failed");
}

void save(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, encode(checkpoint));
}

Checkpoint load(const std::filesystem::path& path) { return decode(data::read_file(path)); }

}  // namespace triskelion::persistence
