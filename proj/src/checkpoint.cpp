#include "advbench/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

namespace advbench {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'B', 'C', 'K', 'P', 'T'};
constexpr char kRawMagic[8] = {'A', 'D', 'V', 'B', 'R', 'A', 'W', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor_body(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    bytes(t.raw().data(), t.size() * sizeof(float));
  }
  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }
  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) {
      throw std::runtime_error(path_ + ": truncated at byte offset " + std::to_string(pos_) + " (need " +
                               std::to_string(n) + " more bytes)");
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void magic(const char (&expected)[8]) {
    char m[8];
    bytes(m, 8);
    if (std::memcmp(m, expected, 8) != 0) throw std::runtime_error(path_ + ": bad magic");
  }
  Tensor tensor_body() {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw std::runtime_error(path_ + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = u32();
    std::vector<float> data(shape_size(shape));
    bytes(data.data(), data.size() * sizeof(float));
    return Tensor(std::move(shape), std::move(data));
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw std::runtime_error(path_ + ": trailing bytes at offset " + std::to_string(pos_));
  }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.tensor_body(t);
  }
  w.flush(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    ckpt.tensors.emplace(std::move(name), r.tensor_body());
  }
  r.expect_end();
  return ckpt;
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor& t) {
  Writer w;
  w.bytes(kRawMagic, 8);
  w.tensor_body(t);
  w.flush(path);
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kRawMagic);
  Tensor t = r.tensor_body();
  r.expect_end();
  return t;
}

}  // namespace advbench
