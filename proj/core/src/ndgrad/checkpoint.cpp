// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

namespace bline::nd {
namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) | (static_cast<unsigned char>(s[1]) << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterStore& params) {
  std::string out(kCheckpointMagic);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& item : params) {
    put_u32(out, static_cast<std::uint32_t>(item.name.size()));
    out += item.name;
    const auto& shape = item.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) {
      if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("extent exceeds u32");
      put_u32(out, static_cast<std::uint32_t>(e));
    }
    for (double v : item.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ParameterStore decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
  const auto version = in.u16();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.u32();
  ParameterStore params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.u32();
    std::string name(in.take(name_len));
    const auto rank = in.u32();
    if (rank == 0 || rank > 8) throw FormatError("bad rank for " + name);
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(in.u32());
      if (shape.back() == 0) throw FormatError("zero extent for " + name);
      n *= shape.back();
      if (n > bytes.size()) throw FormatError("checkpoint truncated");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(in.u32()));
    params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint payload");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const auto bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void round_to_float(ParameterStore& params) {
  for (auto& item : params) {
    for (auto& v : item.tensor.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace bline::nd
