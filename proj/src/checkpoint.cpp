#include "eqsplit/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace eqsplit {

namespace {

constexpr char kMagic[4] = {'E', 'Q', 'C', 'K'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  write_pod(out, static_cast<std::uint32_t>(ckpt.arch.size()));
  out.write(ckpt.arch.data(), static_cast<std::streamsize>(ckpt.arch.size()));
  write_pod(out, static_cast<std::uint32_t>(ckpt.dims.size()));
  for (Index d : ckpt.dims) write_pod(out, static_cast<std::uint64_t>(d));
  write_pod(out, static_cast<std::uint64_t>(ckpt.params.size()));
  for (Index i = 0; i < ckpt.params.size(); ++i) write_pod(out, ckpt.params[i]);
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic");
  Checkpoint ckpt;
  const auto tag_len = read_pod<std::uint32_t>(in);
  ckpt.arch.resize(tag_len);
  in.read(ckpt.arch.data(), tag_len);
  if (!in) throw std::runtime_error("load_checkpoint: truncated tag");
  const auto dim_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < dim_count; ++i)
    ckpt.dims.push_back(static_cast<Index>(read_pod<std::uint64_t>(in)));
  const auto param_count = read_pod<std::uint64_t>(in);
  ckpt.params.resize(static_cast<Index>(param_count));
  for (std::uint64_t i = 0; i < param_count; ++i)
    ckpt.params[static_cast<Index>(i)] = read_pod<double>(in);
  return ckpt;
}

}  // namespace eqsplit
