#include "eqsplit/idx.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace eqsplit {
namespace idx {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error(ErrorKind::Truncated, "IDX file truncated in header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Eigen::MatrixXd read_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  if (read_be32(in) != kImagesMagic) throw Error(ErrorKind::BadMagic, "bad IDX image magic in " + path);
  const auto count = read_be32(in);
  const auto rows = read_be32(in);
  const auto cols = read_be32(in);

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> buffer(pixels);
  Eigen::MatrixXd images(static_cast<Index>(pixels), static_cast<Index>(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(pixels));
    if (!in) throw Error(ErrorKind::Truncated, "IDX image data truncated in " + path);
    for (std::size_t p = 0; p < pixels; ++p)
      images(static_cast<Index>(p), static_cast<Index>(i)) = buffer[p] / 255.0;
  }
  return images;
}

std::vector<int> read_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  if (read_be32(in) != kLabelsMagic) throw Error(ErrorKind::BadMagic, "bad IDX label magic in " + path);
  const auto count = read_be32(in);
  std::vector<unsigned char> buffer(count);
  in.read(reinterpret_cast<char*>(buffer.data()), count);
  if (!in) throw Error(ErrorKind::Truncated, "IDX label data truncated in " + path);
  return {buffer.begin(), buffer.end()};
}

void write_images(const std::string& path, const Eigen::MatrixXd& images, Index rows, Index cols) {
  if (rows * cols != images.rows())
    throw Error(ErrorKind::DimensionMismatch, "write_images: rows*cols != pixel count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path);
  write_be32(out, kImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.cols()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (Index i = 0; i < images.cols(); ++i) {
    for (Index p = 0; p < images.rows(); ++p) {
      const double clamped = std::min(1.0, std::max(0.0, images(p, i)));
      const auto byte = static_cast<unsigned char>(std::lround(clamped * 255.0));
      out.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path);
  write_be32(out, kLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int label : labels) {
    const auto byte = static_cast<unsigned char>(label);
    out.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

}  // namespace idx

MnistData load_mnist(const std::string& images_path, const std::string& labels_path) {
  MnistData data;
  data.images = idx::read_images(images_path);
  data.labels = idx::read_labels(labels_path);
  if (static_cast<Index>(data.labels.size()) != data.images.cols())
    throw idx::Error(idx::ErrorKind::DimensionMismatch,
                     "image count does not match label count");
  return data;
}

}  // namespace eqsplit
