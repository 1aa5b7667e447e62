#include "agegan/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "agegan/errors.hpp"

namespace agegan {
namespace {

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void put_be32(std::string& s, uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_chunk(std::string& png, const char* type, const std::string& data) {
  put_be32(png, static_cast<uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  png += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(png, static_cast<uint32_t>(crc));
}

}  // namespace

torch::Tensor to_gray8(const torch::Tensor& image) {
  if (image.dim() != 2) throw ArgumentError("grayscale images must be [H, W]");
  if (image.scalar_type() == torch::kUInt8) return image.contiguous();
  return (image.to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
}

void write_pgm(const std::filesystem::path& path, const torch::Tensor& image) {
  auto g = to_gray8(image);
  std::string bytes = "P5\n" + std::to_string(g.size(1)) + " " + std::to_string(g.size(0)) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(g.data_ptr<uint8_t>()), static_cast<size_t>(g.numel()));
  write_bytes(path, bytes);
}

torch::Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int64_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": not an 8-bit P5 PGM");
  in.get();
  auto img = torch::empty({h, w}, torch::kUInt8);
  in.read(reinterpret_cast<char*>(img.data_ptr<uint8_t>()), static_cast<std::streamsize>(img.numel()));
  if (in.gcount() != img.numel()) throw FormatError(path.string() + ": truncated PGM payload");
  return img;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  auto g = to_gray8(image);
  const auto h = static_cast<uint32_t>(g.size(0)), w = static_cast<uint32_t>(g.size(1));
  std::string raw;
  raw.reserve(static_cast<size_t>(h) * (w + 1));
  const auto* px = g.data_ptr<uint8_t>();
  for (uint32_t y = 0; y < h; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(px + static_cast<size_t>(y) * w), w);
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_len, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw IoError("zlib compression failed for " + path.string());
  }
  packed.resize(packed_len);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, w);
  put_be32(ihdr, h);
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit grayscale, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", "");
  write_bytes(path, png);
}

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  if (path.extension() == ".png") {
    write_png(path, image);
  } else {
    write_pgm(path, image);
  }
}

torch::Tensor render_line_chart(const std::vector<std::vector<double>>& series, int64_t width, int64_t height) {
  auto img = torch::full({height, width}, 255, torch::kUInt8);
  auto a = img.accessor<uint8_t, 2>();
  const int64_t left = 40, right = width - 10, top = 10, bottom = height - 30;
  for (int64_t x = left; x <= right; ++x) a[bottom][x] = 0;
  for (int64_t y = top; y <= bottom; ++y) a[y][left] = 0;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  size_t longest = 0;
  for (const auto& s : series) {
    for (double v : s) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    longest = std::max(longest, s.size());
  }
  if (longest < 2 || !(hi >= lo)) return img;
  if (hi == lo) hi = lo + 1.0;

  auto to_px = [&](size_t i, double v) {
    const double fx = static_cast<double>(i) / static_cast<double>(longest - 1);
    const double fy = (v - lo) / (hi - lo);
    return std::pair<double, double>{left + fx * static_cast<double>(right - left),
                                     bottom - fy * static_cast<double>(bottom - top)};
  };
  for (size_t s = 0; s < series.size(); ++s) {
    const auto shade = static_cast<uint8_t>(std::min<size_t>(40 + 90 * s, 200));
    for (size_t i = 1; i < series[s].size(); ++i) {
      auto [x0, y0] = to_px(i - 1, series[s][i - 1]);
      auto [x1, y1] = to_px(i, series[s][i]);
      const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
      for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        const auto x = static_cast<int64_t>(std::lround(x0 + t * (x1 - x0)));
        const auto y = static_cast<int64_t>(std::lround(y0 + t * (y1 - y0)));
        if (x >= 0 && x < width && y >= 0 && y < height) a[y][x] = shade;
      }
    }
  }
  return img;
}

}  // namespace agegan
