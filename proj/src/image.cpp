// SPDX-License-Identifier: Apache-2.0
#include "cdiff/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace cdiff {

void validate_image(const ImageSample& img) {
  const Tensor& p = img.pixels;
  if (!p.defined() || p.rank() != 3) {
    throw ShapeError("image must be (C,H,W), got " + (p.defined() ? shape_str(p.shape()) : std::string("<undefined>")));
  }
  if (p.dim(1) % kLatentDownsample != 0 || p.dim(2) % kLatentDownsample != 0) {
    throw ShapeError("image size " + std::to_string(p.dim(1)) + "x" + std::to_string(p.dim(2)) +
                     " is not divisible by 8");
  }
  for (float v : p.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("image value " + std::to_string(v) + " outside [0,1]");
  }
}

void write_pnm(const std::filesystem::path& path, const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw ShapeError("write_pnm expects (1,H,W) or (3,H,W), got " + shape_str(img.shape()));
  }
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<unsigned char> buf(C * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const float v = std::clamp(img[(c * H + y) * W + x], 0.0f, 1.0f);
        buf[(y * W + x) * C + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out << (C == 1 ? "P5" : "P6") << '\n' << W << ' ' << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace {

std::size_t read_header_int(std::istream& in, const std::filesystem::path& path) {
  int ch = in.peek();
  while (ch != EOF) {
    if (std::isspace(ch)) {
      in.get();
    } else if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    ch = in.peek();
  }
  long v = -1;
  if (!(in >> v) || v <= 0) throw ImageIoError(path.string() + ": malformed PNM header");
  return static_cast<std::size_t>(v);
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot read image " + path.string());
  std::string magic;
  in >> magic;
  std::size_t C = 0;
  if (magic == "P5") {
    C = 1;
  } else if (magic == "P6") {
    C = 3;
  } else {
    throw ImageIoError(path.string() + ": unsupported image format '" + magic + "' (expected P5/P6)");
  }
  const std::size_t W = read_header_int(in, path);
  const std::size_t H = read_header_int(in, path);
  const std::size_t maxval = read_header_int(in, path);
  if (maxval > 255) throw ImageIoError(path.string() + ": only 8-bit PNM is supported");
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> buf(C * H * W);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw ImageIoError(path.string() + ": truncated raster");
  }
  Tensor img({C, H, W});
  auto d = img.data();
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) d[(c * H + y) * W + x] = buf[(y * W + x) * C + c] * scale;
  return img;
}

}  // namespace cdiff
