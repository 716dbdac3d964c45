// SPDX-License-Identifier: Apache-2.0
#include "cdiff/ptf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cdiff {

namespace {

static_assert(std::endian::native == std::endian::little, "PTF1 I/O assumes a little-endian host");

constexpr unsigned char kMagic[4] = {'P', 'T', 'F', '1'};
constexpr unsigned char kDtypeF32 = 0;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<unsigned char> encode_ptf(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("PTF1 supports rank <= 255");
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<unsigned char>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
  out.insert(out.end(), bytes, bytes + t.numel() * sizeof(float));
  return out;
}

Tensor decode_ptf(const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(what + ": missing PTF1 magic");
  }
  if (bytes[4] != kDtypeF32) throw FormatError(what + ": unsupported dtype code " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  if (bytes.size() < 6 + 4 * rank) throw FormatError(what + ": truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes.data() + 6 + 4 * i);
  const std::size_t n = shape_numel(shape);
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() != header + n * sizeof(float)) {
    throw FormatError(what + ": payload size " + std::to_string(bytes.size() - header) + " does not match shape " +
                      shape_str(shape));
  }
  std::vector<float> values(n);
  std::memcpy(values.data(), bytes.data() + header, n * sizeof(float));
  return Tensor(std::move(shape), std::move(values));
}

void write_ptf(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_ptf(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ptf(const std::filesystem::path& path) { return decode_ptf(read_file(path), path.string()); }

void TensorDirectory::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (const auto& [key, value] : meta) manifest << "meta\t" << key << '\t' << value << '\n';
  for (const auto& [name, t] : tensors) {
    manifest << "tensor\t" << name << '\t';
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "," : "") << t.shape()[i];
    manifest << '\n';
    write_ptf(dir / (name + ".ptf"), t);
  }
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  out << manifest.str();
}

TensorDirectory TensorDirectory::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest_path)) {
    throw FormatError("missing checkpoint manifest " + manifest_path.string());
  }
  std::ifstream in(manifest_path);
  TensorDirectory td;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, name, rest;
    std::getline(ls, kind, '\t');
    std::getline(ls, name, '\t');
    std::getline(ls, rest);
    if (kind == "meta") {
      td.meta[name] = rest;
    } else if (kind == "tensor") {
      Shape shape;
      std::istringstream ss(rest);
      std::string dim;
      while (std::getline(ss, dim, ',')) {
        if (!dim.empty()) shape.push_back(std::stoul(dim));
      }
      Tensor t = read_ptf(dir / (name + ".ptf"));
      if (t.shape() != shape) {
        throw FormatError(name + ": stored shape " + shape_str(t.shape()) + " disagrees with manifest " +
                          shape_str(shape));
      }
      td.tensors.emplace_back(name, std::move(t));
    } else {
      throw FormatError(manifest_path.string() + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  return td;
}

const Tensor& TensorDirectory::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

const std::string& TensorDirectory::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint manifest has no key '" + key + "'");
  return it->second;
}

}  // namespace cdiff
