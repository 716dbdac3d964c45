// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff {

/// Raised for truncated files, bad magic, or shape mismatches on load.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PTF1 layout: "PTF1", u8 dtype (0 = f32 LE), u8 rank, rank x u32 LE dims,
/// then the row-major payload.
std::vector<unsigned char> encode_ptf(const Tensor& t);
Tensor decode_ptf(const std::vector<unsigned char>& bytes, const std::string& what = "buffer");

void write_ptf(const std::filesystem::path& path, const Tensor& t);
Tensor read_ptf(const std::filesystem::path& path);

/// Ordered name -> tensor collection saved as `<name>.ptf` files plus a
/// `manifest.txt` listing names and shapes, and free-form `key = value`
/// metadata lines.
struct TensorDirectory {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> meta;

  void save(const std::filesystem::path& dir) const;
  static TensorDirectory load(const std::filesystem::path& dir);

  const Tensor& at(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;
};

}  // namespace cdiff
