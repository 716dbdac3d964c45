// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdiff/tensor.hpp"

namespace cdiff {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Digest over names, shapes and raw payloads, in order.
std::string checksum(const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace cdiff
