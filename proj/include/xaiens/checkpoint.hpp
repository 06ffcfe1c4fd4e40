// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaiens/tensor.hpp"

namespace xaiens::ckpt {

// Binary blob format shared by checkpoints and the explanation cache:
//   magic(8) | u32 header_len | JSON header | packed float32 arrays.
// The header carries user metadata plus the array directory.

std::string blob_to_bytes(const nlohmann::json& meta,
                          const std::vector<std::pair<std::string, const Tensor*>>& arrays);

struct LoadedBlob {
  nlohmann::json meta;
  std::map<std::string, Tensor> arrays;

  const Tensor& array(const std::string& name) const;
};

LoadedBlob blob_from_bytes(std::string_view bytes, const std::string& origin);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

inline std::string digest_of(const std::string& bytes) {
  return hex64(fnv1a64_bytes(bytes.data(), bytes.size()));
}

}  // namespace xaiens::ckpt
