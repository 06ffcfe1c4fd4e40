// SPDX-License-Identifier: Apache-2.0
#include "xaiens/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace xaiens::ckpt {

namespace {
constexpr char kMagic[8] = {'X', 'A', 'I', 'B', 'L', 'B', '0', '1'};
}

std::string blob_to_bytes(const nlohmann::json& meta,
                          const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  nlohmann::json header;
  header["meta"] = meta;
  auto& dir = header["arrays"] = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& [name, t] : arrays) {
    dir.push_back({{"name", name}, {"dims", t->dims()}, {"offset", offset}});
    offset += t->size();
  }
  const std::string header_str = header.dump();
  require(header_str.size() < (1u << 30), ErrorCode::runtime, "header too large");

  std::string out;
  out.reserve(sizeof(kMagic) + 4 + header_str.size() + offset * sizeof(float));
  out.append(kMagic, sizeof(kMagic));
  const auto hlen = static_cast<uint32_t>(header_str.size());
  out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.append(header_str);
  for (const auto& [name, t] : arrays)
    out.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(float));
  return out;
}

const Tensor& LoadedBlob::array(const std::string& name) const {
  auto it = arrays.find(name);
  require(it != arrays.end(), ErrorCode::not_found, "missing array: " + name);
  return it->second;
}

LoadedBlob blob_from_bytes(std::string_view bytes, const std::string& origin) {
  require(bytes.size() >= sizeof(kMagic) + 4 &&
              std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorCode::io, "bad blob magic: " + origin);
  uint32_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + sizeof(kMagic), sizeof(hlen));
  const size_t data_start = sizeof(kMagic) + 4 + hlen;
  require(bytes.size() >= data_start, ErrorCode::io, "truncated blob header: " + origin);

  LoadedBlob out;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(sizeof(kMagic) + 4, hlen));
  } catch (const std::exception& e) {
    fail(ErrorCode::io, "bad blob header in " + origin + ": " + e.what());
  }
  out.meta = header.value("meta", nlohmann::json::object());

  const char* data = bytes.data() + data_start;
  const size_t float_count = (bytes.size() - data_start) / sizeof(float);
  for (const auto& entry : header["arrays"]) {
    const auto dims = entry["dims"].get<std::vector<int>>();
    const auto offset = entry["offset"].get<size_t>();
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    require(offset + n <= float_count, ErrorCode::io, "truncated blob data: " + origin);
    std::vector<float> values(n);
    std::memcpy(values.data(), data + offset * sizeof(float), n * sizeof(float));
    out.arrays.emplace(entry["name"].get<std::string>(),
                       Tensor::from(dims, std::move(values)));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorCode::io, "cannot open for write: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::io, "write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::not_found, "cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace xaiens::ckpt
