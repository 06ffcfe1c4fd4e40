// SPDX-License-Identifier: Apache-2.0
#include "xaiens/csvio.hpp"

#include <fstream>
#include <sstream>

#include "xaiens/common.hpp"

namespace xaiens::csvio {

namespace {
std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace

void write_csv(const std::filesystem::path& path, const std::string& config_digest,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows,
               const std::vector<std::string>& extra_comments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), ErrorCode::io, "cannot write csv: " + path.string());
  f << "# config_digest=" << config_digest << "\n";
  for (const auto& c : extra_comments) f << "# " << c << "\n";
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
  require(f.good(), ErrorCode::io, "csv write failed: " + path.string());
}

CsvFile read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::not_found, "cannot open csv: " + path.string());
  CsvFile out;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string comment = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
      constexpr std::string_view kDigestKey = "config_digest=";
      if (comment.rfind(kDigestKey, 0) == 0)
        out.config_digest = comment.substr(kDigestKey.size());
      out.comments.push_back(std::move(comment));
      continue;
    }
    if (!header_seen) {
      out.header = split_row(line);
      header_seen = true;
    } else {
      out.rows.push_back(split_row(line));
    }
  }
  require(header_seen, ErrorCode::io, "csv has no header row: " + path.string());
  return out;
}

void verify_digest(const CsvFile& file, const std::string& expected,
                   const std::string& origin) {
  require(file.config_digest == expected, ErrorCode::stale_cache,
          "config digest mismatch in " + origin + " (expected " + expected +
              ", found " + (file.config_digest.empty() ? "<none>" : file.config_digest) +
              ")");
}

}  // namespace xaiens::csvio
