// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace xaiens::csvio {

// Every emitted CSV starts with a `# config_digest=<hex>` comment line so
// downstream stages can verify provenance, then a header row.

void write_csv(const std::filesystem::path& path, const std::string& config_digest,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows,
               const std::vector<std::string>& extra_comments = {});

struct CsvFile {
  std::string config_digest;
  std::vector<std::string> comments;  // without leading "# "
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const std::filesystem::path& path);

/// Errors with a stale-provenance message unless the digests match.
void verify_digest(const CsvFile& file, const std::string& expected,
                   const std::string& origin);

}  // namespace xaiens::csvio
