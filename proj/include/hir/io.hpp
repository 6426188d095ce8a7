#pragma once

#include <string>

namespace hir {

std::string read_file(const std::string& path);

// Writes via a temp file in the same directory plus rename, so readers never
// observe a truncated file.
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace hir
