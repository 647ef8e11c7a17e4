#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>  // vendored nlohmann/json
#include "orps/errors.hpp"

namespace orps {

using json = nlohmann::json;

// Guest code and runner messages can hold arbitrary bytes; invalid UTF-8 is
// replaced rather than aborting serialization.
inline std::string dump_json(const json& doc, int indent = -1) {
  return doc.dump(indent, ' ', false, json::error_handler_t::replace);
}

// Write-then-rename so readers never observe a partial document.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline json read_json_file(const std::filesystem::path& path) {
  return json::parse(read_file(path));
}

inline void write_json_file(const std::filesystem::path& path, const json& doc) {
  write_file_atomic(path, dump_json(doc, 2) + "\n");
}

}  // namespace orps
