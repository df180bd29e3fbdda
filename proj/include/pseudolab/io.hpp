#pragma once

#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

namespace pseudolab::io {

// Writes to a sibling temporary file and renames it over `path`, creating the
// parent directory if needed. Readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::vector<unsigned char> read_file(const std::filesystem::path& path);

// Shortest decimal form that round-trips the double.
std::string format_double(double v);

// Accumulates CSV rows; fields are never quoted, so callers pass plain tokens.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);

  template <typename... Fields>
  void row(const Fields&... fields) {
    std::string line;
    (append(line, fields), ...);
    line.back() = '\n';
    body_ += line;
  }
  void raw_line(const std::string& line) { body_ += line + "\n"; }
  const std::string& str() const { return body_; }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, body_); }

 private:
  static void append(std::string& line, const std::string& v) { line += v + ","; }
  static void append(std::string& line, const char* v) { line += std::string(v) + ","; }
  static void append(std::string& line, double v) { line += format_double(v) + ","; }
  template <typename T>
  static void append(std::string& line, T v) requires std::is_integral_v<T> {
    line += std::to_string(v) + ",";
  }

  std::string body_;
};

}  // namespace pseudolab::io
