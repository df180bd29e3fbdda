#include "pseudolab/io.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <system_error>

#include <unistd.h>

#include "pseudolab/error.hpp"

namespace pseudolab::io {

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::vector<std::string>& header) {
  for (std::size_t i = 0; i < header.size(); ++i) body_ += (i ? "," : "") + header[i];
  body_ += "\n";
}

}  // namespace pseudolab::io
