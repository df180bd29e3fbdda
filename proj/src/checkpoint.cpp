#include "pseudolab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pseudolab/error.hpp"
#include "pseudolab/io.hpp"

namespace pseudolab::checkpoint {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}

  void need(std::size_t n, const char* field) {
    if (pos + n > buf.size()) {
      throw FormatError(std::string("checkpoint truncated while reading field '") + field +
                        "' at byte " + std::to_string(pos));
    }
  }
  template <typename T>
  T uint(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T(buf[pos + i]) << (8 * i));
    pos += sizeof(T);
    return v;
  }
  double f64(const char* field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }

  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

[[noreturn]] void bad(const char* field, const std::string& why) {
  throw FormatError(std::string("checkpoint header field '") + field + "' invalid: " + why);
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

std::vector<std::uint8_t> serialize(const Model& model) {
  const ArchDescriptor& a = model.arch();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(kVersion);
  w.uint(static_cast<std::uint8_t>(a.kind));
  w.uint(u32(a.channels));
  w.uint(u32(a.height));
  w.uint(u32(a.width));
  w.uint(u32(a.classes));
  w.uint(u32(a.conv.size()));
  for (const auto& c : a.conv) {
    w.uint(u32(c.out_channels));
    w.uint(u32(c.kernel));
    w.uint(u32(c.stride));
    w.uint(u32(c.padding));
    w.uint(static_cast<std::uint8_t>(c.pool ? 1 : 0));
  }
  w.uint(u32(a.hidden.size()));
  for (auto h : a.hidden) w.uint(u32(h));
  w.uint(u32(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.uint(u32(p.value.rank()));
    for (auto e : p.value.shape()) w.uint(static_cast<std::uint64_t>(e));
    for (double v : p.value.values()) w.f64(v);
  }
  return std::move(w.out);
}

Model deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic, "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) bad("magic", "not a pseudolab checkpoint");
  r.pos = sizeof kMagic;
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kVersion) bad("version", "unsupported format version " + std::to_string(version));

  ArchDescriptor a;
  const auto kind = r.uint<std::uint8_t>("kind");
  if (kind > 1) bad("kind", "unknown model kind " + std::to_string(kind));
  a.kind = static_cast<ModelKind>(kind);
  a.channels = r.uint<std::uint32_t>("channels");
  a.height = r.uint<std::uint32_t>("height");
  a.width = r.uint<std::uint32_t>("width");
  a.classes = r.uint<std::uint32_t>("classes");
  const auto n_conv = r.uint<std::uint32_t>("conv_count");
  if (n_conv > 64) bad("conv_count", std::to_string(n_conv) + " blocks");
  for (std::uint32_t i = 0; i < n_conv; ++i) {
    ConvBlock c;
    c.out_channels = r.uint<std::uint32_t>("conv.out_channels");
    c.kernel = r.uint<std::uint32_t>("conv.kernel");
    c.stride = r.uint<std::uint32_t>("conv.stride");
    c.padding = r.uint<std::uint32_t>("conv.padding");
    const auto pool = r.uint<std::uint8_t>("conv.pool");
    if (pool > 1) bad("conv.pool", "flag must be 0 or 1");
    c.pool = pool == 1;
    a.conv.push_back(c);
  }
  const auto n_hidden = r.uint<std::uint32_t>("hidden_count");
  if (n_hidden > 64) bad("hidden_count", std::to_string(n_hidden) + " layers");
  for (std::uint32_t i = 0; i < n_hidden; ++i) a.hidden.push_back(r.uint<std::uint32_t>("hidden"));

  Rng rng(0);
  Model model = [&] {
    try {
      return Model(a, rng);
    } catch (const Error& e) {
      bad("architecture", e.what());
    }
  }();

  const auto n_params = r.uint<std::uint32_t>("param_count");
  if (n_params != model.parameters().size()) {
    bad("param_count", std::to_string(n_params) + " tensors, architecture needs " +
                           std::to_string(model.parameters().size()));
  }
  for (auto& p : model.parameters()) {
    const auto rank = r.uint<std::uint32_t>("param.rank");
    if (rank != p.value.rank()) bad("param.rank", p.name + " has rank " + std::to_string(rank));
    for (std::size_t d = 0; d < rank; ++d) {
      const auto e = r.uint<std::uint64_t>("param.shape");
      if (e != p.value.dim(d)) bad("param.shape", p.name + " extent mismatch on axis " + std::to_string(d));
    }
    for (auto& v : p.value.values()) v = r.f64("param.data");
    if (!p.value.all_finite()) bad("param.data", p.name + " holds non-finite values");
  }
  if (r.pos != bytes.size()) bad("trailer", std::to_string(bytes.size() - r.pos) + " unexpected trailing bytes");
  return model;
}

void save(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  io::write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Model load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace pseudolab::checkpoint
