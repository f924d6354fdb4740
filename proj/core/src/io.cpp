#include "trajtok/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace trajtok::io {
namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& path;
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) fail(path, "truncated (wanted " + std::to_string(n) + " more bytes)");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
};

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(path, "write failed");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return std::move(ss).str();
}

std::string header_bytes(Dtype dtype, const Shape& shape) {
  std::string out;
  out += "TTKT";
  put_u32(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (long long d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor file dims must be positive");
    put_u64(out, static_cast<std::uint64_t>(d));
  }
  return out;
}

struct Header {
  Dtype dtype;
  Shape shape;
  long long numel;
};

Header read_header(Reader& r) {
  r.need(4);
  if (r.buf.compare(r.pos, 4, "TTKT") != 0) fail(r.path, "bad magic (not a tensor file)");
  r.pos += 4;
  const std::uint32_t version = r.u32();
  if (version != kTensorFileVersion)
    fail(r.path, "unsupported version " + std::to_string(version) + " (expected " +
                     std::to_string(kTensorFileVersion) + ")");
  const std::uint32_t dt = r.u32();
  if (dt < 1 || dt > 3) fail(r.path, "unknown dtype code " + std::to_string(dt));
  const std::uint32_t rank = r.u32();
  if (rank > 8) fail(r.path, "implausible rank " + std::to_string(rank));
  Header h;
  h.dtype = static_cast<Dtype>(dt);
  h.numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    if (d == 0 || d > (1ull << 40)) fail(r.path, "implausible dim " + std::to_string(d));
    h.shape.push_back(static_cast<long long>(d));
    h.numel *= static_cast<long long>(d);
  }
  return h;
}

void check_payload(const Reader& r, const Header& h, size_t elem_size) {
  const size_t want = static_cast<size_t>(h.numel) * elem_size;
  if (r.buf.size() - r.pos != want)
    fail(r.path, "payload size mismatch: have " + std::to_string(r.buf.size() - r.pos) + " bytes, want " +
                     std::to_string(want));
}

}  // namespace

void write_tensor_f64(const std::string& path, const Tensor& t) {
  std::string out = header_bytes(Dtype::f64, t.shape());
  out.reserve(out.size() + static_cast<size_t>(t.size()) * 8);
  for (long long i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
  write_file(path, out);
}

void write_tensor_f32(const std::string& path, const Tensor& t) {
  std::string out = header_bytes(Dtype::f32, t.shape());
  out.reserve(out.size() + static_cast<size_t>(t.size()) * 4);
  for (long long i = 0; i < t.size(); ++i)
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])));
  write_file(path, out);
}

void write_tensor_i32(const std::string& path, const Shape& shape, const std::vector<std::int32_t>& values) {
  long long n = 1;
  for (long long d : shape) n *= d;
  if (n != static_cast<long long>(values.size()))
    throw std::invalid_argument("tensor file value count does not match shape");
  std::string out = header_bytes(Dtype::i32, shape);
  out.reserve(out.size() + values.size() * 4);
  for (std::int32_t v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  write_file(path, out);
}

TensorFileInfo probe_tensor(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{path, buf};
  Header h = read_header(r);
  return TensorFileInfo{h.dtype, h.shape};
}

Tensor read_tensor_f64(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{path, buf};
  Header h = read_header(r);
  if (h.dtype != Dtype::f64) fail(path, "expected float64 payload");
  check_payload(r, h, 8);
  std::vector<double> v(static_cast<size_t>(h.numel));
  for (long long i = 0; i < h.numel; ++i) v[static_cast<size_t>(i)] = std::bit_cast<double>(r.u64());
  return Tensor::from(std::move(h.shape), std::move(v));
}

Tensor read_tensor_f32(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{path, buf};
  Header h = read_header(r);
  if (h.dtype != Dtype::f32) fail(path, "expected float32 payload");
  check_payload(r, h, 4);
  std::vector<double> v(static_cast<size_t>(h.numel));
  for (long long i = 0; i < h.numel; ++i)
    v[static_cast<size_t>(i)] = static_cast<double>(std::bit_cast<float>(r.u32()));
  return Tensor::from(std::move(h.shape), std::move(v));
}

std::vector<std::int32_t> read_tensor_i32(const std::string& path, Shape& shape_out) {
  const std::string buf = read_file(path);
  Reader r{path, buf};
  Header h = read_header(r);
  if (h.dtype != Dtype::i32) fail(path, "expected int32 payload");
  check_payload(r, h, 4);
  std::vector<std::int32_t> v(static_cast<size_t>(h.numel));
  for (long long i = 0; i < h.numel; ++i) v[static_cast<size_t>(i)] = std::bit_cast<std::int32_t>(r.u32());
  shape_out = std::move(h.shape);
  return v;
}

void write_pgm(const std::string& path, long long h, long long w, const std::vector<std::uint8_t>& pixels) {
  if (h <= 0 || w <= 0 || pixels.size() != static_cast<size_t>(h * w))
    throw std::invalid_argument("pgm: pixel count does not match dimensions");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_file(path, out);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, long long& h_out, long long& w_out) {
  const std::string buf = read_file(path);
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    const size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) fail(path, "truncated pgm header");
    return buf.substr(start, pos - start);
  };
  if (token() != "P5") fail(path, "not a binary pgm");
  const long long w = std::stoll(token());
  const long long h = std::stoll(token());
  if (token() != "255") fail(path, "unsupported pgm maxval");
  ++pos;  // the single whitespace byte after maxval
  if (buf.size() - pos != static_cast<size_t>(h * w)) fail(path, "pgm payload size mismatch");
  h_out = h;
  w_out = w;
  return std::vector<std::uint8_t>(buf.begin() + static_cast<long long>(pos), buf.end());
}

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

void append_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) fail(path, "cannot open for append");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail(path, "write failed");
}

std::string read_text(const std::string& path) { return read_file(path); }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_metric_line(std::uint64_t step, const std::vector<std::pair<std::string, double>>& kv) {
  std::string line = "step=" + std::to_string(step);
  for (const auto& [k, v] : kv) {
    line += " ";
    line += k;
    line += "=";
    line += format_double(v);
  }
  line += "\n";
  return line;
}

void save_checkpoint(const std::string& dir, const Checkpoint& c) {
  fs::create_directories(fs::path(dir) / "params");
  const bool moments = !c.opt_m.empty();
  if (moments) {
    if (c.opt_m.size() != c.params.size() || c.opt_v.size() != c.params.size())
      throw std::invalid_argument("checkpoint: optimizer moments must parallel the parameter list");
    fs::create_directories(fs::path(dir) / "optim");
  }
  std::string index;
  for (size_t i = 0; i < c.params.size(); ++i) {
    const auto& [name, tensor] = c.params[i];
    index += name;
    index += "\n";
    write_tensor_f64((fs::path(dir) / "params" / (name + ".ttk")).string(), tensor);
    if (moments) {
      write_tensor_f64((fs::path(dir) / "optim" / ("m_" + name + ".ttk")).string(), c.opt_m[i].second);
      write_tensor_f64((fs::path(dir) / "optim" / ("v_" + name + ".ttk")).string(), c.opt_v[i].second);
    }
  }
  write_text((fs::path(dir) / "index.txt").string(), index);
  write_text((fs::path(dir) / "meta.txt").string(), c.meta);
  write_text((fs::path(dir) / "config.cfg").string(), c.config_text);
}

Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint c;
  const std::string index = read_text((fs::path(dir) / "index.txt").string());
  std::istringstream lines(index);
  std::string name;
  const bool moments = fs::exists(fs::path(dir) / "optim");
  while (std::getline(lines, name)) {
    if (name.empty()) continue;
    const fs::path p = fs::path(dir) / "params" / (name + ".ttk");
    if (!fs::exists(p)) throw std::runtime_error("checkpoint: parameter '" + name + "' listed in index but missing");
    c.params.emplace_back(name, read_tensor_f64(p.string()));
    if (moments) {
      c.opt_m.emplace_back(name, read_tensor_f64((fs::path(dir) / "optim" / ("m_" + name + ".ttk")).string()));
      c.opt_v.emplace_back(name, read_tensor_f64((fs::path(dir) / "optim" / ("v_" + name + ".ttk")).string()));
    }
  }
  c.meta = read_text((fs::path(dir) / "meta.txt").string());
  c.config_text = read_text((fs::path(dir) / "config.cfg").string());
  return c;
}

}  // namespace trajtok::io
