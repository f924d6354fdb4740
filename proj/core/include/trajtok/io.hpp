#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trajtok/tensor.hpp"

// Bit-exact, byte-order-pinned (little-endian) file formats. TensorFile layout:
//   magic "TTKT" | version u32 | dtype u32 (1=f32, 2=f64, 3=i32) | rank u32 |
//   dims rank*u64 | payload row-major little-endian
namespace trajtok::io {

inline constexpr std::uint32_t kTensorFileVersion = 1;

enum class Dtype : std::uint32_t { f32 = 1, f64 = 2, i32 = 3 };

void write_tensor_f64(const std::string& path, const Tensor& t);
void write_tensor_f32(const std::string& path, const Tensor& t);
void write_tensor_i32(const std::string& path, const Shape& shape, const std::vector<std::int32_t>& values);

struct TensorFileInfo {
  Dtype dtype;
  Shape shape;
};
TensorFileInfo probe_tensor(const std::string& path);

Tensor read_tensor_f64(const std::string& path);
Tensor read_tensor_f32(const std::string& path);  // widened to double
std::vector<std::int32_t> read_tensor_i32(const std::string& path, Shape& shape_out);

// 8-bit binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, long long h, long long w, const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> read_pgm(const std::string& path, long long& h_out, long long& w_out);

void write_text(const std::string& path, const std::string& text);
void append_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
std::string format_metric_line(std::uint64_t step, const std::vector<std::pair<std::string, double>>& kv);

// Checkpoint container: a directory holding
//   index.txt   parameter names, one per line, in canonical order
//   params/<name>.ttk          one f64 TensorFile per parameter
//   optim/m_<name>.ttk, optim/v_<name>.ttk   optional optimizer moments
//   meta.txt    key = value lines (step count etc.)
//   config.cfg  the training configuration text
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> opt_m;  // empty or parallel to params
  std::vector<std::pair<std::string, Tensor>> opt_v;
  std::string meta;
  std::string config_text;
};

void save_checkpoint(const std::string& dir, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace trajtok::io
