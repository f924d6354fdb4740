#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "trajtok/io.hpp"
#include "trajtok/rng.hpp"

using namespace trajtok;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "trajtok_io_test";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor noisy_tensor(Shape shape, std::uint64_t seed) {
  long long n = 1;
  for (long long d : shape) n *= d;
  CounterRng rng(seed);
  std::vector<double> v(static_cast<size_t>(n));
  for (long long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = rng.uniform(static_cast<std::uint64_t>(i), -10, 10);
  // sprinkle in exact edge values
  if (n >= 4) {
    v[0] = 0.0;
    v[1] = -0.0;
    v[2] = 1e-300;
    v[3] = -3.0;
  }
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("io-tensorfile") {

TEST_CASE("f64 round-trip is bit-exact") {
  const fs::path dir = temp_dir();
  Tensor t = noisy_tensor({3, 4, 5}, 1);
  const std::string p = (dir / "a.ttk").string();
  io::write_tensor_f64(p, t);
  Tensor back = io::read_tensor_f64(p);
  REQUIRE(back.shape() == t.shape());
  for (long long i = 0; i < t.size(); ++i) {
    const double x = t.data()[i], y = back.data()[i];
    CHECK(std::memcmp(&x, &y, 8) == 0);
  }
  CHECK(io::probe_tensor(p).dtype == io::Dtype::f64);
}

TEST_CASE("f32 round-trip preserves float32 payloads exactly") {
  const fs::path dir = temp_dir();
  Tensor t = noisy_tensor({7}, 2);
  const std::string p = (dir / "b.ttk").string();
  io::write_tensor_f32(p, t);
  Tensor once = io::read_tensor_f32(p);
  io::write_tensor_f32((dir / "c.ttk").string(), once);
  Tensor twice = io::read_tensor_f32((dir / "c.ttk").string());
  for (long long i = 0; i < t.size(); ++i) {
    CHECK(once.data()[i] == twice.data()[i]);
    CHECK(once.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
  }
}

TEST_CASE("i32 round-trip") {
  const fs::path dir = temp_dir();
  std::vector<std::int32_t> v = {0, -1, 2147483647, -2147483648, 42};
  const std::string p = (dir / "d.ttk").string();
  io::write_tensor_i32(p, {5}, v);
  Shape s;
  CHECK(io::read_tensor_i32(p, s) == v);
  CHECK(s == Shape{5});
}

TEST_CASE("header bytes are pinned little-endian") {
  const fs::path dir = temp_dir();
  const std::string p = (dir / "h.ttk").string();
  io::write_tensor_f64(p, Tensor::zeros({2, 3}));
  const std::string raw = io::read_text(p);
  REQUIRE(raw.size() == 4 + 4 + 4 + 4 + 16 + 48);
  CHECK(raw.compare(0, 4, "TTKT") == 0);
  const unsigned char want[] = {
      1, 0, 0, 0,              // version
      2, 0, 0, 0,              // dtype f64
      2, 0, 0, 0,              // rank
      2, 0, 0, 0, 0, 0, 0, 0,  // dim 0
      3, 0, 0, 0, 0, 0, 0, 0,  // dim 1
  };
  CHECK(std::memcmp(raw.data() + 4, want, sizeof(want)) == 0);
}

TEST_CASE("malformed files are rejected with the path named") {
  const fs::path dir = temp_dir();
  auto expect_reject = [&](const std::string& name, const std::string& bytes) {
    const std::string p = (dir / name).string();
    io::write_text(p, bytes);
    try {
      io::read_tensor_f64(p);
      FAIL("expected rejection for ", name);
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(name) != std::string::npos);
    }
  };
  const std::string good = [&] {
    const std::string p = (dir / "ok.ttk").string();
    io::write_tensor_f64(p, Tensor::zeros({2}));
    return io::read_text(p);
  }();
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  expect_reject("bad_magic.ttk", bad_magic);
  expect_reject("truncated.ttk", good.substr(0, good.size() - 3));
  expect_reject("trailing.ttk", good + "zz");
  std::string bad_version = good;
  bad_version[4] = 9;
  expect_reject("bad_version.ttk", bad_version);
  std::string bad_dtype = good;
  bad_dtype[8] = 7;
  expect_reject("bad_dtype.ttk", bad_dtype);
  expect_reject("wrong_dtype.ttk", [&] {
    const std::string p = (dir / "i32src.ttk").string();
    io::write_tensor_i32(p, {1}, {5});
    return io::read_text(p);
  }());
}

}  // TEST_SUITE

TEST_SUITE("io-pgm") {

TEST_CASE("round-trip and pinned header") {
  const fs::path dir = temp_dir();
  std::vector<std::uint8_t> pix = {0, 1, 2, 3, 4, 255};
  const std::string p = (dir / "m.pgm").string();
  io::write_pgm(p, 2, 3, pix);
  const std::string raw = io::read_text(p);
  CHECK(raw.compare(0, 9, "P5\n3 2\n25") == 0);
  long long h = 0, w = 0;
  CHECK(io::read_pgm(p, h, w) == pix);
  CHECK(h == 2);
  CHECK(w == 3);
  CHECK_THROWS_AS(io::write_pgm(p, 2, 2, pix), std::invalid_argument);
}

}  // TEST_SUITE

TEST_SUITE("io-text") {

TEST_CASE("format_double is the shortest round-trip form") {
  CHECK(io::format_double(0.5) == "0.5");
  CHECK(io::format_double(1e-06) == "1e-06");
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(3.0) == "3");
  const double third = 1.0 / 3.0;
  const std::string s = io::format_double(third);
  CHECK(std::stod(s) == third);
}

TEST_CASE("metric lines are exact") {
  CHECK(io::format_metric_line(12, {{"loss", 0.5}, {"miou", 0.25}}) == "step=12 loss=0.5 miou=0.25\n");
  CHECK(io::format_metric_line(0, {}) == "step=0\n");
}

TEST_CASE("append builds files incrementally") {
  const fs::path dir = temp_dir();
  const std::string p = (dir / "log.txt").string();
  io::write_text(p, "a\n");
  io::append_text(p, "b\n");
  CHECK(io::read_text(p) == "a\nb\n");
}

}  // TEST_SUITE

TEST_SUITE("io-checkpoint") {

TEST_CASE("round-trip with optimizer moments is bit-exact") {
  const fs::path dir = temp_dir();
  io::Checkpoint c;
  c.params.emplace_back("enc.w", noisy_tensor({4, 3}, 10));
  c.params.emplace_back("enc.b", noisy_tensor({3}, 11));
  c.params.emplace_back("seg.queries", noisy_tensor({2, 3}, 12));
  for (const auto& [name, t] : c.params) {
    c.opt_m.emplace_back(name, noisy_tensor(t.shape(), 100));
    c.opt_v.emplace_back(name, noisy_tensor(t.shape(), 200));
  }
  c.meta = "step = 5\n";
  c.config_text = "[train]\nsteps = 5\n";
  const std::string root = (dir / "ckpt").string();
  io::save_checkpoint(root, c);
  io::Checkpoint back = io::load_checkpoint(root);
  REQUIRE(back.params.size() == 3);
  REQUIRE(back.opt_m.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.params[i].first == c.params[i].first);
    for (long long j = 0; j < c.params[i].second.size(); ++j) {
      CHECK(back.params[i].second.data()[j] == c.params[i].second.data()[j]);
      CHECK(back.opt_m[i].second.data()[j] == c.opt_m[i].second.data()[j]);
      CHECK(back.opt_v[i].second.data()[j] == c.opt_v[i].second.data()[j]);
    }
  }
  CHECK(back.meta == c.meta);
  CHECK(back.config_text == c.config_text);
}

TEST_CASE("moments are optional") {
  const fs::path dir = temp_dir();
  io::Checkpoint c;
  c.params.emplace_back("w", noisy_tensor({2}, 1));
  c.meta = "";
  c.config_text = "";
  io::save_checkpoint((dir / "ck").string(), c);
  io::Checkpoint back = io::load_checkpoint((dir / "ck").string());
  CHECK(back.params.size() == 1);
  CHECK(back.opt_m.empty());
}

TEST_CASE("a parameter listed in the index but missing on disk is named") {
  const fs::path dir = temp_dir();
  io::Checkpoint c;
  c.params.emplace_back("present", noisy_tensor({2}, 1));
  c.params.emplace_back("ghost", noisy_tensor({2}, 2));
  const std::string root = (dir / "ck2").string();
  io::save_checkpoint(root, c);
  fs::remove(fs::path(root) / "params" / "ghost.ttk");
  try {
    io::load_checkpoint(root);
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

}  // TEST_SUITE
