#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avsync/tensorio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace avsync;
using namespace avsync::tensorio;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("container round-trips every entry kind") {
  Container c;
  c.add(Entry::from_string("name", "fixture-c0-v1"));
  c.add(Entry::from_scalar_i64("count", -42));
  c.add(Entry::from_scalar_f64("rate", 3.25));

  MatX m(2, 3);
  m << 1.5, -2.0, 0.0, 4.0, 5.5, -6.25;
  c.add(Entry::from_matrix_f64("weights", m));
  c.add(Entry::from_matrix_f32("weights32", m));

  VecX v(4);
  v << 0.1, -0.2, 0.3, -0.4;
  c.add(Entry::from_vector_f64("audio", v));

  std::vector<Frame> frames(2, Frame(4, 5));
  frames[0].planes[0](1, 2) = 200;
  frames[1].planes[2](3, 4) = 17;
  c.add(Entry::from_frames("video", frames));

  const std::string path = temp_path("avsync-test-roundtrip.avc");
  write_container(path, c);
  Container back = read_container(path);
  std::filesystem::remove(path);

  CHECK(back.require("name").as_string() == "fixture-c0-v1");
  CHECK(back.require("count").as_scalar_i64() == -42);
  CHECK(back.require("rate").as_scalar_f64() == 3.25);
  CHECK(back.require("weights").as_matrix() == m);
  // f32 payloads round through float precision; these values are exact there.
  CHECK(back.require("weights32").as_matrix() == m);
  CHECK(back.require("audio").as_vector() == v);

  const std::vector<Frame> rv = back.require("video").as_frames();
  REQUIRE(rv.size() == 2);
  CHECK(bit_equal(rv[0], frames[0]));
  CHECK(bit_equal(rv[1], frames[1]));
}

TEST_CASE("require throws DecodeError for a missing entry") {
  Container c;
  c.add(Entry::from_string("present", "yes"));
  CHECK(c.find("absent") == nullptr);
  CHECK_THROWS_AS(c.require("absent"), DecodeError);
}

TEST_CASE("reader rejects a foreign magic") {
  const std::string path = temp_path("avsync-test-badmagic.avc");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPEnot-a-container-at-all";
  }
  CHECK_THROWS_AS(read_container(path), DecodeError);
  std::filesystem::remove(path);
}

TEST_CASE("reader rejects truncated payloads") {
  Container c;
  MatX m = MatX::Ones(8, 8);
  c.add(Entry::from_matrix_f64("m", m));
  const std::string path = temp_path("avsync-test-trunc.avc");
  write_container(path, c);

  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 16);
  CHECK_THROWS_AS(read_container(path), DecodeError);
  std::filesystem::remove(path);
}

TEST_CASE("missing file raises DecodeError") {
  CHECK_THROWS_AS(read_container(temp_path("avsync-test-nonexistent.avc")),
                  DecodeError);
}

TEST_CASE("dtype sizes") {
  CHECK(dtype_size(DType::u8) == 1);
  CHECK(dtype_size(DType::f32) == 4);
  CHECK(dtype_size(DType::f64) == 8);
  CHECK(dtype_size(DType::i64) == 8);
  CHECK(dtype_size(DType::utf8) == 1);
}

TEST_CASE("element_count multiplies dims") {
  Entry e;
  e.dims = {2, 3, 4};
  CHECK(e.element_count() == 24);
  e.dims = {};
  CHECK(e.element_count() == 1);  // scalar layout
}
