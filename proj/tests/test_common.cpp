#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avsync/common.hpp"

#include <set>

using namespace avsync;

TEST_CASE("rng is deterministic for a given seed") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng streams from different seeds differ") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
}

TEST_CASE("fork yields an independent stream, not a shifted copy") {
  Rng parent(7);
  Rng child = parent.fork(1);
  Rng parent2(7);
  // Forking must not disturb the parent.
  CHECK(parent.next_u64() == parent2.next_u64());
  // Child stream differs from both the parent and a differently salted fork.
  Rng child2 = parent2.fork(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t c = child.next_u64();
    same += c == child2.next_u64();
  }
  CHECK(same == 0);
}

TEST_CASE("uniform stays in [0, 1) and covers both halves") {
  Rng rng(3);
  int low = 0, high = 0;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    (u < 0.5 ? low : high)++;
  }
  CHECK(low > 300);
  CHECK(high > 300);
}

TEST_CASE("uniform_index covers the full range and nothing else") {
  Rng rng(11);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t v = rng.uniform_index(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("normal has roughly zero mean and unit variance") {
  Rng rng(5);
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("random_normal is seeded and shaped") {
  Rng a(9), b(9);
  MatX m1 = random_normal(4, 3, 0.5, a);
  MatX m2 = random_normal(4, 3, 0.5, b);
  CHECK(m1.rows() == 4);
  CHECK(m1.cols() == 3);
  CHECK(m1 == m2);
}

TEST_CASE("fnv1a matches the published 64-bit test vectors") {
  // Offset basis for the empty string; "a" from the reference FNV-1a tables.
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("segment span validity") {
  SegmentSpan s;
  s.t = 0;
  s.k = 5;
  CHECK(s.end() == 5);
  CHECK(s.valid_for(5));
  CHECK(s.valid_for(50));
  CHECK_FALSE(s.valid_for(4));
  s.t = 46;
  CHECK_FALSE(s.valid_for(50));
  s.t = 45;
  CHECK(s.valid_for(50));
  s.k = 0;
  CHECK_FALSE(s.valid_for(50));
  s.t = -1;
  s.k = 5;
  CHECK_FALSE(s.valid_for(50));
}

TEST_CASE("error types carry their kind in the message") {
  try {
    throw ZeroNormRow("row 3");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "ZeroNormRow: row 3");
  }
}
