#include <catch2/catch_amalgamated.hpp>

#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"

using namespace metadiv;

TEST_CASE("rng determinism and ranges") {
  Rng a(12345), b(12345);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  for (int i = 0; i < 10000; ++i) {
    double v = r.uniform(-2.0, 3.0);
    REQUIRE(v >= -2.0);
    REQUIRE(v <= 3.0);
  }
  for (int i = 0; i < 10000; ++i) REQUIRE(std::isfinite(r.normal()));
  for (int i = 0; i < 1000; ++i) REQUIRE(r.below(17) < 17);
}

TEST_CASE("rng normal moments are roughly standard") {
  Rng r(99);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sum2 += x * x;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.02);
  REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("derive_seed separates streams and indices") {
  REQUIRE(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  REQUIRE(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  REQUIRE(derive_seed(1, 2, 3) != derive_seed(1, 3, 3));
  REQUIRE(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("byte writer/reader round trip") {
  ByteWriter w;
  w.put_u8(0xAB);
  w.put_u16(0x1234);
  w.put_u32(0xDEADBEEF);
  w.put_u64(0x0123456789ABCDEFULL);
  w.put_i64(-42);
  w.put_f64(-0.1);
  w.put_f64(std::numeric_limits<double>::infinity());
  w.put_string("hello");

  ByteReader r(w.bytes());
  REQUIRE(r.get_u8() == 0xAB);
  REQUIRE(r.get_u16() == 0x1234);
  REQUIRE(r.get_u32() == 0xDEADBEEF);
  REQUIRE(r.get_u64() == 0x0123456789ABCDEFULL);
  REQUIRE(r.get_i64() == -42);
  REQUIRE(r.get_f64() == -0.1);
  REQUIRE(r.get_f64() == std::numeric_limits<double>::infinity());
  REQUIRE(r.get_string() == "hello");
  REQUIRE(r.remaining() == 0);
}

TEST_CASE("byte layout is little-endian") {
  ByteWriter w;
  w.put_u32(0x01020304);
  REQUIRE(w.bytes()[0] == 0x04);
  REQUIRE(w.bytes()[1] == 0x03);
  REQUIRE(w.bytes()[2] == 0x02);
  REQUIRE(w.bytes()[3] == 0x01);
}

TEST_CASE("reader throws on overrun") {
  ByteWriter w;
  w.put_u16(7);
  ByteReader r(w.bytes());
  r.get_u8();
  REQUIRE_THROWS_AS(r.get_u32(), CorruptFile);
}

TEST_CASE("fnv1a64 reference values") {
  // reference vectors for 64-bit FNV-1a
  REQUIRE(fnv1a64("") == 0xcbf29ce484222325ULL);
  REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  REQUIRE(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}
