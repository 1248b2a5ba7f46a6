#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "renetseg/checkpoint.hpp"
#include "renetseg/error.hpp"
#include "renetseg/rng.hpp"
#include "renetseg/tensor.hpp"

using namespace renetseg;

namespace {

// Reference xorshift64*, written independently of the library.
struct RefXorshift {
  std::uint64_t s;
  double next() {
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    const unsigned __int128 wide = static_cast<unsigned __int128>(s) * 2685821657736338717ull;
    const auto out = static_cast<std::uint64_t>(wide);
    return std::ldexp(static_cast<double>(out >> 11), -53);
  }
};

template <typename F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::io;
}

std::uint32_t bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (bits(a[i]) != bits(b[i])) return false;
  }
  return true;
}

}  // namespace

TEST(TensorCreate, ZeroFill) {
  const Tensor t = tensor_create({2, 2}, 0.0f);
  ASSERT_EQ(t.size(), 4u);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(TensorCreate, ConstantFill) {
  const Tensor t = tensor_create({3}, 1.5f);
  EXPECT_EQ(t.shape(), (Shape{3}));
  for (float v : t.data()) EXPECT_EQ(v, 1.5f);
}

TEST(TensorCreate, DegenerateShapes) {
  EXPECT_EQ(error_code([] { tensor_create({2, 0}, 0.0f); }), Errc::invalid_shape);
  EXPECT_EQ(error_code([] { tensor_create({}, 0.0f); }), Errc::invalid_shape);
}

TEST(TensorCreate, RandomShapesKeepLengthInvariant) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Shape shape(1 + rng.next_index(4));
    std::size_t expected = 1;
    for (auto& d : shape) {
      d = 1 + rng.next_index(6);
      expected *= d;
    }
    const Tensor t = tensor_create(shape, 2.0f);
    EXPECT_EQ(t.size(), expected);
    EXPECT_EQ(t.shape(), shape);
  }
}

TEST(TensorCreate, DataLengthMismatch) {
  EXPECT_EQ(error_code([] { Tensor({2, 2}, std::vector<float>(3)); }), Errc::shape_mismatch);
}

TEST(Rng, FirstValuesForSeedOne) {
  const RngStep a = rng_next(1);
  EXPECT_EQ(a.state, 0x2000001ull);
  EXPECT_EQ(a.value, std::ldexp(static_cast<double>(0x47e4ce4b896cdd1dull >> 11), -53));
  const RngStep b = rng_next(a.state);
  EXPECT_EQ(b.state, 0x4004000802801ull);
  EXPECT_NEAR(b.value, 0.6711372530266764, 1e-16);
}

TEST(Rng, ZeroSeedRejected) {
  EXPECT_EQ(error_code([] { rng_next(0); }), Errc::invalid_seed);
  EXPECT_EQ(error_code([] { Rng r(0); }), Errc::invalid_seed);
}

TEST(Rng, MatchesReferenceForAMillionDraws) {
  for (std::uint64_t seed : {1ull, 42ull, 0xdeadbeefcafef00dull}) {
    RefXorshift ref{seed};
    Rng a(seed), b(seed);
    for (int i = 0; i < 1000000; ++i) {
      const double v = a.next_double();
      ASSERT_EQ(v, ref.next()) << "seed " << seed << " draw " << i;
      ASSERT_EQ(v, b.next_double());
      ASSERT_GE(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
  }
}

TEST(Rng, NextIndexInRange) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.next_index(7), 7u);
  EXPECT_EQ(error_code([&] { rng.next_index(0); }), Errc::invalid_argument);
}

TEST(Glorot, UnitBound) {
  Rng rng(3);
  const Tensor t = glorot_init({50, 40}, 3, 3, rng);
  for (float v : t.data()) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Glorot, ConsumesDrawsInRowMajorOrder) {
  Rng a(17), b(17);
  const Tensor t = glorot_init({2, 3}, 4, 2, a);
  const double bound = std::sqrt(6.0 / 6.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i], static_cast<float>((2.0 * b.next_double() - 1.0) * bound));
  }
  EXPECT_EQ(a.state(), b.state());
}

TEST(Glorot, Deterministic) {
  Rng a(8), b(8);
  EXPECT_TRUE(bit_identical(glorot_init({4, 4, 3, 2}, 48, 32, a),
                            glorot_init({4, 4, 3, 2}, 48, 32, b)));
}

TEST(Glorot, SampleMeanNearZero) {
  Rng rng(2024);
  const Tensor t = glorot_init({100000}, 3, 3, rng);
  double sum = 0.0;
  for (float v : t.data()) sum += v;
  EXPECT_NEAR(sum / 1e5, 0.0, 0.01);
}

TEST(Glorot, ZeroFans) {
  Rng rng(1);
  EXPECT_EQ(error_code([&] { glorot_init({2}, 0, 3, rng); }), Errc::invalid_argument);
  EXPECT_EQ(error_code([&] { glorot_init({2}, 3, 0, rng); }), Errc::invalid_argument);
}

TEST(HeUniform, BoundAndDrawOrder) {
  Rng a(21), b(21);
  const Tensor t = he_uniform_init({3, 3, 4, 5}, 36, a);
  const double bound = std::sqrt(6.0 / 36.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i], static_cast<float>((2.0 * b.next_double() - 1.0) * bound));
    EXPECT_GE(t[i], -bound);
    EXPECT_LT(t[i], bound);
  }
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(error_code([&] { he_uniform_init({2}, 0, a); }), Errc::invalid_argument);
}

TEST(Checkpoint, EmptyIsTwelveBytes) {
  const auto bytes = checkpoint_bytes({});
  ASSERT_EQ(bytes.size(), 12u);
  const std::uint8_t expected[12] = {'R', 'S', 'E', 'G', 1, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_TRUE(std::equal(bytes.begin(), bytes.end(), expected));
}

TEST(Checkpoint, ExactLayoutOfOneEntry) {
  Checkpoint c;
  c.entries.push_back({"w", Tensor({2, 2}, {1.0f, -2.0f, 0.5f, 3.25f})});
  std::ostringstream out;
  const std::size_t n = save_checkpoint(c, out);
  const std::string s = out.str();
  ASSERT_EQ(n, s.size());
  // header 12 + name len 4 + name 1 + rank 4 + dims 8 + data 16
  ASSERT_EQ(s.size(), 45u);
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at])) |
           static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 3])) << 24;
  };
  EXPECT_EQ(u32(8), 1u);
  EXPECT_EQ(u32(12), 1u);
  EXPECT_EQ(s[16], 'w');
  EXPECT_EQ(u32(17), 2u);
  EXPECT_EQ(u32(21), 2u);
  EXPECT_EQ(u32(25), 2u);
  EXPECT_EQ(u32(29), bits(1.0f));
  EXPECT_EQ(u32(33), bits(-2.0f));
  EXPECT_EQ(u32(41), bits(3.25f));
}

TEST(Checkpoint, RoundtripIsBitExact) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Checkpoint c;
    const std::size_t count = rng.next_index(5);
    for (std::size_t e = 0; e < count; ++e) {
      Shape shape(1 + rng.next_index(4));
      for (auto& d : shape) d = 1 + rng.next_index(5);
      Tensor t(shape);
      for (float& v : t.data()) v = static_cast<float>(rng.next_gaussian() * 1e3);
      if (e == 0 && t.size() > 1) t[0] = -0.0f;
      c.entries.push_back({"entry" + std::to_string(e), std::move(t)});
    }
    const Checkpoint back = checkpoint_from_bytes(checkpoint_bytes(c));
    ASSERT_EQ(back.entries.size(), c.entries.size());
    for (std::size_t e = 0; e < count; ++e) {
      EXPECT_EQ(back.entries[e].name, c.entries[e].name);
      EXPECT_TRUE(bit_identical(back.entries[e].tensor, c.entries[e].tensor));
    }
  }
}

TEST(Checkpoint, FindByName) {
  Checkpoint c;
  c.entries.push_back({"a", tensor_create({1}, 1.0f)});
  c.entries.push_back({"b", tensor_create({1}, 2.0f)});
  ASSERT_NE(c.find("b"), nullptr);
  EXPECT_EQ((*c.find("b"))[0], 2.0f);
  EXPECT_EQ(c.find("z"), nullptr);
}

TEST(Checkpoint, DistinctParseErrors) {
  auto good = checkpoint_bytes([] {
    Checkpoint c;
    c.entries.push_back({"x", tensor_create({3}, 1.0f)});
    return c;
  }());

  auto magic = good;
  std::memcpy(magic.data(), "XXXX", 4);
  EXPECT_EQ(error_code([&] { checkpoint_from_bytes(magic); }), Errc::bad_magic);

  auto version = good;
  version[4] = 2;
  EXPECT_EQ(error_code([&] { checkpoint_from_bytes(version); }), Errc::bad_version);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, good.size() - 1}) {
    std::vector<std::uint8_t> shorter(good.begin(), good.begin() + static_cast<long>(cut));
    EXPECT_EQ(error_code([&] { checkpoint_from_bytes(shorter); }), Errc::truncated) << cut;
  }
}

TEST(Checkpoint, DuplicateNames) {
  Checkpoint c;
  c.entries.push_back({"a", tensor_create({1}, 1.0f)});
  c.entries.push_back({"a", tensor_create({1}, 2.0f)});
  EXPECT_EQ(error_code([&] { checkpoint_bytes(c); }), Errc::invalid_argument);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_EQ(error_code([] { load_checkpoint_file("/nonexistent/model.bin"); }), Errc::io);
}
