#include <gtest/gtest.h>

#include <random>

#include "vibetune/decimal.hpp"

using vibetune::Decimal;
using vibetune::Errc;
using vibetune::Error;

TEST(Decimal, ParsesAndPrintsCanonically) {
  EXPECT_EQ(Decimal::parse("0.007").to_string(), "0.007");
  EXPECT_EQ(Decimal::parse("1000.500").to_string(), "1000.5");
  EXPECT_EQ(Decimal::parse("-12").to_string(), "-12");
  EXPECT_EQ(Decimal::parse("+3.0").to_string(), "3");
  EXPECT_EQ(Decimal::parse("0").to_string(), "0");
}

TEST(Decimal, RejectsMalformedText) {
  for (const char* bad : {"", "-", "1.2.3", "abc", "1e3", " 1"}) {
    try {
      Decimal::parse(bad);
      FAIL() << "accepted '" << bad << "'";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidDecimal);
    }
  }
}

TEST(Decimal, EqualityIgnoresTrailingZeros) {
  EXPECT_EQ(Decimal::parse("1.50"), Decimal::parse("1.5"));
  EXPECT_EQ(Decimal::parse("1000"), Decimal(1000));
  EXPECT_LT(Decimal::parse("999.999"), Decimal(1000));
  EXPECT_GT(Decimal::parse("1000.01"), Decimal(1000));
}

TEST(Decimal, ArithmeticIsExact) {
  // 0.1 + 0.2 is the classic binary rounding case.
  EXPECT_EQ(Decimal::parse("0.1") + Decimal::parse("0.2"), Decimal::parse("0.3"));
  EXPECT_EQ((Decimal::parse("1000") * Decimal::parse("0.007") * Decimal(4)).to_string(), "28");
  EXPECT_EQ((Decimal::parse("1.5") - Decimal::parse("2.25")).to_string(), "-0.75");
}

TEST(Decimal, RepeatedSumMatchesIntegerOracle) {
  // Sum of k/1000 for random k, compared against the integer sum of k.
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> dist(0, 10'000'000);
  Decimal total;
  std::int64_t milli = 0;
  for (int i = 0; i < 5000; ++i) {
    const std::int64_t k = dist(rng);
    milli += k;
    total += Decimal::from_parts(k, 3);
  }
  EXPECT_EQ(total, Decimal::from_parts(milli, 3));
}

TEST(Decimal, FromDoubleRoundsHalfAwayFromZero) {
  EXPECT_EQ(Decimal::from_double(1.2345, 3).to_string(), "1.235");
  EXPECT_EQ(Decimal::from_double(-0.5, 0).to_string(), "-1");
  EXPECT_THROW(Decimal::from_double(std::nan(""), 2), Error);
}
