#include <gtest/gtest.h>

#include <sstream>

#include "memoattn/profile.hpp"

using namespace memoattn;

namespace {

LayerProfile published_layer(double alpha) {
  LayerProfile p;
  p.alpha = alpha;
  p.t_atn_ms = 32.2 + 32.2 + 423.3;
  p.t_overhead_ms = 38.4 + 1.0 + 15.1;
  p.reference_total_tokens = 1000;
  p.reference_seq_len = 128;
  return p;
}

}  // namespace

TEST(Estimate, IdentityAtReferenceTokens) {
  const auto p = published_layer(0.5);
  const auto e = estimate(p, 1000);
  EXPECT_DOUBLE_EQ(e.t_atn_ms, p.t_atn_ms);
  EXPECT_DOUBLE_EQ(e.t_overhead_ms, p.t_overhead_ms);
}

TEST(Estimate, LinearInTokens) {
  const auto p = published_layer(0.5);
  for (std::uint64_t tokens : {1ULL, 250ULL, 2000ULL, 123456ULL}) {
    const auto e = estimate(p, tokens);
    const double ratio = static_cast<double>(tokens) / 1000.0;
    EXPECT_NEAR(e.t_atn_ms, p.t_atn_ms * ratio, 1e-9 * e.t_atn_ms);
    EXPECT_NEAR(e.t_overhead_ms, p.t_overhead_ms * ratio, 1e-9 * e.t_overhead_ms);
  }
  const auto one = estimate(p, 500), two = estimate(p, 1000);
  EXPECT_DOUBLE_EQ(2 * one.t_atn_ms, two.t_atn_ms);
}

TEST(Estimate, QuadraticScalesAttentionBySeqLen) {
  const auto p = published_layer(0.5);
  const auto e = estimate(p, 2000, Scaling::quadratic, 256);
  EXPECT_DOUBLE_EQ(e.t_atn_ms, p.t_atn_ms * 4);
  EXPECT_DOUBLE_EQ(e.t_overhead_ms, p.t_overhead_ms * 2);
  EXPECT_THROW(estimate(p, 2000, Scaling::quadratic, 0), std::invalid_argument);
  auto zero = p;
  zero.reference_total_tokens = 0;
  EXPECT_THROW(estimate(zero, 10), std::invalid_argument);
}

TEST(Decide, ZeroAlphaNeverEnabled) {
  auto p = published_layer(0.0);
  EXPECT_FALSE(decide_layer(p, estimate(p, 1000)));
  p.t_overhead_ms = 0.0;
  EXPECT_FALSE(decide_layer(p, estimate(p, 1000)));
}

TEST(Decide, HandExamples) {
  LayerProfile p;
  p.reference_total_tokens = 1;
  p.alpha = 0.1;
  p.t_atn_ms = 100;
  p.t_overhead_ms = 20;
  EXPECT_FALSE(decide_layer(p, estimate(p, 1)));
  EXPECT_DOUBLE_EQ(performance_benefit(0.1, estimate(p, 1)), -10.0);
  p.alpha = 0.5;
  EXPECT_TRUE(decide_layer(p, estimate(p, 1)));
  p.alpha = 0.2;
  EXPECT_FALSE(decide_layer(p, estimate(p, 1)));
}

TEST(Decide, PublishedLayerTimings) {
  EXPECT_TRUE(decide_layer(published_layer(1.0), estimate(published_layer(1.0), 1000)));
  EXPECT_TRUE(decide_layer(published_layer(0.12), estimate(published_layer(0.12), 1000)));
  EXPECT_FALSE(decide_layer(published_layer(0.11), estimate(published_layer(0.11), 1000)));
  EXPECT_NEAR(performance_benefit(0.12, estimate(published_layer(0.12), 1000)), 58.524 - 54.5, 1e-9);
}

// PB is monotone in alpha, so the decision flips exactly once.
TEST(Decide, MonotoneInAlpha) {
  bool seen_true = false;
  for (int i = 0; i <= 100; ++i) {
    const auto p = published_layer(i / 100.0);
    const bool d = decide_layer(p, estimate(p, 777));
    if (seen_true) EXPECT_TRUE(d) << i;
    seen_true = seen_true || d;
  }
  EXPECT_TRUE(seen_true);
}

TEST(ProfileFile, RoundTripExact) {
  std::vector<LayerProfile> ps{published_layer(0.25), published_layer(1.0 / 3.0)};
  ps[1].layer = 1;
  ps[1].threshold = 0.123456789012345;
  std::stringstream ss;
  write_profiles(ss, ps);
  EXPECT_EQ(read_profiles(ss), ps);
}

TEST(ProfileFile, RejectsMalformed) {
  std::istringstream no_header("layer\talpha\n");
  EXPECT_THROW(read_profiles(no_header), std::runtime_error);
  std::stringstream bad;
  bad << kProfileHeader << '\n' << kProfileColumns << "\n0\t0.5\tx\n";
  EXPECT_THROW(read_profiles(bad), std::runtime_error);
  std::stringstream out_of_range;
  out_of_range << kProfileHeader << '\n' << kProfileColumns << "\n0\t1.5\t1\t1\t10\t4\t0.5\n";
  EXPECT_THROW(read_profiles(out_of_range), std::invalid_argument);
}
