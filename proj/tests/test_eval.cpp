#include <catch2/catch_amalgamated.hpp>

#include "bdcca/eval.hpp"
#include "bdcca/rng.hpp"

using namespace bdcca;

namespace {

FrameTrack track(std::vector<double> v) {
  FrameTrack t;
  t.kind = FrameTrack::Kind::BinaryLabel;
  t.values = std::move(v);
  return t;
}

// Segment-activity fixture: two frames per 1 s segment (hop 0.5 s).
FrameTrack from_segments(const std::vector<int>& active, int n_segments) {
  std::vector<double> v(static_cast<std::size_t>(2 * n_segments), 0.0);
  for (int s : active) v[static_cast<std::size_t>(2 * s)] = 1.0;
  return track(std::move(v));
}

}  // namespace

TEST_CASE("perfect prediction scores 1", "[eval]") {
  auto ref = from_segments({1, 4, 7}, 10);
  auto m = segment_scores(ref, ref, 0.5, 1.0);
  REQUIRE(m.precision == 1.0);
  REQUIRE(m.recall == 1.0);
  REQUIRE(m.f1 == 1.0);
  REQUIRE(m.tp == 3);
}

TEST_CASE("all-zero prediction scores 0 by the zero-denominator rule", "[eval]") {
  auto ref = from_segments({0, 2}, 5);
  auto pred = from_segments({}, 5);
  auto m = segment_scores(ref, pred, 0.5, 1.0);
  REQUIRE(m.recall == 0.0);
  REQUIRE(m.precision == 0.0);
  REQUIRE(m.f1 == 0.0);
  REQUIRE(m.fn == 2);
}

TEST_CASE("hand-counted 10-segment fixture", "[eval]") {
  // Reference active in 4 segments, prediction active in 5, 3 overlapping.
  auto ref = from_segments({0, 1, 2, 3}, 10);
  auto pred = from_segments({0, 1, 2, 7, 8}, 10);
  auto m = segment_scores(ref, pred, 0.5, 1.0);
  REQUIRE(m.tp == 3);
  REQUIRE(m.fp == 2);
  REQUIRE(m.fn == 1);
  REQUIRE(m.precision == Catch::Approx(0.6));
  REQUIRE(m.recall == Catch::Approx(0.75));
  REQUIRE(m.f1 == Catch::Approx(2.0 * 0.6 * 0.75 / 1.35));
}

TEST_CASE("swapping reference and prediction swaps P and R", "[eval]") {
  auto ref = from_segments({0, 1, 2, 3}, 10);
  auto pred = from_segments({0, 1, 2, 7, 8}, 10);
  auto m = segment_scores(ref, pred, 0.5, 1.0);
  auto swapped = segment_scores(pred, ref, 0.5, 1.0);
  REQUIRE(swapped.fp == m.fn);
  REQUIRE(swapped.fn == m.fp);
  REQUIRE(swapped.precision == Catch::Approx(m.recall));
  REQUIRE(swapped.recall == Catch::Approx(m.precision));
  REQUIRE(swapped.f1 == Catch::Approx(m.f1));
}

TEST_CASE("boundary frames belong to the later segment only", "[eval]") {
  // Frames at 0.0, 0.5, 1.0 s: the third frame sits exactly on the 1 s
  // boundary and lands in segment 1.
  auto ref = track({0, 0, 1});
  auto pred = track({0, 0, 0});
  auto m = segment_scores(ref, pred, 0.5, 1.0);
  REQUIRE(m.fn == 1);
  REQUIRE(m.tp == 0);
  auto only_first = segment_scores(track({1, 0, 0}), track({1, 0, 0}), 0.5, 1.0);
  REQUIRE(only_first.tp == 1);
}

TEST_CASE("f1 is in [0,1] and 1 only without errors", "[eval]") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(40), p(40);
    for (auto& v : r) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    for (auto& v : p) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    auto m = segment_scores(track(r), track(p), 0.25, 1.0);
    REQUIRE(m.f1 >= 0.0);
    REQUIRE(m.f1 <= 1.0);
    if (m.f1 == 1.0) {
      REQUIRE(m.fp == 0);
      REQUIRE(m.fn == 0);
      REQUIRE(m.tp >= 1);
    }
  }
}

TEST_CASE("coarsening segments does not lose true positives on nested fixtures",
          "[eval]") {
  auto ref = from_segments({0, 1, 4, 5, 8}, 10);
  auto pred = from_segments({0, 1, 4, 8, 9}, 10);
  auto fine = segment_scores(ref, pred, 0.5, 1.0);
  auto coarse = segment_scores(ref, pred, 0.5, 2.0);
  REQUIRE(coarse.tp + coarse.fp + coarse.fn <= fine.tp + fine.fp + fine.fn);
  REQUIRE(coarse.tp >= (fine.tp + 1) / 2);
}

TEST_CASE("segment_scores input validation", "[eval]") {
  REQUIRE_THROWS_AS(segment_scores(track({1, 0}), track({1}), 0.5, 1.0),
                    shape_error);
  FrameTrack probs;
  probs.kind = FrameTrack::Kind::Probability;
  probs.values = {0.4, 0.6};
  REQUIRE_THROWS_AS(segment_scores(probs, track({1, 0}), 0.5, 1.0),
                    validation_error);
  REQUIRE_THROWS_AS(segment_scores(track({1, 0}), track({1, 0}), 0.0, 1.0),
                    config_error);
}

TEST_CASE("aggregate micro-averages counts", "[eval]") {
  SECTION("single clip is the identity") {
    auto m = detail::metrics_from_counts(3, 1, 2, 1.0);
    auto agg = aggregate({m});
    REQUIRE(agg.tp == m.tp);
    REQUIRE(agg.f1 == Catch::Approx(m.f1));
  }
  SECTION("two-clip fixture") {
    auto a = detail::metrics_from_counts(1, 0, 0, 1.0);
    auto b = detail::metrics_from_counts(0, 1, 1, 1.0);
    auto agg = aggregate({a, b});
    REQUIRE(agg.tp == 1);
    REQUIRE(agg.fp == 1);
    REQUIRE(agg.fn == 1);
    REQUIRE(agg.precision == Catch::Approx(0.5));
    REQUIRE(agg.recall == Catch::Approx(0.5));
    REQUIRE(agg.f1 == Catch::Approx(0.5));
  }
  SECTION("associativity on random fixtures") {
    Rng rng(9);
    std::vector<SegmentMetrics> parts;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 12; ++i) {
      const auto a = static_cast<std::int64_t>(rng.uniform_below(5));
      const auto b = static_cast<std::int64_t>(rng.uniform_below(5));
      const auto c = static_cast<std::int64_t>(rng.uniform_below(5));
      parts.push_back(detail::metrics_from_counts(a, b, c, 1.0));
      tp += a;
      fp += b;
      fn += c;
    }
    auto whole = aggregate(parts);
    auto split_l = aggregate({parts.begin(), parts.begin() + 5});
    auto split_r = aggregate({parts.begin() + 5, parts.end()});
    auto rejoined = aggregate({split_l, split_r});
    REQUIRE(whole.tp == tp);
    REQUIRE(rejoined.tp == whole.tp);
    REQUIRE(rejoined.fp == whole.fp);
    REQUIRE(rejoined.fn == whole.fn);
    REQUIRE(rejoined.f1 == Catch::Approx(whole.f1));
  }
  SECTION("empty input is rejected") {
    REQUIRE_THROWS_AS(aggregate({}), validation_error);
  }
}
