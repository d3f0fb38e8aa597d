#include <doctest.h>

#include <cmath>

#include "tim/detection.hpp"
#include "tim/rng.hpp"

using namespace tim;

namespace {

// Straight-line reference decay used to cross-check soft_nms.
std::vector<Detection> soft_nms_reference(std::vector<Detection> dets,
                                          double sigma, double floor) {
  std::vector<Detection> out;
  std::vector<bool> alive(dets.size(), true);
  while (true) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!alive[i]) continue;
      if (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score ||
          (dets[i].score == dets[static_cast<std::size_t>(best)].score &&
           dets[i].t.start_s < dets[static_cast<std::size_t>(best)].t.start_s))
        best = static_cast<int>(i);
    }
    if (best < 0) break;
    alive[static_cast<std::size_t>(best)] = false;
    out.push_back(dets[static_cast<std::size_t>(best)]);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!alive[i]) continue;
      const double iou =
          temporal_iou(dets[static_cast<std::size_t>(best)].t, dets[i].t);
      dets[i].score *= std::exp(-(iou * iou) / sigma);
      if (dets[i].score < floor) alive[i] = false;
    }
  }
  return out;
}

Detection make_det(double s, double e, double score) {
  Detection d;
  d.video = "v";
  d.label_set = "action";
  d.cls = 0;
  d.t = {s, e};
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("pyramid for a 30 s window has the eight doubling levels") {
  PyramidConfig cfg;
  auto queries = build_pyramid(30.0, cfg);
  std::vector<double> sizes;
  for (const auto& q : queries)
    if (sizes.empty() || q.size_s != sizes.back()) sizes.push_back(q.size_s);
  const std::vector<double> expect = {0.15, 0.3, 0.6, 1.2,
                                      2.4,  4.8, 9.6, 19.2};
  REQUIRE(sizes.size() == 8);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(sizes[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  // the coarsest level fits two strided queries
  int coarse = 0;
  for (const auto& q : queries)
    if (q.level == 7) ++coarse;
  CHECK(coarse == 2);

  // every query stays inside the window
  for (const auto& q : queries) {
    CHECK(q.start_s >= 0.0);
    CHECK(q.end_s() <= 30.0 + 1e-9);
  }
}

TEST_CASE("pyramid for a 10 s window") {
  PyramidConfig cfg;
  auto queries = build_pyramid(10.0, cfg);
  std::vector<double> sizes;
  for (const auto& q : queries)
    if (sizes.empty() || q.size_s != sizes.back()) sizes.push_back(q.size_s);
  REQUIRE(sizes.size() == 8);
  CHECK(sizes.front() == doctest::Approx(0.05));
  CHECK(sizes.back() == doctest::Approx(6.4));
}

TEST_CASE("target assignment follows the IoU rule") {
  std::vector<ProposalQuery> queries = {{0.0, 1.0, 0}};
  std::vector<std::pair<TimeInterval, int>> gts = {{{0.0, 1.0}, 3}};
  auto t = assign_targets(queries, gts);
  CHECK(t[0].cls == 3);
  CHECK(t[0].iou == doctest::Approx(1.0));

  gts = {{{0.5, 1.5}, 3}};
  t = assign_targets(queries, gts);
  CHECK(t[0].cls == -1);  // IoU 1/3 below 0.6

  // ties resolve to the highest IoU
  std::vector<ProposalQuery> q2 = {{0.0, 1.0, 0}};
  std::vector<std::pair<TimeInterval, int>> multi = {{{0.0, 0.8}, 1},
                                                     {{0.05, 1.0}, 2}};
  t = assign_targets(q2, multi);
  CHECK(t[0].cls == 2);  // IoU 0.95 beats 0.8
  CHECK(t[0].gt.start_s == doctest::Approx(0.05));
}

TEST_CASE("soft-nms examples") {
  // single detection passes through
  auto one = soft_nms({make_det(0, 1, 0.9)}, 0.25, 1e-4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].score == doctest::Approx(0.9));

  // identical intervals: the weaker score decays by e^-4
  auto two = soft_nms({make_det(0, 1, 0.9), make_det(0, 1, 0.5)}, 0.25, 1e-4);
  REQUIRE(two.size() == 2);
  CHECK(two[0].score == doctest::Approx(0.9));
  CHECK(two[1].score == doctest::Approx(0.5 * std::exp(-4.0)).epsilon(1e-12));

  // zero overlap leaves everything unchanged
  auto far = soft_nms({make_det(0, 1, 0.9), make_det(5, 6, 0.8)}, 0.25, 1e-4);
  REQUIRE(far.size() == 2);
  CHECK(far[1].score == doctest::Approx(0.8));
}

TEST_CASE("soft-nms equals the reference on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0.0, 8.0);
      dets.push_back(make_det(s, s + rng.uniform(0.2, 3.0), rng.uniform()));
    }
    const double sigma = rng.uniform(0.1, 0.6);
    auto ours = soft_nms(dets, sigma, 1e-3);
    auto ref = soft_nms_reference(dets, sigma, 1e-3);
    REQUIRE(ours.size() == ref.size());
    for (std::size_t i = 0; i < ours.size(); ++i) {
      CHECK(ours[i].score == ref[i].score);  // exact
      CHECK(ours[i].t.start_s == ref[i].t.start_s);
    }
    // scores never increase; survivors are a subset
    CHECK(ours.size() <= dets.size());
    double prev = 1e30;
    for (const auto& d : ours) {
      CHECK(d.score <= prev + 1e-15);
      prev = d.score;
    }
  }
}

TEST_CASE("verb/noun fusion") {
  auto sym = fuse_verb_noun(0.5, 0.5, {1.0, 3.0}, {2.0, 4.0});
  CHECK(sym.p_action == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sym.t.start_s == doctest::Approx(1.5));
  CHECK(sym.t.end_s == doctest::Approx(3.5));

  auto f = fuse_verb_noun(0.8, 0.6, {1.0, 2.0}, {1.0, 2.0});
  CHECK(f.p_action == doctest::Approx(0.6829).epsilon(1e-4));
  CHECK(f.t.start_s == doctest::Approx(1.0));
  CHECK(f.t.end_s == doctest::Approx(2.0));

  CHECK_THROWS_AS(fuse_verb_noun(0.0, 0.5, {0, 1}, {0, 1}),
                  std::invalid_argument);

  // monotone in both scores, and bounded by them
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const double pv = rng.uniform(0.05, 1.0);
    const double pn = rng.uniform(0.05, 1.0);
    auto base = fuse_verb_noun(pv, pn, {0, 1}, {0, 1});
    auto up_v = fuse_verb_noun(std::min(1.0, pv + 0.05), pn, {0, 1}, {0, 1});
    auto up_n = fuse_verb_noun(pv, std::min(1.0, pn + 0.05), {0, 1}, {0, 1});
    CHECK(up_v.p_action >= base.p_action - 1e-12);
    CHECK(up_n.p_action >= base.p_action - 1e-12);
    CHECK(base.p_action >= std::min(pv, pn) - 1e-12);
    CHECK(base.p_action <= std::max(pv, pn) + 1e-12);
  }
}

TEST_CASE("pyramid coverage of in-window events") {
  PyramidConfig cfg;
  const double W = 30.0;
  auto queries = build_pyramid(W, cfg);
  Rng rng(7);
  for (int trial = 0; trial < 400; ++trial) {
    const double dur = rng.uniform(cfg.base_fraction * W, W / 2.0);
    const double start = rng.uniform(0.0, W - dur);
    double best = 0.0;
    for (const auto& q : queries)
      best = std::max(best, span_iou(q.start_s, q.end_s(), start, start + dur));
    CHECK(best >= 1.0 / 3.0);
  }
}
