#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "dsfec/synth.hpp"
#include "oracles.hpp"

using namespace dsfec;

namespace {

Detection det(double cx, double cy, double score, ClassLabel c = ClassLabel::car) {
  return {cx, cy, 1.8, 4.5, 0.0, c, score};
}

GroundTruthBox gt(double cx, double cy, ClassLabel c = ClassLabel::car) { return {cx, cy, 1.8, 4.5, 0.0, c}; }

/// Random frame set with ties in score and clustered boxes.
std::pair<std::vector<FrameDetections>, std::vector<FrameGroundTruth>> random_case(SplitMix64& rng, int frames,
                                                                                   int max_boxes) {
  std::vector<FrameDetections> dets;
  std::vector<FrameGroundTruth> gts;
  for (int f = 0; f < frames; ++f) {
    FrameGroundTruth g{"f" + std::to_string(f), {}};
    FrameDetections d{g.frame_id, {}};
    const int ng = int(rng.below(std::uint64_t(max_boxes) + 1)), nd = int(rng.below(std::uint64_t(max_boxes) + 1));
    for (int i = 0; i < ng; ++i) g.boxes.push_back(gt(rng.uniform(0, 8), rng.uniform(0, 8), ClassLabel(rng.below(2))));
    for (int i = 0; i < nd; ++i)
      d.detections.push_back(det(rng.uniform(0, 8), rng.uniform(0, 8), double(rng.below(5)) / 4.0 + 0.01 * double(i),
                                 ClassLabel(rng.below(2))));
    gts.push_back(std::move(g));
    dets.push_back(std::move(d));
  }
  return {dets, gts};
}

}  // namespace

TEST(Match, Examples) {
  EXPECT_TRUE(match_detections({det(1, 1, 0.5)}, {gt(1, 1)}, ClassLabel::car, 4).at(0).gt.has_value());
  EXPECT_FALSE(match_detections({det(6, 1, 0.5)}, {gt(1, 1)}, ClassLabel::car, 4).at(0).gt.has_value());
  const auto m = match_detections({det(1.2, 1, 0.4), det(1.1, 1, 0.9)}, {gt(1, 1)}, ClassLabel::car, 4);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].detection, 1u);
  EXPECT_TRUE(m[0].gt.has_value());
  EXPECT_FALSE(m[1].gt.has_value());
  EXPECT_THROW(match_detections({}, {}, ClassLabel::car, 0.0), EvalError);
}

TEST(Match, NearestGtClassFilterAndDistanceTies) {
  const auto m = match_detections({det(0, 0, 1), det(9, 9, 1, ClassLabel::truck)},
                                  {gt(3, 0), gt(-2, 0), gt(2, 0, ClassLabel::truck), gt(0, 2)}, ClassLabel::car, 4);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(*m[0].gt, 1u);  // (-2,0) and (0,2) tie at 2 m: earlier GT wins
  EXPECT_DOUBLE_EQ(m[0].distance, 2.0);
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({true}, 1), 1.0);
  EXPECT_EQ(average_precision({}, 1), 0.0);
  EXPECT_EQ(average_precision({false, true}, 1), 0.5);
  EXPECT_EQ(average_precision({}, 0), 1.0);
  EXPECT_TRUE(ap_undefined(0, 0));
  EXPECT_EQ(average_precision({false}, 0), 0.0);
  // recall 1/2 at precision 1: points 0..50 carry 1, the rest 0
  EXPECT_DOUBLE_EQ(average_precision({true}, 2), 51.0 / 101.0);
}

TEST(AveragePrecision, ExactRecallBoundaries) {
  // 3 GT, all found: recall 1/3, 2/3 and 1 hit the k/100 grid by integer test
  EXPECT_EQ(average_precision({true, true, true}, 3), 1.0);
  // recall 0.33.. covers k <= 33 only, 0.66.. covers k <= 66
  EXPECT_NEAR(average_precision({true, false, true}, 3), (34.0 * 1.0 + 33.0 * (2.0 / 3.0)) / 101.0, 1e-15);
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
  SplitMix64 rng(5);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n_gt = 1 + rng.below(10);
    std::vector<bool> flags;
    std::size_t tp = 0;
    const auto n = rng.below(11);
    for (std::uint64_t i = 0; i < n; ++i) {
      const bool hit = tp < n_gt && rng.below(2) == 0;
      tp += hit;
      flags.push_back(hit);
    }
    const double ap = average_precision(flags, n_gt);
    EXPECT_NEAR(ap, oracle::exact_interpolated_ap(flags, n_gt), 0.01);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
}

TEST(Evaluate, PerfectPredictor) {
  std::vector<FrameGroundTruth> gts;
  std::vector<FrameDetections> dets;
  for (int f = 0; f < 5; ++f) {
    FrameGroundTruth g{"f" + std::to_string(f), {gt(f, 0), gt(f, 20), gt(f, 40, ClassLabel::pedestrian)}};
    FrameDetections d{g.frame_id, {}};
    for (const auto& b : g.boxes) d.detections.push_back({b.cx, b.cy, b.w, b.l, b.theta, b.class_label, 1.0});
    gts.push_back(g);
    dets.push_back(d);
  }
  const auto r = evaluate(dets, gts);
  EXPECT_EQ(r.car_map, 1.0);
  EXPECT_EQ(r.car_ap4, 1.0);
  for (double ap : r.of(ClassLabel::pedestrian).ap) EXPECT_EQ(ap, 1.0);
  EXPECT_TRUE(r.of(ClassLabel::truck).undefined);
  EXPECT_FALSE(r.of(ClassLabel::car).undefined);
}

TEST(Evaluate, ThreeMetreOffset) {
  const std::vector<FrameGroundTruth> gts{{"a", {gt(0, 0), gt(30, 0)}}};
  const std::vector<FrameDetections> dets{{"a", {det(3, 0, 0.9), det(30, 3, 0.8)}}};
  const auto only4 = evaluate(dets, gts, {4.0});
  EXPECT_EQ(only4.car_ap4, 1.0);
  EXPECT_EQ(only4.car_map, 1.0);
  const auto all = evaluate(dets, gts);
  EXPECT_EQ(all.of(ClassLabel::car).ap, (std::vector<double>{0, 0, 0, 1}));
  EXPECT_EQ(all.car_map, 0.25);
}

TEST(Evaluate, FrameIdErrors) {
  const std::vector<FrameGroundTruth> gts{{"a", {}}, {"b", {}}};
  try {
    evaluate({{"zz", {}}, {"a", {}}}, gts);
    FAIL();
  } catch (const EvalError& e) {
    EXPECT_NE(std::string(e.what()).find("'zz'"), std::string::npos);
  }
  EXPECT_THROW(evaluate({}, {{"a", {}}, {"a", {}}}), EvalError);
  EXPECT_THROW(evaluate({}, gts, {}), EvalError);
  EXPECT_THROW(evaluate({}, gts, {-1.0}), EvalError);
  // GT frames without detections are fine and count their boxes as misses
  const auto r = evaluate({{"a", {det(0, 0, 1)}}}, {{"a", {gt(0, 0)}}, {"b", {gt(5, 5)}}}, {1.0});
  EXPECT_DOUBLE_EQ(r.car_map, 51.0 / 101.0);
}

TEST(Evaluate, InvariantsOnRandomCases) {
  SplitMix64 rng(6);
  for (int t = 0; t < 200; ++t) {
    auto [dets, gts] = random_case(rng, 1 + int(rng.below(4)), 6);
    const auto r = evaluate(dets, gts);
    for (const auto& ce : r.classes) {
      double sum = 0.0;
      for (std::size_t i = 0; i < ce.ap.size(); ++i) {
        EXPECT_GE(ce.ap[i], 0.0);
        EXPECT_LE(ce.ap[i], 1.0);
        if (i > 0) {
          EXPECT_GE(ce.ap[i], ce.ap[i - 1]) << "threshold monotonicity, case " << t;
        }
        sum += ce.ap[i];
      }
      EXPECT_EQ(ce.mean_ap, sum / 4.0);
    }
    // frame order
    auto dets_rev = dets;
    auto gts_rev = gts;
    std::reverse(dets_rev.begin(), dets_rev.end());
    std::reverse(gts_rev.begin(), gts_rev.end());
    EXPECT_EQ(evaluate(dets_rev, gts_rev), r);
  }
}

TEST(Evaluate, DuplicatesNeverHelpWhenGtAreWellSeparated) {
  // GT centers 10 m apart, so no detection is within 4 m of two GTs and a
  // copy can only hit the GT its original already took.
  SplitMix64 rng(16);
  for (int t = 0; t < 200; ++t) {
    std::vector<FrameGroundTruth> gts;
    std::vector<FrameDetections> dets;
    for (int f = 0; f < 3; ++f) {
      FrameGroundTruth g{"f" + std::to_string(f), {}};
      FrameDetections d{g.frame_id, {}};
      for (int i = 0; i < 5; ++i)
        if (rng.below(3) != 0) g.boxes.push_back(gt(10.0 * i, 0));
      for (int i = 0, n = int(rng.below(8)); i < n; ++i)
        d.detections.push_back(det(rng.uniform(-3, 43), rng.uniform(-3, 3), double(rng.below(4)) / 4.0));
      gts.push_back(g);
      dets.push_back(d);
    }
    auto dup = dets;
    for (auto& f : dup) {
      const auto copy = f.detections;
      f.detections.insert(f.detections.end(), copy.begin(), copy.end());
    }
    const auto r = evaluate(dets, gts), rd = evaluate(dup, gts);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_LE(rd.of(ClassLabel::car).ap[i], r.of(ClassLabel::car).ap[i]) << t;
    }
  }
}

TEST(Evaluate, DuplicateCanTakeASecondNearbyGt) {
  // Two GTs 1 m apart: the copy of a detection matches the second one.
  const std::vector<FrameGroundTruth> gts{{"a", {gt(0, 0), gt(1, 0)}}};
  const auto single = evaluate({{"a", {det(0, 0, 1)}}}, gts, {2.0});
  const auto doubled = evaluate({{"a", {det(0, 0, 1), det(0, 0, 1)}}}, gts, {2.0});
  EXPECT_DOUBLE_EQ(single.car_map, 51.0 / 101.0);
  EXPECT_EQ(doubled.car_map, 1.0);
}

TEST(Evaluate, MatchesIndependentOracleOnRandomFrames) {
  SplitMix64 rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<FrameGroundTruth> gts;
    std::vector<FrameDetections> dets;
    for (int f = 0; f < 5; ++f) {
      FrameGroundTruth g{"f" + std::to_string(f), {}};
      FrameDetections d{g.frame_id, {}};
      for (int i = 0, n = int(rng.below(4)); i < n; ++i) g.boxes.push_back(gt(rng.uniform(0, 10), rng.uniform(0, 10)));
      for (int i = 0, n = int(rng.below(4)); i < n; ++i)
        d.detections.push_back(det(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform()));
      gts.push_back(g);
      dets.push_back(d);
    }
    const auto r = evaluate(dets, gts);
    EXPECT_NEAR(r.car_map, oracle::multi_frame_map(dets, gts, ClassLabel::car, default_distance_thresholds()), 0.01) << t;
  }
}

TEST(Evaluate, SyntheticFiftyFramesControlledOffsets) {
  SceneSpec spec;
  std::vector<FrameGroundTruth> gts;
  for (int i = 0; i < 50; ++i) gts.push_back({synth_frame_id(i), generate_frame(spec, i).boxes});
  // each frame gets its own offset from {0.3, 0.8, 1.5, 3}, so per threshold AP is known
  const double offsets[] = {0.3, 0.8, 1.5, 3.0};
  std::vector<FrameDetections> dets;
  for (int i = 0; i < 50; ++i)
    dets.push_back({gts[std::size_t(i)].frame_id, oracle_detector(gts[std::size_t(i)].boxes, {offsets[i % 4], 9, ScoreModel::ranked})});
  const auto r = evaluate(dets, gts);
  EXPECT_NEAR(r.car_map, oracle::multi_frame_map(dets, gts, ClassLabel::car, default_distance_thresholds()), 0.01);
  EXPECT_EQ(r.car_ap4, 1.0);
}

TEST(MetricsJson, RoundTripAndErrors) {
  const std::vector<FrameGroundTruth> gts{{"a", {gt(1, 2), gt(3, 4, ClassLabel::bicycle)}}, {"b", {}}};
  const auto back = ground_truth_from_json(nlohmann::json::parse(ground_truth_to_json(gts).dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].boxes, gts[0].boxes);
  EXPECT_EQ(back[1].frame_id, "b");

  const std::vector<FrameDetections> dets{{"a", {det(1, 2, 0.3)}}, {"b", {det(5, 6, 0.7, ClassLabel::truck)}}};
  const auto dback = detections_from_json(detections_to_json(dets));
  ASSERT_EQ(dback.size(), 2u);
  EXPECT_EQ(dback[1].detections, dets[1].detections);

  const auto no_id = nlohmann::json::parse(R"([{"cx":0,"cy":0,"w":1,"l":1,"theta":0,"class":"Car","score":1}])");
  EXPECT_THROW(detections_from_json(no_id), EvalError);
  EXPECT_EQ(detections_from_json(no_id, std::string("x")).at(0).frame_id, "x");
  auto bad_class = no_id;
  bad_class[0]["class"] = "Bus";
  EXPECT_THROW(detections_from_json(bad_class, std::string("x")), EvalError);
  EXPECT_THROW(ground_truth_from_json(nlohmann::json::object()), EvalError);
  EXPECT_THROW(read_ground_truth("/nonexistent/gt.json"), EvalError);

  const auto j = eval_to_json(evaluate(dets, gts));
  EXPECT_TRUE(j.contains("car_mAP"));
  EXPECT_TRUE(j.contains("car_AP@4"));
  EXPECT_NE(eval_to_text(evaluate(dets, gts)).find("Car"), std::string::npos);
}
