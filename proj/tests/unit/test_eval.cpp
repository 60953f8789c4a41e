#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "mipslice/error.hpp"
#include "mipslice/eval.hpp"
#include "test_support.hpp"

using namespace mipslice;
using mipslice::testing::StubModel;
using mipslice::testing::TempDir;

TEST(Eval, SummaryConventions) {
  const Summary s = summarize({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.median, 2.0);  // lower central value
  EXPECT_DOUBLE_EQ(s.max, 4.0);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(summarize({7}).median, 7.0);
  EXPECT_DOUBLE_EQ(summarize({}).mean, 0.0);
}

TEST(Eval, PerfectPredictions) {
  const ErrorStats s = localization_errors({10, 20, 30}, {10, 20, 30}, {1, 2, 3});
  EXPECT_EQ(s.n, 3);
  EXPECT_EQ(s.mean_mm, 0.0);
  EXPECT_EQ(s.max_mm, 0.0);
  EXPECT_EQ(s.max_slice, 0.0);
  EXPECT_EQ(s.count_gt_10, 0);
}

TEST(Eval, SliceErrorIsUnrounded) {
  EXPECT_DOUBLE_EQ(localization_errors({105}, {100}, {2.5}).mean_slice, 2.0);
  EXPECT_DOUBLE_EQ(localization_errors({103}, {100}, {2.0}).mean_slice, 1.5);
  EXPECT_DOUBLE_EQ(localization_errors({100}, {103}, {2.0}).mean_mm, 3.0);
}

TEST(Eval, HandComputedFixture) {
  const ErrorStats s = localization_errors({11, 19, 31, 52}, {10, 20, 30, 40}, {1, 1, 1, 1});
  EXPECT_EQ(s.n, 4);
  EXPECT_DOUBLE_EQ(s.median_mm, 1.0);
  EXPECT_DOUBLE_EQ(s.max_mm, 12.0);
  EXPECT_DOUBLE_EQ(s.mean_mm, 3.75);
  EXPECT_DOUBLE_EQ(s.std_mm, std::sqrt(90.75 / 4));
  EXPECT_EQ(s.count_gt_10, 1);
  EXPECT_DOUBLE_EQ(s.median_slice, 1.0);
}

TEST(Eval, TenIsNotAnOutlier) {
  EXPECT_EQ(localization_errors({10, 10.5}, {0, 0}, {1, 1}).count_gt_10, 1);
}

TEST(Eval, RejectsBadInput) {
  EXPECT_THROW(localization_errors({1, 2}, {1}, {1, 1}), DomainError);
  EXPECT_THROW(localization_errors({1}, {1}, {0}), DomainError);
  EXPECT_THROW(interrater_stats(std::vector<double>{1, 2}, std::vector<double>{1}, std::vector<double>{1, 1}),
               DomainError);
}

TEST(Eval, PermutationInvariant) {
  Rng rng = make_rng(3);
  std::vector<double> p(31), g(31), t(31);
  for (int i = 0; i < 31; ++i) {
    p[i] = uniform(rng, 0, 400);
    g[i] = uniform(rng, 0, 400);
    t[i] = uniform(rng, 0.5, 5);
  }
  const ErrorStats a = localization_errors(p, g, t);
  std::vector<int> idx(31);
  for (int i = 0; i < 31; ++i) idx[i] = (i * 7) % 31;
  std::vector<double> p2, g2, t2;
  for (int i : idx) p2.push_back(p[i]), g2.push_back(g[i]), t2.push_back(t[i]);
  const ErrorStats b = localization_errors(p2, g2, t2);
  EXPECT_DOUBLE_EQ(a.median_mm, b.median_mm);
  EXPECT_DOUBLE_EQ(a.max_slice, b.max_slice);
  EXPECT_NEAR(a.mean_mm, b.mean_mm, 1e-9);
  EXPECT_NEAR(a.std_slice, b.std_slice, 1e-9);
  EXPECT_EQ(a.count_gt_10, b.count_gt_10);
}

TEST(Eval, InterraterIdentical) {
  const InterraterStats s = interrater_stats(std::vector<double>{50, 60}, std::vector<double>{50, 60},
                                             std::vector<double>{1, 1});
  EXPECT_EQ(s.a_vs_b.max_mm, 0.0);
  EXPECT_EQ(s.each_vs_mean.max_mm, 0.0);
  EXPECT_EQ(s.each_vs_mean.n, 4);
}

TEST(Eval, InterraterTwoApart) {
  const InterraterStats s = interrater_stats(std::vector<double>{100}, std::vector<double>{102},
                                             std::vector<double>{1});
  EXPECT_DOUBLE_EQ(s.a_vs_b.mean_mm, 2.0);
  EXPECT_EQ(s.each_vs_mean.n, 2);
  EXPECT_DOUBLE_EQ(s.each_vs_mean.mean_mm, 1.0);
  EXPECT_DOUBLE_EQ(s.each_vs_mean.max_mm, 1.0);
}

TEST(Eval, InterraterFloorMerge) {
  const InterraterStats s = interrater_stats(std::vector<double>{100}, std::vector<double>{101},
                                             std::vector<double>{2});
  // merged truth is floor(100.5) = 100: A is off by 0, B by 1
  EXPECT_DOUBLE_EQ(s.each_vs_mean.mean_mm, 0.5);
  EXPECT_DOUBLE_EQ(s.each_vs_mean.median_mm, 0.0);
  EXPECT_DOUBLE_EQ(s.each_vs_mean.max_mm, 1.0);
  EXPECT_DOUBLE_EQ(s.each_vs_mean.max_slice, 0.5);
  EXPECT_DOUBLE_EQ(s.a_vs_b.mean_slice, 0.5);
}

TEST(Eval, InterraterById) {
  const std::vector<Annotation> ann = {{"x", "A", 100, false}, {"x", "B", 101, false}, {"y", "B", 40, false},
                                       {"y", "A", 44, false},  {"y", "C", 0, false}};
  const std::map<std::string, double> thick = {{"x", 1.0}, {"y", 2.0}};
  const InterraterStats s = interrater_stats(ann, "A", "B", thick);
  EXPECT_EQ(s.a_vs_b.n, 2);
  EXPECT_DOUBLE_EQ(s.a_vs_b.max_mm, 4.0);
  EXPECT_DOUBLE_EQ(s.a_vs_b.max_slice, 2.0);
  EXPECT_EQ(s.each_vs_mean.n, 4);

  const std::vector<Annotation> unpaired = {{"x", "A", 100, false}, {"x", "B", 101, false}, {"z", "A", 3, false}};
  EXPECT_THROW(interrater_stats(unpaired, "A", "B", {{"x", 1.0}, {"z", 1.0}}), DomainError);
  EXPECT_THROW(interrater_stats(ann, "A", "B", {{"x", 1.0}}), DomainError);
}

TEST(Eval, EvaluatePredictionsJoinsById) {
  auto pred = [](std::string id, double y, double t) {
    PredictionResult r;
    r.image_id = std::move(id);
    r.y_mm = y;
    r.slice_thickness_mm = t;
    r.confidence = 0.8;
    return r;
  };
  const std::map<std::string, MergedAnnotation> truth = {
      {"b", {100, false, 2}}, {"a", {50, false, 1}}, {"c", {10, true, 2}}};
  const Evaluation e = evaluate_predictions({pred("b", 104, 2.0), pred("a", 50, 1.0), pred("c", 40, 1.0)}, truth);
  ASSERT_EQ(e.rows.size(), 3u);
  EXPECT_EQ(e.rows[0].image_id, "a");
  EXPECT_DOUBLE_EQ(e.rows[1].err_slice, 2.0);
  EXPECT_EQ(e.stats.count_gt_10, 1);
  const Evaluation skipped = evaluate_predictions({pred("b", 104, 2.0), pred("c", 40, 1.0)}, truth, true);
  ASSERT_EQ(skipped.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(skipped.stats.max_mm, 4.0);
  EXPECT_THROW(evaluate_predictions({pred("zzz", 1, 1)}, truth), DomainError);
}

TEST(Eval, CsvAndTableOutput) {
  TempDir tmp;
  const ErrorStats s = localization_errors({11, 19, 31, 52}, {10, 20, 30, 40}, {1, 1, 1, 1});
  write_stats_csv(tmp / "s.csv", {{"l3unet1d", s}});
  const std::string csv = mipslice::testing::slurp(tmp / "s.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "label,n,mean_mm,std_mm,median_mm,max_mm,mean_slice,std_slice,median_slice,max_slice,count_gt_10");
  EXPECT_NE(csv.find("l3unet1d,4,3.75,"), std::string::npos);
  EXPECT_EQ(csv.substr(csv.size() - 3), ",1\n");

  write_eval_csv(tmp / "e.csv", {{"a", 12, 10, 2, 2, 1, 0.9, false}});
  EXPECT_EQ(mipslice::testing::slurp(tmp / "e.csv"),
            "image_id,pred_mm,gt_mm,thickness_mm,err_mm,err_slice,confidence,low_confidence\na,12,10,2,2,1,0.9,0\n");

  const std::string table = format_error_table({{"l3unet1d", s}});
  EXPECT_NE(table.find("l3unet1d"), std::string::npos);
  EXPECT_NE(table.find("12.00"), std::string::npos);
}

TEST(Eval, BenchmarkSelfConsistency) {
  auto slow = [](const nn::Tensor& x) {
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
    return nn::Tensor({1, 1, x.h(), 1}, 0.5f);
  };
  StubModel stub(Variant::l3unet1d, slow);
  MipImage img;
  img.pixels = Image2D(128, 64, 0.0f);
  img.domain = IntensityDomain::int8;
  const BenchmarkReport rep = benchmark({{"a", &stub, 1}, {"b", &stub, 1}}, {img, img}, 5, 1);
  ASSERT_EQ(rep.entries.size(), 2u);
  EXPECT_EQ(rep.entries[0].per_image_median_s.size(), 2u);
  EXPECT_NEAR(rep.ratio("a", "b"), 1.0, 0.2);
  EXPECT_THROW(rep.ratio("a", "nope"), DomainError);
  const std::string table = format_benchmark_table(rep);
  EXPECT_NE(table.find("/b"), std::string::npos);
  EXPECT_THROW(benchmark({{"a", &stub, 1}}, {}), DomainError);
}
