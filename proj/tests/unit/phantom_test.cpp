// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "bline/phantom/io.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/phantom/split.hpp"
#include "oracles.hpp"

using namespace bline;

namespace {

PhantomParams params_with(int blines, std::uint64_t seed) {
  PhantomParams p;
  p.n_blines = blines;
  p.seed = seed;
  return p;
}

}  // namespace

TEST(Phantom, NoBlinesMeansNoBoxes) {
  const auto item = generate_phantom(params_with(0, 1));
  EXPECT_TRUE(item.boxes.empty());
}

TEST(Phantom, SameParamsAreBitIdentical) {
  auto p = params_with(3, 42);
  p.n_alines = 2;
  p.n_confusers = 2;
  const auto a = generate_phantom(p);
  const auto b = generate_phantom(p);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.boxes, b.boxes);
  p.seed = 43;
  EXPECT_NE(generate_phantom(p).image, a.image);
}

TEST(Phantom, ThreeBlinesHaveConfiguredGeometry) {
  const auto p = params_with(3, 9);
  const auto item = generate_phantom(p);
  ASSERT_EQ(item.boxes.size(), 3u);
  const double pleura = std::round(p.pleural_row_frac * static_cast<double>(p.height));
  for (const auto& b : item.boxes) {
    EXPECT_GE(b.width(), p.bline_width_px.lo);
    EXPECT_LE(b.width(), p.bline_width_px.hi);
    EXPECT_EQ(b.y1, pleura);
    EXPECT_EQ(b.y2, static_cast<double>(p.height));
    EXPECT_EQ(b.height(), static_cast<double>(p.height) - pleura);
  }
}

TEST(Phantom, BoxesAreInsideDisjointAndReachTheBottom) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    PhantomParams p = params_with(static_cast<int>(seed % 7), seed);
    p.n_confusers = static_cast<int>(seed % 5);
    p.n_alines = static_cast<int>(seed % 4);
    const auto item = generate_phantom(p);
    ASSERT_EQ(item.boxes.size(), static_cast<std::size_t>(p.n_blines));
    for (std::size_t i = 0; i < item.boxes.size(); ++i) {
      const auto& b = item.boxes[i];
      EXPECT_TRUE(b.valid());
      EXPECT_TRUE(b.inside(static_cast<double>(p.width), static_cast<double>(p.height)));
      EXPECT_EQ(b.y1, static_cast<double>(p.pleural_row()));
      EXPECT_EQ(b.y2, static_cast<double>(p.height));
      for (std::size_t j = i + 1; j < item.boxes.size(); ++j) EXPECT_EQ(oracle::box_iou(b, item.boxes[j]), 0.0);
    }
    for (double v : item.image.pixels) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Phantom, BoxesTightlyBoundBrightColumns) {
  auto p = params_with(4, 17);
  p.speckle_sigma = 0.0;
  p.decay = 0.0;
  const auto item = generate_phantom(p);
  const std::size_t y = p.height - 1;
  for (const auto& b : item.boxes) {
    for (auto x = static_cast<std::size_t>(b.x1); x < static_cast<std::size_t>(b.x2); ++x) {
      EXPECT_GE(item.image.at(x, y), p.bline_intensity.lo);
    }
    EXPECT_EQ(item.image.at(static_cast<std::size_t>(b.x1) - 1, y), p.lung_level);
    EXPECT_EQ(item.image.at(static_cast<std::size_t>(b.x2), y), p.lung_level);
  }
}

TEST(Phantom, SpeckleFreeImageIsPiecewiseConstant) {
  auto p = params_with(3, 5);
  p.n_alines = 2;
  p.n_confusers = 1;
  p.speckle_sigma = 0.0;
  p.decay = 0.0;
  const auto item = generate_phantom(p);
  std::set<double> levels(item.image.pixels.begin(), item.image.pixels.end());
  // Background levels, the A-line level and one level per vertical band.
  EXPECT_LE(levels.size(), 4u + 4u);
  // Above the pleura every row is flat tissue.
  for (std::size_t y = 0; y < p.pleural_row(); ++y)
    for (std::size_t x = 0; x < p.width; ++x) ASSERT_EQ(item.image.at(x, y), p.tissue_level);
}

TEST(Phantom, SpecklePreservesMeanIntensity) {
  double clean = 0.0, noisy = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = params_with(static_cast<int>(seed % 4), seed);
    p.n_alines = 1;
    p.speckle_sigma = 0.0;
    for (double v : generate_phantom(p).image.pixels) clean += v;
    p.speckle_sigma = 0.08;
    for (double v : generate_phantom(p).image.pixels) noisy += v;
  }
  EXPECT_NEAR(noisy / clean, 1.0, 0.02);
}

TEST(Phantom, InvalidParamsAreRejected) {
  auto p = params_with(0, 0);
  p.width = 31;
  EXPECT_THROW(generate_phantom(p), PhantomError);
  p = params_with(7, 0);
  EXPECT_THROW(generate_phantom(p), PhantomError);
  p = params_with(1, 0);
  p.bline_intensity = {0.5, 1.2};
  EXPECT_THROW(generate_phantom(p), PhantomError);
}

TEST(Phantom, CrowdedBandsCannotBePlaced) {
  auto p = params_with(6, 0);
  p.n_confusers = 4;
  p.width = 40;
  p.bline_width_px = {8, 8};
  EXPECT_THROW(generate_phantom(p), PhantomError);
}

TEST(Dataset, CountsFollowConfiguredRanges) {
  DatasetParams d;
  const auto set = generate_dataset(d, 60, 3);
  ASSERT_EQ(set.size(), 60u);
  std::set<std::size_t> counts;
  for (const auto& item : set) {
    EXPECT_LE(item.boxes.size(), 4u);
    counts.insert(item.boxes.size());
  }
  EXPECT_GT(counts.size(), 2u);
  EXPECT_EQ(generate_dataset(d, 5, 3)[4].image, set[4].image);
}

TEST(Pgm, ExtremeValuesMapToByteRange) {
  Image one(1, 1, 1.0);
  auto bytes = write_pgm(one);
  EXPECT_EQ(bytes, std::string("P5\n1 1\n255\n") + '\xff');
  Image zero(1, 1, 0.0);
  bytes = write_pgm(zero);
  EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 0u);
}

TEST(Pgm, RoundTripWithinOneQuantizationStep) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(16, 16);
  for (auto& v : img.pixels) v = u(rng);
  const auto back = read_pgm(write_pgm(img, "config abc"));
  ASSERT_EQ(back.width, 16u);
  ASSERT_EQ(back.height, 16u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_LE(std::abs(back.pixels[i] - img.pixels[i]), 1.0 / 510.0);
}

TEST(Pgm, AcceptsCommentsAndSmallMaxval) {
  const std::string bytes = std::string("P5\n# a\n2 1 # b\n3\n") + '\x03' + '\x00';
  const auto img = read_pgm(bytes);
  EXPECT_EQ(img.pixels[0], 1.0);
  EXPECT_EQ(img.pixels[1], 0.0);
}

TEST(Pgm, MalformedInputIsRejected) {
  EXPECT_THROW(read_pgm("P2\n1 1\n255\n0"), FileFormatError);
  EXPECT_THROW(read_pgm("P5\nx 1\n255\n0"), FileFormatError);
  EXPECT_THROW(read_pgm(std::string("P5\n2 2\n255\n") + "abc"), FileFormatError);
  EXPECT_THROW(read_pgm(std::string("P5\n1 1\n300\n") + "a"), FileFormatError);
}

TEST(Annotations, EmptyListRoundTrips) {
  EXPECT_EQ(write_annotations({}), "");
  EXPECT_TRUE(read_annotations("").empty());
}

TEST(Annotations, CocoBboxUsesWidthAndHeight) {
  const std::vector<AnnotationRecord> recs{{"img.pgm", {{Box{10, 20, 30, 110}, std::nullopt}}}};
  const auto j = nlohmann::json::parse(to_coco_json(recs));
  ASSERT_EQ(j["annotations"].size(), 1u);
  EXPECT_EQ(j["annotations"][0]["bbox"], (std::vector<double>{10, 20, 20, 90}));
  EXPECT_EQ(j["annotations"][0]["category_id"], 1);
  EXPECT_EQ(j["categories"][0]["name"], "bline");
  EXPECT_EQ(from_coco_json(to_coco_json(recs)), recs);
}

TEST(Annotations, RandomRecordsRoundTrip) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> pos(0, 100), ext(1, 50), count(0, 5), coin(0, 1);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<AnnotationRecord> recs;
  for (int i = 0; i < 50; ++i) {
    AnnotationRecord r;
    r.image_path = "images/p" + std::to_string(i) + ".pgm";
    const int n = count(rng);
    const bool scored = coin(rng) == 1;
    for (int k = 0; k < n; ++k) {
      const double x = pos(rng), y = pos(rng);
      AnnotatedBox ab{Box{x, y, x + ext(rng), y + ext(rng)}, std::nullopt};
      if (scored) ab.score = score(rng);
      r.boxes.push_back(ab);
    }
    recs.push_back(r);
  }
  EXPECT_EQ(read_annotations(write_annotations(recs, {"header"})), recs);
  EXPECT_EQ(from_coco_json(to_coco_json(recs)), recs);
}

TEST(Annotations, CocoResultsCarryScores) {
  const std::vector<AnnotationRecord> recs{{"a.pgm", {{Box{1, 2, 4, 8}, 0.75}}}, {"b.pgm", {}}};
  const auto j = nlohmann::json::parse(to_coco_results_json(recs));
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["image_id"], 0);
  EXPECT_EQ(j[0]["bbox"], (std::vector<double>{1, 2, 3, 6}));
  EXPECT_EQ(j[0]["score"], 0.75);
}

TEST(Annotations, MalformedLinesAreRejected) {
  EXPECT_THROW(read_annotations("a.pgm 1,2,3\n"), FileFormatError);
  EXPECT_THROW(read_annotations("a.pgm 1,2,3,4,cat\n"), FileFormatError);
  EXPECT_THROW(read_annotations("a.pgm 5,2,3,4,bline\n"), FileFormatError);
  EXPECT_THROW(read_annotations("a.pgm 1,2,x,4,bline\n"), FileFormatError);
  EXPECT_THROW(read_annotations("a.pgm 1,2,30,4,bline\n", 20.0, 20.0), FileFormatError);
  EXPECT_THROW(from_coco_json("{"), FileFormatError);
}

TEST(Split, SeventyThirty) {
  std::vector<int> recs(10);
  std::iota(recs.begin(), recs.end(), 0);
  const auto [train, eval] = split_dataset(recs, 0.7, 1);
  EXPECT_EQ(train.size(), 7u);
  EXPECT_EQ(eval.size(), 3u);
}

TEST(Split, IsAnExactPartition) {
  for (std::size_t n : {2u, 3u, 17u, 500u}) {
    std::vector<std::size_t> recs(n);
    std::iota(recs.begin(), recs.end(), 0u);
    const auto [train, eval] = split_dataset(recs, 0.7, n);
    EXPECT_EQ(train.size(), static_cast<std::size_t>(std::lround(0.7 * static_cast<double>(n))));
    std::set<std::size_t> seen(train.begin(), train.end());
    for (auto e : eval) EXPECT_TRUE(seen.insert(e).second);
    EXPECT_EQ(seen.size(), n);
  }
}

TEST(Split, SameSeedSameSplit) {
  std::vector<int> recs(40);
  std::iota(recs.begin(), recs.end(), 0);
  EXPECT_EQ(split_dataset(recs, 0.7, 5), split_dataset(recs, 0.7, 5));
  EXPECT_NE(split_dataset(recs, 0.7, 5).first, split_dataset(recs, 0.7, 6).first);
}

TEST(Split, RejectsBadInput) {
  std::vector<int> one{1};
  EXPECT_THROW(split_dataset(one, 0.7, 0), std::invalid_argument);
  std::vector<int> two{1, 2};
  EXPECT_THROW(split_dataset(two, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(split_dataset(two, 0.0, 0), std::invalid_argument);
}
