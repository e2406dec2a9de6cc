#include <cmath>
#include <limits>

#include "doctest.h"
#include "vcwn/analysis.hpp"
#include "vcwn/error.hpp"

using namespace vcwn;

namespace {

const double kUnit = 10.0 / std::log(10.0) * std::sqrt(2.0);  // MCD of a unit step in one dim

FeatureTrack track_from(std::initializer_list<double> dim1) {
  FeatureTrack t;
  t.resize(dim1.size());
  std::size_t i = 0;
  for (double v : dim1) {
    t.frame(i)[1] = v;
    t.energy[i] = 1.0;
    ++i;
  }
  return t;
}

FeatureTrack random_track(Rng& rng, std::size_t frames) {
  FeatureTrack t;
  t.resize(frames);
  for (double& v : t.mcc) v = rng.normal(0.0, 0.4);
  for (double& e : t.energy) e = 1.0;
  return t;
}

// Exhaustive search over every monotone path with steps (1,0), (0,1), (1,1).
double brute_force(const std::vector<std::vector<double>>& c, std::size_t i, std::size_t j) {
  const std::size_t I = c.size(), J = c[0].size();
  if (i == I - 1 && j == J - 1) return c[i][j];
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < I) best = std::min(best, brute_force(c, i + 1, j));
  if (j + 1 < J) best = std::min(best, brute_force(c, i, j + 1));
  if (i + 1 < I && j + 1 < J) best = std::min(best, brute_force(c, i + 1, j + 1));
  return c[i][j] + best;
}

void check_path_shape(const AlignmentPath& p, std::size_t I, std::size_t J) {
  REQUIRE(!p.steps.empty());
  CHECK(p.steps.front() == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(p.steps.back() == std::pair<std::size_t, std::size_t>{I - 1, J - 1});
  for (std::size_t k = 1; k < p.steps.size(); ++k) {
    const auto di = p.steps[k].first - p.steps[k - 1].first;
    const auto dj = p.steps[k].second - p.steps[k - 1].second;
    CHECK(di <= 1);
    CHECK(dj <= 1);
    CHECK(di + dj >= 1);
  }
}

}  // namespace

TEST_CASE("frame MCD") {
  std::vector<double> a(kShapeDims, 0.3), b = a;
  CHECK(mcd_frame(a, b) == 0.0);
  b[7] += 0.1;
  CHECK(mcd_frame(a, b) == doctest::Approx(0.61419).epsilon(1e-5));
  CHECK(mcd_frame(a, b) == mcd_frame(b, a));
  std::vector<double> shorter(kShapeDims - 1);
  CHECK_THROWS_AS(mcd_frame(a, shorter), Error);

  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(kShapeDims), y(kShapeDims), z(kShapeDims);
    for (std::size_t d = 0; d < kShapeDims; ++d) {
      x[d] = rng.normal();
      y[d] = rng.normal();
      z[d] = rng.normal();
    }
    CHECK(mcd_frame(x, y) > 0.0);
    CHECK(mcd_frame(x, z) <= mcd_frame(x, y) + mcd_frame(y, z) + 1e-12);
  }

  // Track frames: dim 0 never counts.
  FeatureTrack p = track_from({1.0}), q = track_from({1.0});
  q.frame(0)[0] = 50.0;
  CHECK(mcd_frames(p, 0, q, 0) == 0.0);
}

TEST_CASE("DTW equals exhaustive enumeration on small instances") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t I = 1 + rng.index(6), J = 1 + rng.index(6);
    CAPTURE(I);
    CAPTURE(J);
    const FeatureTrack a = random_track(rng, I), b = random_track(rng, J);
    std::vector<std::vector<double>> c(I, std::vector<double>(J));
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) c[i][j] = mcd_frames(a, i, b, j);
    const AlignmentPath p = dtw_align(a, b);
    CHECK(p.cost == doctest::Approx(brute_force(c, 0, 0)).epsilon(1e-12));
    check_path_shape(p, I, J);
    double along = 0.0;
    for (const auto& [i, j] : p.steps) along += c[i][j];
    CHECK(along == doctest::Approx(p.cost).epsilon(1e-12));
    if (I == J) {
      double diag = 0.0;
      for (std::size_t i = 0; i < I; ++i) diag += c[i][i];
      CHECK(p.cost <= diag + 1e-12);
    }
  }
}

TEST_CASE("DTW shapes") {
  Rng rng(3);
  const FeatureTrack a = random_track(rng, 7);
  const AlignmentPath same = dtw_align(a, a);
  CHECK(same.cost == 0.0);
  REQUIRE(same.steps.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) CHECK(same.steps[k] == std::pair<std::size_t, std::size_t>{k, k});

  const FeatureTrack one = random_track(rng, 1);
  const AlignmentPath fan = dtw_align(one, a);
  REQUIRE(fan.steps.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) CHECK(fan.steps[k] == std::pair<std::size_t, std::size_t>{0, k});

  FeatureTrack empty;
  CHECK_THROWS_AS(dtw_align(empty, a), Error);
  CHECK_THROWS_AS(dtw_align(0, 3, [](std::size_t, std::size_t) { return 0.0; }), Error);
}

TEST_CASE("mean MCD") {
  Rng rng(4);
  const FeatureTrack a = random_track(rng, 6);
  CHECK(mean_mcd(a, a, Alignment::kNone) == 0.0);
  CHECK(mean_mcd(a, a, Alignment::kDtw) == 0.0);

  FeatureTrack dup;
  dup.resize(7);
  for (std::size_t t = 0, s = 0; t < 7; ++t) {
    std::copy(a.frame(s).begin(), a.frame(s).end(), dup.frame(t).begin());
    if (t != 2) ++s;  // frame 2 of a appears twice
  }
  CHECK(mean_mcd(a, dup, Alignment::kDtw) == 0.0);
  CHECK_THROWS_AS(mean_mcd(a, dup, Alignment::kNone), Error);

  // Hand table, dim-1 values a = {0, 2, 2}, b = {0, 0, 2} (costs in units):
  //   0 0 2 / 2 2 0 / 2 2 0; best path (0,0) (0,1) (1,2) (2,2) costs 0.
  const FeatureTrack x = track_from({0.0, 2.0, 2.0}), y = track_from({0.0, 0.0, 2.0});
  const AlignmentPath p = dtw_align(x, y);
  const std::vector<std::pair<std::size_t, std::size_t>> expect = {{0, 0}, {0, 1}, {1, 2}, {2, 2}};
  CHECK(p.steps == expect);
  CHECK(mean_mcd(x, y, Alignment::kDtw) == 0.0);
  CHECK(mean_mcd(x, y, Alignment::kNone) == doctest::Approx(2.0 * kUnit / 3.0).epsilon(1e-14));

  // a = {0, 1}, b = {1, 1, 3}: costs 1 1 3 / 0 0 2; best (0,0) (1,1) (1,2) = 1 + 0 + 2.
  const FeatureTrack u = track_from({0.0, 1.0}), v = track_from({1.0, 1.0, 3.0});
  CHECK(mean_mcd(u, v, Alignment::kDtw) == doctest::Approx(kUnit).epsilon(1e-14));
}

TEST_CASE("distance triplet limiting case") {
  Rng rng(5);
  const FeatureTrack natural = random_track(rng, 9);
  const FeatureTrack converted = random_track(rng, 11);
  // A perfect, code-insensitive autoencoder reconstructs the natural track.
  const auto d = distance_triplet(natural, natural, converted);
  CHECK(d[1] == 0.0);
  CHECK(d[2] == d[0]);
  CHECK(d[0] > 0.0);
}

TEST_CASE("distance experiment records and CSV") {
  Rng rng(6);
  VaeConfig vc;
  vc.hidden = 8;
  vc.latent = 3;
  vc.n_speakers = 2;
  VaeModel zero = VaeModel::zeros(vc);
  zero.set_speakers({"a", "b"});
  VaeModel vae(vc, rng);
  vae.set_speakers({"a", "b"});
  std::vector<FeatureTrack> tracks;
  for (int i = 0; i < 4; ++i) tracks.push_back(random_track(rng, 10 + i));
  const std::vector<ParallelUtterance> items = {
      {"a", "b", "u1", &tracks[0], &tracks[1]},
      {"b", "a", "u1", &tracks[1], &tracks[0]},
      {"a", "b", "u2", &tracks[2], &tracks[3]},
  };
  const DistanceReport r = distance_experiment(vae, items);
  REQUIRE(r.records.size() == 9);
  for (const DistanceRecord& rec : r.records) CHECK(rec.mcd_db >= 0.0);
  CHECK(r.records[3].pair == "b->a");
  CHECK(r.records[4].dist_id == 2);
  CHECK(r.values(3).size() == 3);
  CHECK(r.median(2) > 0.0);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("pair,utterance,dist_id,mcd_db\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
  CHECK(distance_experiment(vae, items).to_csv() == csv);

  // The zero model decodes every frame to the feature mean, so its
  // reconstruction and conversion coincide.
  const DistanceReport z = distance_experiment(zero, items);
  for (double v : z.values(3)) CHECK(v == 0.0);

  std::vector<ParallelUtterance> broken = {{"a", "b", "x", &tracks[0], nullptr}};
  CHECK_THROWS_AS(distance_experiment(vae, broken), Error);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), Error);
}

TEST_CASE("GV report") {
  FeatureTrack flat;
  flat.resize(5);
  for (double& v : flat.mcc) v = 0.7;
  for (double& e : flat.energy) e = 1.0;
  const FeatureTrack two = track_from({1.0, 4.0});  // variance 2.25 in dim 1
  const FeatureTrack three = track_from({0.0, 0.0, 3.0});  // variance 2
  const std::vector<GvInput> sets = {{"constant", {&flat}}, {"hand", {&two, &three}}};
  const GvReport r = gv_report(sets);
  for (double v : r.at("constant")) CHECK(v == 0.0);
  CHECK(r.at("hand")[0] == doctest::Approx((2.25 + 2.0) / 2.0).epsilon(1e-15));
  CHECK(r.mean_over_dims("hand") == doctest::Approx(2.125 / kShapeDims).epsilon(1e-14));
  CHECK_THROWS_AS(r.at("missing"), Error);

  const std::string csv = r.to_csv();
  CHECK(csv.rfind("key,dim,gv\nconstant,1,0.000000000\n", 0) == 0);
  CHECK(csv.find("hand,1,2.125000000\n") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * static_cast<long>(kShapeDims));

  const std::vector<GvInput> empty_key = {{"none", {}}};
  CHECK_THROWS_AS(gv_report(empty_key), Error);
  CHECK_THROWS_AS(gv_report({}), Error);
}
