#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcwn/dsp.hpp"
#include "vcwn/pipeline.hpp"
#include "vcwn/vae.hpp"

namespace vcwn {

// (10 / ln 10) * sqrt(2 * sum (a_d - b_d)^2) over the given dims; callers
// pass MCC dims 1..34.
double mcd_frame(std::span<const double> a, std::span<const double> b);
// Frame i of a against frame j of b, dim 0 excluded.
double mcd_frames(const FeatureTrack& a, std::size_t i, const FeatureTrack& b, std::size_t j);

struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  double cost = 0.0;  // sum of frame costs along the path
};

// Minimum-cost monotone path from (0, 0) to (I-1, J-1) with steps
// (1,0), (0,1), (1,1). Ties prefer the diagonal.
AlignmentPath dtw_align(std::size_t rows, std::size_t cols,
                        const std::function<double(std::size_t, std::size_t)>& cost);
AlignmentPath dtw_align(const FeatureTrack& a, const FeatureTrack& b);

enum class Alignment { kNone, kDtw };

// Mean frame MCD: over frame pairs (kNone, equal lengths) or along the
// optimal path (kDtw).
double mean_mcd(const FeatureTrack& a, const FeatureTrack& b, Alignment align);

// One source utterance and the target speaker's reading of the same sentence.
struct ParallelUtterance {
  std::string source_speaker;
  std::string target_speaker;
  std::string utterance;
  const FeatureTrack* source = nullptr;  // natural
  const FeatureTrack* target = nullptr;  // natural
};

struct DistanceRecord {
  std::string pair;  // "source->target"
  std::string utterance;
  int dist_id = 0;  // 1, 2 or 3
  double mcd_db = 0.0;
};

struct DistanceReport {
  std::vector<DistanceRecord> records;

  std::vector<double> values(int dist_id) const;
  double median(int dist_id) const;
  // Header "pair,utterance,dist_id,mcd_db".
  std::string to_csv() const;
};

// {Dist1, Dist2, Dist3} for one utterance.
std::array<double, 3> distance_triplet(const FeatureTrack& natural_target,
                                       const FeatureTrack& reconstructed_target,
                                       const FeatureTrack& converted);

// Dist1 = natural target vs converted (DTW), Dist2 = natural target vs
// reconstructed target (frame-aligned), Dist3 = reconstructed target vs
// converted (DTW).
DistanceReport distance_experiment(const VaeModel& vae, std::span<const ParallelUtterance> items);

struct GvReport {
  std::vector<std::pair<std::string, GvVector>> entries;

  const GvVector& at(const std::string& key) const;
  double mean_over_dims(const std::string& key) const;
  // Header "key,dim,gv"; dim runs 1..34.
  std::string to_csv() const;
};

using GvInput = std::pair<std::string, std::vector<const FeatureTrack*>>;

// Per key: mean over utterances of the per-utterance variance vector.
GvReport gv_report(std::span<const GvInput> sets);

double median(std::vector<double> values);

}  // namespace vcwn
