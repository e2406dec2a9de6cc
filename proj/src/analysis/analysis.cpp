#include "vcwn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "vcwn/error.hpp"

namespace vcwn {

namespace {

const double kMcdScale = 10.0 / std::log(10.0);

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

double mcd_frame(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kInvalidArgument,
          "mcd_frame: dimension mismatch (" + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double e = a[d] - b[d];
    s += e * e;
  }
  const double out = kMcdScale * std::sqrt(2.0 * s);
  require(std::isfinite(out), ErrorCode::kNonFinite, "mcd_frame: non-finite input");
  return out;
}

double mcd_frames(const FeatureTrack& a, std::size_t i, const FeatureTrack& b, std::size_t j) {
  return mcd_frame(a.frame(i).subspan(1), b.frame(j).subspan(1));
}

AlignmentPath dtw_align(std::size_t rows, std::size_t cols,
                        const std::function<double(std::size_t, std::size_t)>& cost) {
  require(rows > 0 && cols > 0, ErrorCode::kInvalidArgument, "dtw_align: empty sequence");
  const double inf = std::numeric_limits<double>::infinity();
  // acc[i][j]: best cost of a path ending at (i, j); move: 0 diag, 1 up, 2 left.
  std::vector<double> acc(rows * cols, inf);
  std::vector<unsigned char> move(rows * cols, 0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = cost(i, j);
      double best = i == 0 && j == 0 ? 0.0 : inf;
      unsigned char m = 0;
      if (i > 0 && j > 0 && acc[(i - 1) * cols + j - 1] < best) {
        best = acc[(i - 1) * cols + j - 1];
        m = 0;
      }
      if (i > 0 && acc[(i - 1) * cols + j] < best) {
        best = acc[(i - 1) * cols + j];
        m = 1;
      }
      if (j > 0 && acc[i * cols + j - 1] < best) {
        best = acc[i * cols + j - 1];
        m = 2;
      }
      acc[i * cols + j] = best + c;
      move[i * cols + j] = m;
    }
  AlignmentPath path;
  path.cost = acc.back();
  std::size_t i = rows - 1, j = cols - 1;
  path.steps.emplace_back(i, j);
  while (i > 0 || j > 0) {
    switch (move[i * cols + j]) {
      case 0: --i, --j; break;
      case 1: --i; break;
      default: --j; break;
    }
    path.steps.emplace_back(i, j);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

AlignmentPath dtw_align(const FeatureTrack& a, const FeatureTrack& b) {
  return dtw_align(a.frames(), b.frames(),
                   [&](std::size_t i, std::size_t j) { return mcd_frames(a, i, b, j); });
}

double mean_mcd(const FeatureTrack& a, const FeatureTrack& b, Alignment align) {
  require(a.frames() > 0 && b.frames() > 0, ErrorCode::kInvalidArgument, "mean_mcd: empty track");
  if (align == Alignment::kNone) {
    require(a.frames() == b.frames(), ErrorCode::kInvalidArgument,
            "mean_mcd: unaligned comparison needs equal lengths (" +
                std::to_string(a.frames()) + " vs " + std::to_string(b.frames()) + ")");
    double s = 0.0;
    for (std::size_t t = 0; t < a.frames(); ++t) s += mcd_frames(a, t, b, t);
    return s / static_cast<double>(a.frames());
  }
  const AlignmentPath p = dtw_align(a, b);
  return p.cost / static_cast<double>(p.steps.size());
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> DistanceReport::values(int dist_id) const {
  std::vector<double> out;
  for (const DistanceRecord& r : records)
    if (r.dist_id == dist_id) out.push_back(r.mcd_db);
  return out;
}

double DistanceReport::median(int dist_id) const { return vcwn::median(values(dist_id)); }

std::string DistanceReport::to_csv() const {
  std::string out = "pair,utterance,dist_id,mcd_db\n";
  for (const DistanceRecord& r : records)
    out += r.pair + "," + r.utterance + "," + std::to_string(r.dist_id) + "," +
           format_double(r.mcd_db) + "\n";
  return out;
}

std::array<double, 3> distance_triplet(const FeatureTrack& natural_target,
                                       const FeatureTrack& reconstructed_target,
                                       const FeatureTrack& converted) {
  return {mean_mcd(natural_target, converted, Alignment::kDtw),
          mean_mcd(natural_target, reconstructed_target, Alignment::kNone),
          mean_mcd(reconstructed_target, converted, Alignment::kDtw)};
}

DistanceReport distance_experiment(const VaeModel& vae, std::span<const ParallelUtterance> items) {
  DistanceReport report;
  for (const ParallelUtterance& u : items) {
    require(u.source != nullptr && u.target != nullptr, ErrorCode::kInvalidArgument,
            "distance_experiment: missing features for utterance '" + u.utterance + "'");
    const SpeakerCode code = vae.code_for(u.target_speaker);
    const FeatureTrack converted = vae.forward(*u.source, code, ForwardMode::kConvert);
    const FeatureTrack reconstructed = vae.forward(*u.target, code, ForwardMode::kReconstruct);
    const std::string pair = u.source_speaker + "->" + u.target_speaker;
    const auto d = distance_triplet(*u.target, reconstructed, converted);
    for (int k = 0; k < 3; ++k) report.records.push_back({pair, u.utterance, k + 1, d[k]});
  }
  return report;
}

const GvVector& GvReport::at(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  fail(ErrorCode::kInvalidArgument, "GV report has no key '" + key + "'");
}

double GvReport::mean_over_dims(const std::string& key) const {
  const GvVector& g = at(key);
  double s = 0.0;
  for (double v : g) s += v;
  return s / static_cast<double>(g.size());
}

std::string GvReport::to_csv() const {
  std::string out = "key,dim,gv\n";
  for (const auto& [k, v] : entries)
    for (std::size_t d = 0; d < v.size(); ++d)
      out += k + "," + std::to_string(d + 1) + "," + format_double(v[d]) + "\n";
  return out;
}

GvReport gv_report(std::span<const GvInput> sets) {
  require(!sets.empty(), ErrorCode::kInvalidArgument, "gv_report: no feature sets");
  GvReport report;
  for (const auto& [key, tracks] : sets) {
    require(!tracks.empty(), ErrorCode::kInvalidArgument,
            "gv_report: key '" + key + "' has no utterances");
    GvVector sum{};
    for (const FeatureTrack* t : tracks) {
      require(t != nullptr && t->frames() > 0, ErrorCode::kInvalidArgument,
              "gv_report: empty utterance under key '" + key + "'");
      const GvVector g = utterance_gv(*t);
      for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += g[d];
    }
    for (double& v : sum) v /= static_cast<double>(tracks.size());
    report.entries.emplace_back(key, sum);
  }
  return report;
}

}  // namespace vcwn
