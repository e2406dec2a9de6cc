// Acceptance runner: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "vcwn/analysis.hpp"
#include "vcwn/checkpoint.hpp"
#include "vcwn/corpus.hpp"
#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"
#include "vcwn/experiment.hpp"
#include "vcwn/gradcheck.hpp"
#include "vcwn/pipeline.hpp"
#include "vcwn/rng.hpp"
#include "vcwn/vae.hpp"
#include "vcwn/wavenet.hpp"

using namespace vcwn;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t({r, c});
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

FeatureTrack random_track(Rng& rng, std::size_t frames, double spread) {
  FeatureTrack t;
  t.resize(frames);
  for (double& v : t.mcc) v = rng.normal(0.0, spread);
  for (std::size_t i = 0; i < frames; ++i) {
    t.energy[i] = 0.5 + rng.uniform();
    if (rng.uniform() < 0.6) {
      t.voiced[i] = 1;
      t.log_f0[i] = 5.0 + 0.1 * rng.normal();
    }
  }
  return t;
}

// ---------------------------------------------------------------- C1

Outcome gradient_fidelity() {
  Rng rng(11);
  const Tensor a = random_tensor(rng, 4, 6, 0.7);
  const Tensor b = random_tensor(rng, 4, 6, 0.7);
  const Tensor w = random_tensor(rng, 3, 4, 0.5);
  const Tensor bias = random_tensor(rng, 4, 1);
  const Tensor conv_w = random_tensor(rng, 3, 8, 0.5);
  const Tensor noise = random_tensor(rng, 4, 6);
  const Tensor table = random_tensor(rng, 3, 5);
  const std::vector<int> codes = {0, 4, 2, 2, 1, 3};
  const std::vector<int> targets = {1, 0, 3, 2, 2, 1};

  struct Case {
    std::string name;
    ScalarFunction fn;
    Tensor point;
  };
  std::vector<Case> cases = {
      {"add", [&](Tape& t, Var x) { return ops::sum(ops::mul(ops::add(x, t.constant(b)), t.constant(b))); }, a},
      {"sub", [&](Tape& t, Var x) { return ops::sum(ops::mul(ops::sub(t.constant(b), x), x)); }, a},
      {"mul", [&](Tape&, Var x) { return ops::sum(ops::mul(x, x)); }, a},
      {"scale", [&](Tape&, Var x) { return ops::sum(ops::tanh(ops::scale(x, -1.5))); }, a},
      {"add_bias", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::add_bias(t.constant(a), x))); }, bias},
      {"matmul.w", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::matmul(x, t.constant(a)))); }, w},
      {"matmul.x", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::matmul(t.constant(w), x))); }, a},
      {"tanh", [&](Tape&, Var x) { return ops::sum(ops::mul(ops::tanh(x), ops::tanh(x))); }, a},
      {"sigmoid", [&](Tape&, Var x) { return ops::sum(ops::mul(ops::sigmoid(x), ops::sigmoid(x))); }, a},
      {"relu", [&](Tape&, Var x) { return ops::sum(ops::mul(ops::relu(x), ops::relu(x))); }, a},
      {"exp", [&](Tape&, Var x) { return ops::mean(ops::exp(x)); }, a},
      {"mean", [&](Tape&, Var x) { return ops::mean(ops::mul(x, x)); }, a},
      {"concat", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::concat_rows(x, t.constant(b)))); }, a},
      {"slice_rows", [&](Tape&, Var x) { return ops::sum(ops::mul(ops::slice_rows(x, 1, 2), ops::slice_rows(x, 2, 2))); }, a},
      {"slice_cols", [&](Tape&, Var x) { return ops::sum(ops::mul(ops::slice_cols(x, 1, 3), ops::slice_cols(x, 3, 3))); }, a},
      {"conv.x", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::conv1d_causal(x, t.constant(conv_w), 2))); }, a},
      {"conv.w", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::conv1d_causal(t.constant(a), x, 3))); }, conv_w},
      {"embedding", [&](Tape&, Var x) { return ops::sum(ops::tanh(ops::embedding(x, codes))); }, table},
      {"softmax_ce", [&](Tape&, Var x) { return ops::softmax_cross_entropy(x, targets); }, a},
      {"gaussian_nll", [&](Tape& t, Var x) { return ops::gaussian_nll(x, t.constant(b)); }, a},
      {"gaussian_kl.mu", [&](Tape& t, Var x) { return ops::gaussian_kl(x, t.constant(b)); }, a},
      {"gaussian_kl.logvar", [&](Tape& t, Var x) { return ops::gaussian_kl(t.constant(b), x); }, a},
      {"reparameterize.mu", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::reparameterize(x, t.constant(b), noise))); }, a},
      {"reparameterize.logvar", [&](Tape& t, Var x) { return ops::sum(ops::tanh(ops::reparameterize(t.constant(b), x, noise))); }, a},
  };

  double worst = 0.0;
  std::string worst_name, failed;
  std::size_t checks = 0;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    ++checks;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = name;
    }
    if (!r.passed || r.max_relative_error > 1e-4) failed += " " + name;
  };
  for (const Case& c : cases) record(c.name, grad_check(c.fn, c.point, {}));

  // Full VAE loss, every parameter plus the input frames.
  VaeConfig vc;
  vc.input_dim = 4;
  vc.hidden = 5;
  vc.latent = 3;
  vc.n_speakers = 2;
  VaeModel m(vc, rng);
  for (Parameter& p : m.parameters().items())
    for (double& v : p.value.values()) v += rng.normal(0.0, 0.3);
  Tensor h({4, 3}), code({2, 3}), eps({3, 3});
  for (double& v : h.values()) v = rng.normal();
  for (double& v : eps.values()) v = rng.normal();
  code.at(0, 0) = code.at(1, 1) = code.at(0, 2) = 1.0;
  auto loss = [&](Tape& tape) {
    return m.elbo_graph(tape, tape.constant(h), tape.constant(code), eps, true).total;
  };
  std::vector<std::string> names;
  for (const Parameter& p : m.parameters().items()) names.push_back(p.name);
  for (const std::string& n : names) record("vae:" + n, grad_check_parameter(m.parameters(), n, loss));
  record("vae:input", grad_check(
                          [&](Tape& tape, Var x) {
                            return m.elbo_graph(tape, x, tape.constant(code), eps, false).total;
                          },
                          h));

  Outcome o;
  o.pass = failed.empty();
  o.detail = std::to_string(checks) + " checks, max rel err " + fmt("%.2e", worst) + " (" + worst_name + ")";
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// ---------------------------------------------------------------- C2

bool column_equal(const Tensor& a, const Tensor& b, std::size_t t) {
  for (std::size_t r = 0; r < a.rows(); ++r)
    if (a.at(r, t) != b.at(r, t)) return false;
  return true;
}

Outcome causality() {
  Rng rng(2024);
  std::size_t probes = 0, violations = 0;
  std::string configs;
  for (int trial = 0; trial < 5; ++trial) {
    WaveNetConfig c;
    c.n_stacks = 1 + rng.index(2);
    c.dilations.clear();
    const std::size_t n = 1 + rng.index(4);
    for (std::size_t i = 0; i < n; ++i) c.dilations.push_back(1 + rng.index(9));
    c.residual_channels = 4;
    c.skip_channels = 8;
    c.cond_dims = 2;
    c.levels = 8;
    const std::size_t r = 1 + [&] {
      std::size_t s = 0;
      for (std::size_t l = 0; l < c.layers(); ++l) s += c.dilation(l);
      return s;
    }();
    if (r != receptive_field(c)) ++violations;
    // Lags some path through the layers realises (each layer adds 0 or its
    // dilation); lag r - 1 is always one of them.
    std::vector<bool> reach(r, false);
    reach[0] = true;
    for (std::size_t l = 0; l < c.layers(); ++l)
      for (std::size_t lag = r; lag-- > c.dilation(l);)
        if (reach[lag - c.dilation(l)]) reach[lag] = true;

    Rng wr(100 + trial);
    WaveNetModel m(c, wr);
    for (Parameter& p : m.parameters().items())
      for (double& v : p.value.values()) v = wr.normal(0.0, 0.4);
    const std::size_t T = r + 6;
    std::vector<int> base(T);
    for (int& v : base) v = static_cast<int>(rng.index(c.levels));
    Tensor cond({c.cond_dims, T});
    for (double& v : cond.values()) v = rng.normal();
    const Tensor ref = m.logits(base, cond);
    for (std::size_t p = 0; p < T; ++p) {
      auto in = base;
      in[p] = (in[p] + 1 + static_cast<int>(rng.index(c.levels - 1))) % static_cast<int>(c.levels);
      const Tensor out = m.logits(in, cond);
      for (std::size_t t = 0; t < T; ++t) {
        ++probes;
        const bool inside = p <= t && t - p < r;
        const bool same = column_equal(ref, out, t);
        if (inside && reach[t - p] ? same : !same) ++violations;
      }
    }
    // Predictions are shifted by one: sample t never sees itself.
    const Tensor pref = m.logits(m.shifted_inputs(base), cond);
    for (std::size_t s = 0; s < T; ++s) {
      auto x = base;
      x[s] = (x[s] + 1) % static_cast<int>(c.levels);
      const Tensor out = m.logits(m.shifted_inputs(x), cond);
      for (std::size_t t = 0; t <= s; ++t, ++probes)
        if (!column_equal(pref, out, t)) ++violations;
      if (s + 1 < T && column_equal(pref, out, s + 1)) ++violations;
    }
    configs += (configs.empty() ? "" : " ") + std::string("r=") + std::to_string(r);
  }
  return {violations == 0,
          std::to_string(probes) + " probes, " + std::to_string(violations) + " violations (" + configs + ")"};
}

// ---------------------------------------------------------------- C3

Outcome codecs() {
  std::string failed;
  double grid = 0.0;
  for (int i = -20000; i <= 20000; ++i) {
    const double x = i / 20000.0;
    grid = std::max(grid, std::abs(mu_law_decode(mu_law_encode(x)) - x));
  }
  if (grid > 0.03) failed += " mu-law";

  Rng rng(4);
  double unit = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    SpectralFrame f;
    f.sp.resize(257);
    for (auto& v : f.sp) v = std::exp(rng.normal(0.0, 3.0));
    const auto n = unit_sum_normalize(f);
    long double sum = 0.0L;
    for (double v : n.frame.sp) sum += v;
    unit = std::max(unit, static_cast<double>(std::abs(sum - 1.0L)));
    for (std::size_t k = 0; k < f.sp.size(); ++k)
      unit = std::max(unit, std::abs(n.frame.sp[k] * n.energy_factor - f.sp[k]) / f.sp[k]);
  }
  if (unit > 1e-12) failed += " unit-sum";

  // Feature files: in memory and through the filesystem.
  const fs::path dir = fs::temp_directory_path() / ("vcwn_acc_codec_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  ToyCorpusConfig cc;
  cc.utt_seconds = 0.4;
  const FeatureTrack track = analyze(synthesize_toy_utterance(cc, toy_voices(cc)[1], 0)).track;
  const auto bytes = encode_feature_track(track);
  if (encode_feature_track(decode_feature_track(bytes)) != bytes) failed += " vcft";
  write_feature_track((dir / "a.vcft").string(), track);
  write_feature_track((dir / "b.vcft").string(), read_feature_track((dir / "a.vcft").string()));
  if (slurp(dir / "a.vcft") != slurp(dir / "b.vcft")) failed += " vcft-file";

  // Checkpoints of both model families.
  Rng mr(9);
  VaeConfig vc;
  vc.n_speakers = 3;
  VaeModel vae(vc, mr);
  vae.set_speakers({"a", "b", "c"});
  const WaveNetModel wn(WaveNetConfig::toy(), mr);
  for (const Checkpoint& c : {vae.to_checkpoint(), wn.to_checkpoint()}) {
    const auto raw = c.serialize();
    if (Checkpoint::deserialize(raw).serialize() != raw) failed += " vcrm";
    c.save((dir / "m.vcrm").string());
    Checkpoint::load((dir / "m.vcrm").string()).save((dir / "n.vcrm").string());
    if (slurp(dir / "m.vcrm") != slurp(dir / "n.vcrm")) failed += " vcrm-file";
  }
  if (VaeModel::from_checkpoint(vae.to_checkpoint()).to_checkpoint().serialize() != vae.to_checkpoint().serialize())
    failed += " vae-restore";
  if (WaveNetModel::from_checkpoint(wn.to_checkpoint()).to_checkpoint().serialize() != wn.to_checkpoint().serialize())
    failed += " wavenet-restore";
  fs::remove_all(dir);

  Outcome o{failed.empty(), "mu-law max err " + fmt("%.4f", grid) + ", unit-sum rel err " + fmt("%.1e", unit) +
                                ", VCFT/VCRM byte-exact"};
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// ---------------------------------------------------------------- C4

Outcome kl_monte_carlo() {
  // E_q[log q(z) - log p(z)] with z = mu + sigma * eps.
  Rng rng(31);
  const std::size_t dims = 16, samples = 100000;
  int within = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mu({dims, 1}), logvar({dims, 1});
    for (double& v : mu.values()) v = rng.normal(0.0, 1.0);
    for (double& v : logvar.values()) v = rng.uniform(-2.0, 1.0);
    Tape tape;
    const double closed = ops::gaussian_kl(tape.constant(mu), tape.constant(logvar)).value().item();
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      double v = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double e = rng.normal();
        const double z = mu[d] + std::exp(0.5 * logvar[d]) * e;
        v += -0.5 * logvar[d] - 0.5 * e * e + 0.5 * z * z;
      }
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / samples;
    const double se = std::sqrt((sum_sq - samples * mean * mean) / (samples - 1) / samples);
    const double z = std::abs(mean - closed) / se;
    worst = std::max(worst, z);
    if (z <= 3.0) ++within;
  }
  return {within == 100, std::to_string(within) + "/100 posteriors within 3 SE, worst " + fmt("%.2f", worst) + " SE"};
}

// ---------------------------------------------------------------- C5

double brute_force(const std::vector<std::vector<double>>& c, std::size_t i, std::size_t j) {
  const std::size_t I = c.size(), J = c[0].size();
  if (i == I - 1 && j == J - 1) return c[i][j];
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < I) best = std::min(best, brute_force(c, i + 1, j));
  if (j + 1 < J) best = std::min(best, brute_force(c, i, j + 1));
  if (i + 1 < I && j + 1 < J) best = std::min(best, brute_force(c, i + 1, j + 1));
  return c[i][j] + best;
}

Outcome dtw_oracle() {
  Rng rng(2);
  int agree = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t I = 1 + rng.index(6), J = 1 + rng.index(6);
    const FeatureTrack a = random_track(rng, I, 0.4), b = random_track(rng, J, 0.4);
    std::vector<std::vector<double>> c(I, std::vector<double>(J));
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) c[i][j] = mcd_frames(a, i, b, j);
    const double oracle = brute_force(c, 0, 0);
    const AlignmentPath p = dtw_align(a, b);
    double along = 0.0;
    for (const auto& [i, j] : p.steps) along += c[i][j];
    const double err = std::max(std::abs(p.cost - oracle), std::abs(along - oracle)) / oracle;
    worst = std::max(worst, err);
    if (err <= 1e-12) ++agree;
  }
  return {agree == 50, std::to_string(agree) + "/50 instances equal, max rel diff " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------- C6

Outcome uniform_nll() {
  const double ln256 = std::log(256.0);
  Rng rng(3);
  double worst = 0.0;
  for (const WaveNetConfig& c : {WaveNetConfig::toy(), WaveNetConfig{}}) {
    const WaveNetModel m(c, rng);
    const FeatureTrack track = random_track(rng, 6, 0.3);
    Waveform wave;
    wave.samples.resize(6 * 80);
    for (double& s : wave.samples) s = std::clamp(0.3 * rng.normal(), -1.0, 1.0);
    worst = std::max(worst, std::abs(teacher_forced_nll(m, wave, upsample_conditioning(track, 16000)) - ln256));
  }
  return {worst <= 1e-6, "|NLL - ln 256| = " + fmt("%.1e", worst)};
}

// ------------------------------------------------------- experiment runs

struct RunRecord {
  fs::path root;
  std::map<std::string, double> seconds;
  std::string error;
};

RunRecord run_experiment(const ExperimentConfig& cfg, const fs::path& root) {
  RunRecord r;
  r.root = root;
  ExperimentConfig c = cfg;
  c.set("out", root.string());
  try {
    fs::remove_all(root);
    Experiment e(c);
    e.set_progress_sink([](std::string_view line) {
      if (line.find(" done in ") != std::string_view::npos) std::cerr << line << "\n";
    });
    for (const std::string& s : stage_names()) {
      const auto t0 = Clock::now();
      e.run(s);
      r.seconds[s] = since(t0);
    }
  } catch (const std::exception& ex) {
    r.error = ex.what();
  }
  return r;
}

double sum_seconds(const RunRecord& r, std::initializer_list<const char*> stages) {
  double s = 0.0;
  for (const char* st : stages) s += r.seconds.count(st) ? r.seconds.at(st) : 0.0;
  return s;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Two-pass population variance per shape dim, long double accumulation.
std::vector<long double> variance_oracle(const FeatureTrack& t) {
  std::vector<long double> var(kShapeDims, 0.0L);
  const std::size_t n = t.frames();
  for (std::size_t d = 0; d < kShapeDims; ++d) {
    long double mean = 0.0L;
    for (std::size_t i = 0; i < n; ++i) mean += t.frame(i)[d + 1];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) {
      const long double x = t.frame(i)[d + 1] - mean;
      var[d] += x * x;
    }
    var[d] /= n;
  }
  return var;
}

double mean_gv(const std::vector<FeatureTrack>& tracks) {
  long double s = 0.0L;
  for (const FeatureTrack& t : tracks)
    for (long double v : variance_oracle(t)) s += v;
  return static_cast<double>(s / (tracks.size() * kShapeDims));
}

std::vector<FeatureTrack> tracks_under(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::recursive_directory_iterator(dir))
    if (f.path().extension() == ".vcft") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::vector<FeatureTrack> out;
  for (const fs::path& p : files) out.push_back(read_feature_track(p.string()));
  return out;
}

struct Loaded {
  CorpusManifest corpus;
  std::map<std::string, GvVector> gv;
};

Loaded load_run(const fs::path& root) {
  Loaded l;
  l.corpus = CorpusManifest::load((root / layout::corpus_manifest()).string());
  const json doc = json::parse(slurp(root / layout::profiles()));
  for (const json& s : doc.at("speakers")) l.gv[s.at("id").get<std::string>()] = s.at("gv").get<GvVector>();
  return l;
}

FeatureTrack natural_track(const fs::path& root, const ManifestEntry& e) {
  return read_feature_track((root / layout::features(e.speaker, e.utterance_id())).string());
}

// ---------------------------------------------------------------- C7

Outcome mismatch_analysis(const ExperimentConfig& cfg, const RunRecord& run) {
  if (!run.error.empty()) return {false, "run failed: " + run.error};
  std::map<int, std::vector<double>> d;
  std::set<std::string> pairs;
  for (const auto& row : read_csv(run.root / layout::report("distances.csv"))) {
    d[std::stoi(row.at(2))].push_back(std::stod(row.at(3)));
    pairs.insert(row.at(0));
  }
  const std::size_t n = cfg.get_size("corpus.speakers");
  if (pairs.size() != n * (n - 1) || d[1].empty() || d[1].size() != d[2].size() || d[1].size() != d[3].size())
    return {false, "distance report incomplete"};
  const double m1 = median_of(d[1]), m2 = median_of(d[2]), m3 = median_of(d[3]);
  const double secs = sum_seconds(run, {"gen-corpus", "analyze-corpus", "train-vae", "evaluate"});
  const bool steps_ok = cfg.vae_train().steps >= 2000;
  Outcome o;
  o.pass = steps_ok && m2 > 0.0 && m3 < m1 && secs <= 15 * 60;
  o.detail = "median Dist1 " + fmt("%.3f", m1) + " Dist2 " + fmt("%.3f", m2) + " Dist3 " + fmt("%.3f", m3) +
             " dB over " + std::to_string(pairs.size()) + " pairs; VAE " + std::to_string(cfg.vae_train().steps) +
             " steps; " + fmt("%.0f", secs) + " s";
  return o;
}

// ---------------------------------------------------------------- C8

Outcome over_smoothing(const RunRecord& run) {
  if (!run.error.empty()) return {false, "run failed: " + run.error};
  const Loaded l = load_run(run.root);
  std::vector<FeatureTrack> natural;
  for (const std::string& s : l.corpus.speakers)
    for (const ManifestEntry& e : l.corpus.select(s, "test")) natural.push_back(natural_track(run.root, e));
  const double gn = mean_gv(natural);
  const double gr = mean_gv(tracks_under(run.root / "reports/tracks/reconstructed"));
  const double gc = mean_gv(tracks_under(run.root / "reports/tracks/converted"));
  return {gn > gr && gn > gc,
          "mean GV natural " + fmt("%.4f", gn) + ", reconstructed " + fmt("%.4f", gr) + ", converted " + fmt("%.4f", gc)};
}

// ---------------------------------------------------------------- C9

Outcome gv_exactness(const ExperimentConfig& cfg, const RunRecord& run) {
  if (!run.error.empty()) return {false, "run failed: " + run.error};
  const Loaded l = load_run(run.root);
  const VaeModel vae = VaeModel::from_checkpoint(Checkpoint::load((run.root / layout::vae()).string()));
  std::size_t count = 0;
  double worst = 0.0;
  auto check = [&](const FeatureTrack& before, const GvVector& target) {
    const FeatureTrack after = gv_postfilter(before, target);
    const auto pre = variance_oracle(before), post = variance_oracle(after);
    for (std::size_t d = 0; d < kShapeDims; ++d)
      if (pre[d] >= 1e-12L)
        worst = std::max(worst, static_cast<double>(std::abs(post[d] - target[d]) / target[d]));
    ++count;
  };
  std::vector<std::string> targets = cfg.targets();
  if (targets.empty()) targets = l.corpus.speakers;
  for (const std::string& t : targets) {
    // Adaptation set: reconstructed target training tracks.
    for (const ManifestEntry& e : l.corpus.select(t, "train"))
      check(vae.forward(natural_track(run.root, e), vae.code_for(t), ForwardMode::kReconstruct), l.gv.at(t));
    // Conversion input of every GV system: converted, energy-compensated tracks.
    for (const std::string& src : l.corpus.speakers) {
      if (src == t) continue;
      for (const ManifestEntry& e : l.corpus.select(src, "test")) {
        const FeatureTrack nat = natural_track(run.root, e);
        check(compensate_energy(vae.forward(nat, vae.code_for(t), ForwardMode::kConvert), nat), l.gv.at(t));
      }
    }
  }
  // The in-memory figures the convert stage recorded.
  std::size_t reported = 0;
  for (const auto& row : read_csv(run.root / layout::report("systems.csv")))
    if (row.size() > 6 && !row[6].empty()) {
      ++reported;
      worst = std::max(worst, std::stod(row[6]));
    }
  return {count > 0 && worst <= 1e-9,
          std::to_string(count) + " filtered utterances + " + std::to_string(reported) +
              " system outputs, max rel err " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------- C10

Outcome mismatch_reduction(const ExperimentConfig& cfg, const RunRecord& run) {
  if (!run.error.empty()) return {false, "run failed: " + run.error};
  const Loaded l = load_run(run.root);
  const VaeModel vae = VaeModel::from_checkpoint(Checkpoint::load((run.root / layout::vae()).string()));

  // Same budget: steps actually run per (target, kind) from the stage log.
  std::map<std::string, std::map<std::string, double>> steps;
  std::istringstream log(slurp(run.root / layout::stage_log("finetune")));
  std::string line;
  while (std::getline(log, line)) {
    const json ev = json::parse(line);
    if (ev.value("event", "") == "metric" && ev.value("name", "") == "steps_run")
      steps[ev.at("target").get<std::string>()][ev.at("kind").get<std::string>()] = ev.at("value").get<double>();
  }

  std::vector<std::string> targets = cfg.targets();
  if (targets.empty()) targets = l.corpus.speakers;
  bool pass = !targets.empty();
  std::string detail;
  for (const std::string& t : targets) {
    auto load = [&](AdaptingKind k) {
      return WaveNetModel::from_checkpoint(Checkpoint::load((run.root / layout::wavenet_finetuned(t, k)).string()));
    };
    const WaveNetModel nat = load(AdaptingKind::kNatural), rec = load(AdaptingKind::kReconstructed);
    double n_sum = 0.0, r_sum = 0.0;
    const auto tests = l.corpus.select(t, "test");
    for (const ManifestEntry& e : tests) {
      const Waveform wave = pad_to_frames(read_wav(l.corpus.resolve(e)));
      const FeatureTrack feats = vae.forward(natural_track(run.root, e), vae.code_for(t), ForwardMode::kReconstruct);
      const ConditioningPlan plan = upsample_conditioning(feats, wave.sample_rate);
      n_sum += teacher_forced_nll(nat, wave, plan);
      r_sum += teacher_forced_nll(rec, wave, plan);
    }
    const double n_mean = n_sum / tests.size(), r_mean = r_sum / tests.size();
    const bool same_budget = steps[t].count("natural") && steps[t].count("reconstructed") &&
                             steps[t]["natural"] == steps[t]["reconstructed"];
    pass = pass && same_budget && r_mean < n_mean;
    detail += (detail.empty() ? "" : "; ") + t + " reconstructed " + fmt("%.4f", r_mean) + " < natural " +
              fmt("%.4f", n_mean) + " nats (" + fmt("%.0f", steps[t]["reconstructed"]) + " steps each)";
  }
  const double secs = sum_seconds(run, {"gen-corpus", "analyze-corpus", "train-vae", "train-wavenet-si",
                                        "build-adapt-set", "finetune", "evaluate"});
  pass = pass && secs <= 30 * 60;
  return {pass, detail + "; " + fmt("%.0f", secs) + " s"};
}

// ---------------------------------------------------------------- C11

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::is_directory(root)) return files;
  for (const auto& f : fs::recursive_directory_iterator(root))
    if (f.is_regular_file()) files[fs::relative(f.path(), root).generic_string()] = slurp(f.path());
  return files;
}

Outcome completeness(const ExperimentConfig& cfg, const RunRecord& a, const RunRecord& b) {
  if (!a.error.empty()) return {false, "run failed: " + a.error};
  if (!b.error.empty()) return {false, "re-run failed: " + b.error};
  std::string failed;
  const Loaded l = load_run(a.root);
  std::vector<std::string> targets = cfg.targets();
  if (targets.empty()) targets = l.corpus.speakers;
  const std::size_t per_pair = std::min(cfg.convert_utterances(), l.corpus.select(targets[0], "test").size());

  std::size_t wavs = 0;
  for (const SystemSpec& spec : system_specs()) {
    std::size_t expected = 0, got = 0;
    for (const std::string& t : targets) {
      std::vector<std::string> sources;
      if (spec.convert) {
        for (const std::string& s : l.corpus.speakers)
          if (s != t) sources.push_back(s);
      } else {
        sources.push_back(t);
      }
      for (const std::string& src : sources) {
        const auto tests = l.corpus.select(src, "test");
        for (std::size_t k = 0; k < per_pair; ++k, ++expected) {
          const std::string base = layout::system_output(spec.id, src, t, tests[k].utterance_id());
          if (!fs::is_regular_file(a.root / (base + ".wav"))) continue;
          const Waveform w = read_wav((a.root / (base + ".wav")).string());
          const FeatureTrack nat = natural_track(a.root, tests[k]);
          const bool finite = std::all_of(w.samples.begin(), w.samples.end(), [](double v) { return std::isfinite(v); });
          if (finite && w.samples.size() == nat.frames() * frame_shift_samples(nat.frame_shift_ms, w.sample_rate)) ++got;
        }
      }
    }
    if (expected == 0 || got != expected) failed += " " + spec.id;
    wavs += got;
  }

  // Manifest: every artifact on disk (logs and the manifest aside) is listed
  // with matching size and hash, and nothing listed is missing.
  const json m = json::parse(slurp(a.root / layout::manifest()));
  std::map<std::string, json> listed;
  for (const json& art : m.at("artifacts")) listed[art.at("path").get<std::string>()] = art;
  std::size_t on_disk = 0;
  bool manifest_ok = m.at("stages").size() == stage_names().size();
  for (const auto& [rel, bytes] : tree(a.root)) {
    if (rel == layout::manifest() || rel.rfind("logs/", 0) == 0) continue;
    ++on_disk;
    const auto it = listed.find(rel);
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    if (it == listed.end() || it->second.at("bytes").get<std::size_t>() != bytes.size() ||
        it->second.at("fnv1a").get<std::string>() != hash ||
        it->second.at("config_hash").get<std::string>() != m.at("config_hash").get<std::string>())
      manifest_ok = false;
  }
  if (on_disk != listed.size()) manifest_ok = false;
  if (!manifest_ok) failed += " manifest";

  const auto ra = tree(a.root / "reports"), rb = tree(b.root / "reports");
  const bool identical = !ra.empty() && ra == rb && slurp(a.root / layout::manifest()) == slurp(b.root / layout::manifest());
  if (!identical) failed += " re-run";

  Outcome o{failed.empty(), std::to_string(system_specs().size()) + " systems, " + std::to_string(wavs) +
                                " finite length-correct WAVs, manifest " + std::to_string(listed.size()) +
                                " artifacts, " + std::to_string(ra.size()) + " report files " +
                                (identical ? "byte-identical" : "differ") + " on re-run"};
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion", "vcwn_acceptance"};
  std::string work = (fs::temp_directory_path() / "vcwn_acceptance").string();
  std::string config_file;
  std::vector<int> only;
  std::vector<std::string> sets;
  bool keep = false;
  app.add_option("--work", work, "scratch directory for the experiment runs");
  app.add_option("--config", config_file, "experiment config for criteria 7-11")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "override a config key: KEY=VALUE (repeatable)");
  app.add_option("--only", only, "criterion numbers to run (default: all)")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_flag("--keep", keep, "keep the run directories");
  CLI11_PARSE(app, argc, argv);

  // Toy-scale defaults: 4 speakers, 20 + 5 utterances of 1 s, 2000 VAE
  // steps, SI 1000 steps, 200 fine-tuning steps per adapted vocoder.
  ExperimentConfig cfg;
  cfg.set("seed", "1");
  cfg.set("vae.steps", "2000");
  cfg.set("targets", "spk02");
  if (!config_file.empty()) cfg.merge_file(config_file);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects KEY=VALUE\n";
      return 2;
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.set("out", (fs::path(work) / "a").string());
  try {
    cfg.require_valid();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  RunRecord a, b;
  bool have_a = false, have_b = false;
  auto need_a = [&] {
    if (!have_a) {
      std::cerr << "experiment run (config " << cfg.hash() << ") in " << work << "/a\n";
      a = run_experiment(cfg, fs::path(work) / "a");
      have_a = true;
    }
    return a;
  };
  auto need_b = [&] {
    if (!have_b) {
      std::cerr << "re-run with the same seed in " << work << "/b\n";
      b = run_experiment(cfg, fs::path(work) / "b");
      have_b = true;
    }
    return b;
  };

  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;  // 0 = none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 60, gradient_fidelity},
      {2, "causality and receptive field", 60, causality},
      {3, "codec round trips", 0, codecs},
      {4, "KL vs Monte Carlo", 0, kl_monte_carlo},
      {5, "DTW vs brute force", 0, dtw_oracle},
      {6, "uniform-model NLL", 0, uniform_nll},
      {7, "mismatch analysis", 0, [&] { return mismatch_analysis(cfg, need_a()); }},
      {8, "over-smoothing", 0, [&] { return over_smoothing(need_a()); }},
      {9, "GV postfilter exactness", 0, [&] { return gv_exactness(cfg, need_a()); }},
      {10, "mismatch reduction", 0, [&] { return mismatch_reduction(cfg, need_a()); }},
      {11, "system table completeness", 0, [&] { return completeness(cfg, need_a(), need_b()); }},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = since(t0);
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.limit_seconds) + " s limit";
    }
    failures += !o.pass;
    std::printf("C%-2d %-30s %s  %s [%.1f s]\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(work);
  std::printf("%d/%zu criteria passed\n",
              static_cast<int>(std::count_if(criteria.begin(), criteria.end(), [&](const Criterion& c) { return wanted(c.id); })) -
                  failures,
              static_cast<std::size_t>(std::count_if(criteria.begin(), criteria.end(),
                                                     [&](const Criterion& c) { return wanted(c.id); })));
  return failures == 0 ? 0 : 1;
}
