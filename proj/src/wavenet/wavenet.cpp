#include "vcwn/wavenet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vcwn/error.hpp"
#include "vcwn/optim.hpp"

namespace vcwn {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

Eigen::Map<const Eigen::VectorXd> vec(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

std::string layer_name(std::size_t l, const char* what) {
  return "l" + std::to_string(l) + "." + what;
}

// Log-f0 used when an utterance has no voiced frame at all.
constexpr double kFallbackLogF0 = 4.6051701859880914;  // ln 100

void softmax_inplace(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : v) x /= s;
}

}  // namespace

// --- config -------------------------------------------------------------------

WaveNetConfig WaveNetConfig::toy() {
  WaveNetConfig c;
  c.n_stacks = 1;
  c.dilations = {1, 2, 4, 8, 16, 32, 64, 128};
  c.residual_channels = 16;
  c.skip_channels = 32;
  return c;
}

std::size_t WaveNetConfig::receptive_field() const {
  std::size_t sum = 0;
  for (std::size_t l = 0; l < layers(); ++l) sum += dilation(l);
  return 1 + sum;
}

std::size_t receptive_field(const WaveNetConfig& config) {
  config.validate();
  return config.receptive_field();
}

void WaveNetConfig::validate() const {
  require(n_stacks >= 1 && !dilations.empty(), ErrorCode::kConfig,
          "wavenet: need at least one stack and one dilation");
  for (std::size_t d : dilations)
    require(d >= 1, ErrorCode::kConfig, "wavenet: dilations must be positive");
  require(residual_channels >= 1 && skip_channels >= 1 && cond_dims >= 1, ErrorCode::kConfig,
          "wavenet: channel counts must be positive");
  require(levels >= 2, ErrorCode::kConfig, "wavenet: need at least 2 quantization levels");
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kUntrained: return "untrained";
    case Provenance::kSI: return "SI";
    case Provenance::kFinetunedNatural: return "finetuned-natural";
    case Provenance::kFinetunedReconstructed: return "finetuned-reconstructed";
    case Provenance::kFinetunedReconstructedGV: return "finetuned-reconstructed-GV";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  for (Provenance p : {Provenance::kUntrained, Provenance::kSI, Provenance::kFinetunedNatural,
                       Provenance::kFinetunedReconstructed, Provenance::kFinetunedReconstructedGV})
    if (s == to_string(p)) return p;
  fail(ErrorCode::kFormat, "unknown provenance tag '" + s + "'");
}

// --- conditioning ---------------------------------------------------------------

Tensor ConditioningPlan::expand() const {
  const std::size_t dims = frames.rows();
  const std::size_t n = length();
  Tensor out({dims, n});
  for (std::size_t d = 0; d < dims; ++d)
    for (std::size_t t = 0; t < n; ++t) out.at(d, t) = frames.at(d, frame_of(t));
  return out;
}

ConditioningPlan upsample_conditioning(const FeatureTrack& track, int sample_rate) {
  track.validate();
  const std::size_t n = track.frames();
  require(n > 0, ErrorCode::kInvalidArgument, "upsample_conditioning: empty track");
  ConditioningPlan plan;
  plan.samples_per_frame = frame_shift_samples(track.frame_shift_ms, sample_rate);
  plan.frames = Tensor({kConditioningDims, n});

  // Continuous log-f0: interpolate across unvoiced runs, hold at the ends.
  std::vector<double> lf0(n, kFallbackLogF0);
  std::vector<std::size_t> voiced;
  for (std::size_t t = 0; t < n; ++t)
    if (track.voiced[t]) voiced.push_back(t);
  if (!voiced.empty()) {
    std::size_t k = 0;
    for (std::size_t t = 0; t < n; ++t) {
      while (k + 1 < voiced.size() && voiced[k + 1] <= t) ++k;
      if (t <= voiced.front()) {
        lf0[t] = track.log_f0[voiced.front()];
      } else if (t >= voiced.back()) {
        lf0[t] = track.log_f0[voiced.back()];
      } else {
        const std::size_t a = voiced[k], b = voiced[k + 1];
        const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
        lf0[t] = (1.0 - w) * track.log_f0[a] + w * track.log_f0[b];
      }
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    const auto f = track.frame(t);
    for (std::size_t d = 0; d < kShapeDims; ++d) plan.frames.at(d, t) = f[d + 1];
    plan.frames.at(kShapeDims, t) = std::log(track.energy[t]);
    plan.frames.at(kShapeDims + 1, t) = lf0[t];
    plan.frames.at(kShapeDims + 2, t) = track.voiced[t] ? 1.0 : 0.0;
  }
  require(plan.frames.all_finite(), ErrorCode::kNonFinite,
          "upsample_conditioning: non-finite conditioning");
  return plan;
}

// --- model ----------------------------------------------------------------------

WaveNetModel::WaveNetModel(const WaveNetConfig& config) : config_(config) {
  config.validate();
  const std::size_t R = config.residual_channels, S = config.skip_channels,
                    C = config.cond_dims, Q = config.levels;
  params_.add("embed", Tensor({R, Q}));
  for (std::size_t l = 0; l < config.layers(); ++l) {
    params_.add(layer_name(l, "conv"), Tensor({2 * R, 2 * R}));
    params_.add(layer_name(l, "conv_b"), Tensor({2 * R, 1}));
    params_.add(layer_name(l, "cond"), Tensor({2 * R, C}));
    params_.add(layer_name(l, "skip"), Tensor({S, R}));
    params_.add(layer_name(l, "skip_b"), Tensor({S, 1}));
    if (l + 1 < config.layers()) {
      params_.add(layer_name(l, "res"), Tensor({R, R}));
      params_.add(layer_name(l, "res_b"), Tensor({R, 1}));
    }
  }
  params_.add("out1", Tensor({S, S}));
  params_.add("out1_b", Tensor({S, 1}));
  params_.add("out2", Tensor({Q, S}));
  params_.add("out2_b", Tensor({Q, 1}));
  cond_mean_.assign(C, 0.0);
  cond_std_.assign(C, 1.0);
}

WaveNetModel::WaveNetModel(const WaveNetConfig& config, Rng& rng) : WaveNetModel(config) {
  for (Parameter& p : params_.items()) {
    if (p.value.cols() == 1 || p.name == "out2") continue;
    if (p.name == "embed") {
      for (double& w : p.value.values()) w = rng.normal(0.0, 1.0);
      continue;
    }
    const double a = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (double& w : p.value.values()) w = rng.uniform(-a, a);
  }
}

void WaveNetModel::set_normalization(std::vector<double> mean, std::vector<double> stddev) {
  require(mean.size() == config_.cond_dims && stddev.size() == config_.cond_dims,
          ErrorCode::kInvalidArgument, "wavenet: normalization statistics have the wrong size");
  for (std::size_t d = 0; d < stddev.size(); ++d)
    require(std::isfinite(mean[d]) && std::isfinite(stddev[d]) && stddev[d] > 0.0,
            ErrorCode::kInvalidArgument, "wavenet: normalization stddev must be positive");
  cond_mean_ = std::move(mean);
  cond_std_ = std::move(stddev);
}

Var WaveNetModel::leaf(Tape& tape, const std::string& name, bool trainable) const {
  Parameter& p = params_.get(name);
  return trainable ? tape.parameter(p) : tape.constant(p.value);
}

std::vector<int> WaveNetModel::shifted_inputs(std::span<const int> targets) const {
  std::vector<int> in(targets.size());
  if (!in.empty()) in[0] = start_code();
  for (std::size_t t = 1; t < targets.size(); ++t) in[t] = targets[t - 1];
  return in;
}

Tensor WaveNetModel::conditioning(const ConditioningPlan& plan, std::size_t begin,
                                  std::size_t count) const {
  require(plan.frames.rows() == config_.cond_dims, ErrorCode::kInvalidArgument,
          "wavenet: conditioning has " + std::to_string(plan.frames.rows()) + " dims, model expects " +
              std::to_string(config_.cond_dims));
  require(begin + count <= plan.length(), ErrorCode::kInvalidArgument,
          "wavenet: conditioning range past the plan end");
  Tensor out({config_.cond_dims, count});
  for (std::size_t d = 0; d < config_.cond_dims; ++d)
    for (std::size_t t = 0; t < count; ++t)
      out.at(d, t) = (plan.frames.at(d, plan.frame_of(begin + t)) - cond_mean_[d]) / cond_std_[d];
  return out;
}

Var WaveNetModel::logits_graph(Tape& tape, std::span<const int> inputs, Var cond,
                               bool trainable) const {
  const std::size_t R = config_.residual_channels;
  require(cond.value().rows() == config_.cond_dims && cond.value().cols() == inputs.size(),
          ErrorCode::kInvalidArgument, "wavenet: conditioning shape mismatch");
  Var x = ops::embedding(leaf(tape, "embed", trainable), inputs);
  Var skips;
  for (std::size_t l = 0; l < config_.layers(); ++l) {
    Var a = ops::conv1d_causal(x, leaf(tape, layer_name(l, "conv"), trainable), config_.dilation(l));
    a = ops::add_bias(a, leaf(tape, layer_name(l, "conv_b"), trainable));
    a = ops::add(a, ops::matmul(leaf(tape, layer_name(l, "cond"), trainable), cond));
    const Var z = ops::mul(ops::tanh(ops::slice_rows(a, 0, R)), ops::sigmoid(ops::slice_rows(a, R, R)));
    const Var s = ops::add_bias(ops::matmul(leaf(tape, layer_name(l, "skip"), trainable), z),
                                leaf(tape, layer_name(l, "skip_b"), trainable));
    skips = skips.valid() ? ops::add(skips, s) : s;
    if (l + 1 < config_.layers())
      x = ops::add(x, ops::add_bias(ops::matmul(leaf(tape, layer_name(l, "res"), trainable), z),
                                    leaf(tape, layer_name(l, "res_b"), trainable)));
  }
  Var h = ops::relu(skips);
  h = ops::relu(ops::add_bias(ops::matmul(leaf(tape, "out1", trainable), h),
                              leaf(tape, "out1_b", trainable)));
  return ops::add_bias(ops::matmul(leaf(tape, "out2", trainable), h),
                       leaf(tape, "out2_b", trainable));
}

namespace {

// Untaped forward over a whole sequence. cond_cols holds normalized
// conditioning columns; column_of[t] selects the one used at step t.
Mat fast_logits(const WaveNetModel& model, std::span<const int> inputs, const Mat& cond_cols,
                std::span<const std::size_t> column_of) {
  const WaveNetConfig& c = model.config();
  const ParameterSet& p = model.parameters();
  const auto R = static_cast<Eigen::Index>(c.residual_channels);
  const auto T = static_cast<Eigen::Index>(inputs.size());
  const auto embed = view(p.get("embed").value);
  Mat x(R, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int code = inputs[static_cast<std::size_t>(t)];
    require(code >= 0 && static_cast<std::size_t>(code) < c.levels, ErrorCode::kInvalidArgument,
            "wavenet: input code out of range");
    x.col(t) = embed.col(code);
  }
  Mat skips = Mat::Zero(static_cast<Eigen::Index>(c.skip_channels), T);
  Mat a(2 * R, T), z(R, T);
  for (std::size_t l = 0; l < c.layers(); ++l) {
    const auto W = view(p.get(layer_name(l, "conv")).value);
    const auto d = static_cast<Eigen::Index>(c.dilation(l));
    a.noalias() = W.rightCols(R) * x;
    if (d < T) a.rightCols(T - d).noalias() += W.leftCols(R) * x.leftCols(T - d);
    a.colwise() += vec(p.get(layer_name(l, "conv_b")).value);
    const Mat proj = view(p.get(layer_name(l, "cond")).value) * cond_cols;
    for (Eigen::Index t = 0; t < T; ++t)
      a.col(t) += proj.col(static_cast<Eigen::Index>(column_of[static_cast<std::size_t>(t)]));
    z = a.topRows(R).array().tanh() * (1.0 / (1.0 + (-a.bottomRows(R).array()).exp()));
    skips.noalias() += view(p.get(layer_name(l, "skip")).value) * z;
    skips.colwise() += vec(p.get(layer_name(l, "skip_b")).value);
    if (l + 1 < c.layers()) {
      x.noalias() += view(p.get(layer_name(l, "res")).value) * z;
      x.colwise() += vec(p.get(layer_name(l, "res_b")).value);
    }
  }
  Mat h = skips.cwiseMax(0.0);
  Mat h2 = view(p.get("out1").value) * h;
  h2.colwise() += vec(p.get("out1_b").value);
  h2 = h2.cwiseMax(0.0);
  Mat out = view(p.get("out2").value) * h2;
  out.colwise() += vec(p.get("out2_b").value);
  return out;
}

Mat to_mat(const Tensor& t) { return view(t); }

}  // namespace

Tensor WaveNetModel::logits(std::span<const int> inputs, const Tensor& cond) const {
  require(cond.rows() == config_.cond_dims && cond.cols() == inputs.size(),
          ErrorCode::kInvalidArgument, "wavenet: conditioning shape mismatch");
  std::vector<std::size_t> cols(inputs.size());
  std::iota(cols.begin(), cols.end(), 0);
  const Mat out = fast_logits(*this, inputs, to_mat(cond), cols);
  Tensor t({static_cast<std::size_t>(out.rows()), static_cast<std::size_t>(out.cols())});
  Eigen::Map<RowMat>(t.data(), out.rows(), out.cols()) = out;
  return t;
}

// --- checkpoint -----------------------------------------------------------------

Checkpoint WaveNetModel::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["model"] = "wavenet";
  ck.meta["wavenet.n_stacks"] = std::to_string(config_.n_stacks);
  std::string dil;
  for (std::size_t i = 0; i < config_.dilations.size(); ++i)
    dil += (i ? "," : "") + std::to_string(config_.dilations[i]);
  ck.meta["wavenet.dilations"] = dil;
  ck.meta["wavenet.residual_channels"] = std::to_string(config_.residual_channels);
  ck.meta["wavenet.skip_channels"] = std::to_string(config_.skip_channels);
  ck.meta["wavenet.cond_dims"] = std::to_string(config_.cond_dims);
  ck.meta["wavenet.levels"] = std::to_string(config_.levels);
  ck.meta["wavenet.receptive_field"] = std::to_string(config_.receptive_field());
  ck.meta["provenance"] = to_string(provenance_);
  ck.meta["speaker"] = speaker_;
  ck.add_parameters(params_);
  ck.tensors.emplace_back("cond.mean", Tensor({cond_mean_.size(), 1}, cond_mean_));
  ck.tensors.emplace_back("cond.std", Tensor({cond_std_.size(), 1}, cond_std_));
  return ck;
}

WaveNetModel WaveNetModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.count("model") == 0 || ck.get_meta("model") != "wavenet")
    fail(ErrorCode::kFormat, "checkpoint does not hold a WaveNet model");
  auto number = [](const std::string& s, const std::string& key) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, "wavenet checkpoint: bad value for " + key);
    }
  };
  WaveNetConfig c;
  c.n_stacks = number(ck.get_meta("wavenet.n_stacks"), "n_stacks");
  c.dilations.clear();
  const std::string& dil = ck.get_meta("wavenet.dilations");
  std::size_t pos = 0;
  while (pos <= dil.size()) {
    const std::size_t comma = std::min(dil.find(',', pos), dil.size());
    c.dilations.push_back(number(dil.substr(pos, comma - pos), "dilations"));
    pos = comma + 1;
  }
  c.residual_channels = number(ck.get_meta("wavenet.residual_channels"), "residual_channels");
  c.skip_channels = number(ck.get_meta("wavenet.skip_channels"), "skip_channels");
  c.cond_dims = number(ck.get_meta("wavenet.cond_dims"), "cond_dims");
  c.levels = number(ck.get_meta("wavenet.levels"), "levels");
  WaveNetModel model(c);
  ck.load_parameters(model.params_);
  model.provenance_ = provenance_from_string(ck.get_meta("provenance"));
  model.speaker_ = ck.get_meta("speaker");
  const Tensor& m = ck.tensor("cond.mean");
  const Tensor& s = ck.tensor("cond.std");
  model.set_normalization({m.values().begin(), m.values().end()},
                          {s.values().begin(), s.values().end()});
  return model;
}

// --- likelihood and generation --------------------------------------------------

namespace {

std::vector<int> encode_wave(const Waveform& wave, std::size_t levels) {
  std::vector<int> codes(wave.samples.size());
  const int mu = static_cast<int>(levels) - 1;
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = mu_law_encode(wave.samples[i], mu);
  return codes;
}

Mat normalized_frames(const WaveNetModel& model, const ConditioningPlan& plan) {
  const WaveNetConfig& c = model.config();
  require(plan.frames.rows() == c.cond_dims, ErrorCode::kInvalidArgument,
          "wavenet: conditioning dims differ from the model's");
  require(plan.samples_per_frame >= 1, ErrorCode::kInvalidArgument,
          "wavenet: conditioning plan without samples per frame");
  Mat m = view(plan.frames);
  for (Eigen::Index d = 0; d < m.rows(); ++d)
    m.row(d) = (m.row(d).array() - model.cond_mean()[d]) / model.cond_std()[d];
  return m;
}

}  // namespace

double teacher_forced_nll(const WaveNetModel& model, const Waveform& wave,
                          const ConditioningPlan& plan) {
  require(plan.length() == wave.samples.size(), ErrorCode::kInvalidArgument,
          "teacher_forced_nll: plan length " + std::to_string(plan.length()) +
              " differs from waveform length " + std::to_string(wave.samples.size()));
  require(!wave.samples.empty(), ErrorCode::kInvalidArgument, "teacher_forced_nll: empty waveform");
  const std::vector<int> targets = encode_wave(wave, model.config().levels);
  const std::vector<int> inputs = model.shifted_inputs(targets);
  std::vector<std::size_t> cols(targets.size());
  for (std::size_t t = 0; t < cols.size(); ++t) cols[t] = plan.frame_of(t);
  const Mat logits = fast_logits(model, inputs, normalized_frames(model, plan), cols);
  double total = 0.0;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const double m = logits.col(t).maxCoeff();
    const double lse = m + std::log((logits.col(t).array() - m).exp().sum());
    total += lse - logits(targets[static_cast<std::size_t>(t)], t);
  }
  const double nll = total / static_cast<double>(targets.size());
  require(std::isfinite(nll), ErrorCode::kNonFinite, "teacher_forced_nll: non-finite result");
  return nll;
}

IncrementalGenerator::IncrementalGenerator(const WaveNetModel& model) : model_(model) {
  const WaveNetConfig& c = model.config();
  for (std::size_t l = 0; l < c.layers(); ++l) {
    history_.emplace_back(c.dilation(l) * c.residual_channels, 0.0);
    head_.push_back(0);
  }
}

std::vector<double> IncrementalGenerator::step(int input_code, std::span<const double> cond) {
  const WaveNetConfig& c = model_.config();
  const ParameterSet& p = model_.parameters();
  require(cond.size() == c.cond_dims, ErrorCode::kInvalidArgument,
          "incremental step: conditioning size mismatch");
  require(input_code >= 0 && static_cast<std::size_t>(input_code) < c.levels,
          ErrorCode::kInvalidArgument, "incremental step: code out of range");
  const auto R = static_cast<Eigen::Index>(c.residual_channels);
  const Eigen::Map<const Eigen::VectorXd> h(cond.data(), static_cast<Eigen::Index>(cond.size()));
  Eigen::VectorXd x = view(p.get("embed").value).col(input_code);
  Eigen::VectorXd skips = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.skip_channels));
  Eigen::VectorXd a(2 * R), z(R);
  for (std::size_t l = 0; l < c.layers(); ++l) {
    const auto W = view(p.get(layer_name(l, "conv")).value);
    // Ring slot head_ holds the layer input from `dilation` steps ago.
    double* slot = history_[l].data() + head_[l] * c.residual_channels;
    Eigen::Map<Eigen::VectorXd> past(slot, R);
    a.noalias() = W.rightCols(R) * x;
    if (t_ >= c.dilation(l)) a.noalias() += W.leftCols(R) * past;
    a += vec(p.get(layer_name(l, "conv_b")).value);
    a.noalias() += view(p.get(layer_name(l, "cond")).value) * h;
    past = x;
    head_[l] = (head_[l] + 1) % c.dilation(l);
    z = a.head(R).array().tanh() * (1.0 / (1.0 + (-a.tail(R).array()).exp()));
    skips.noalias() += view(p.get(layer_name(l, "skip")).value) * z;
    skips += vec(p.get(layer_name(l, "skip_b")).value);
    if (l + 1 < c.layers()) {
      x.noalias() += view(p.get(layer_name(l, "res")).value) * z;
      x += vec(p.get(layer_name(l, "res_b")).value);
    }
  }
  ++t_;
  Eigen::VectorXd h1 = view(p.get("out1").value) * skips.cwiseMax(0.0);
  h1 += vec(p.get("out1_b").value);
  Eigen::VectorXd out = view(p.get("out2").value) * h1.cwiseMax(0.0);
  out += vec(p.get("out2_b").value);
  return {out.data(), out.data() + out.size()};
}

Waveform sample(const WaveNetModel& model, const ConditioningPlan& plan, std::uint64_t seed,
                int sample_rate) {
  const Mat cond = normalized_frames(model, plan);
  require(cond.allFinite(), ErrorCode::kNonFinite, "sample: non-finite conditioning");
  Rng rng(seed);
  IncrementalGenerator gen(model);
  Waveform wave;
  wave.sample_rate = sample_rate;
  const std::size_t n = plan.length();
  wave.samples.resize(n);
  const int mu = static_cast<int>(model.config().levels) - 1;
  int code = model.start_code();
  std::vector<double> column(static_cast<std::size_t>(cond.rows()));
  for (std::size_t t = 0; t < n; ++t) {
    const auto f = static_cast<Eigen::Index>(plan.frame_of(t));
    Eigen::Map<Eigen::VectorXd>(column.data(), cond.rows()) = cond.col(f);
    std::vector<double> probs = gen.step(code, column);
    softmax_inplace(probs);
    const double u = rng.uniform();
    double acc = 0.0;
    code = mu;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) {
        code = static_cast<int>(k);
        break;
      }
    }
    wave.samples[t] = mu_law_decode(code, mu);
  }
  return wave;
}

// --- training -------------------------------------------------------------------

void validate_pairs(std::span<const VocoderPair> pairs) {
  require(!pairs.empty(), ErrorCode::kInvalidArgument, "vocoder training: no pairs");
  for (const VocoderPair& p : pairs) {
    require(p.track != nullptr && p.wave != nullptr, ErrorCode::kInvalidArgument,
            "vocoder training: incomplete pair");
    p.track->validate();
    const std::size_t spf = frame_shift_samples(p.track->frame_shift_ms, p.wave->sample_rate);
    require(p.track->frames() * spf == p.wave->samples.size(), ErrorCode::kInvalidArgument,
            "vocoder pair '" + p.utterance + "': " + std::to_string(p.track->frames()) +
                " frames x " + std::to_string(spf) + " samples != " +
                std::to_string(p.wave->samples.size()) + " samples");
  }
}

void conditioning_statistics(std::span<const VocoderPair> pairs, std::vector<double>& mean,
                             std::vector<double>& stddev) {
  mean.assign(kConditioningDims, 0.0);
  stddev.assign(kConditioningDims, 0.0);
  std::vector<ConditioningPlan> plans;
  std::size_t count = 0;
  for (const VocoderPair& p : pairs) {
    plans.push_back(upsample_conditioning(*p.track, p.wave->sample_rate));
    const Tensor& f = plans.back().frames;
    for (std::size_t t = 0; t < f.cols(); ++t)
      for (std::size_t d = 0; d < kConditioningDims; ++d) mean[d] += f.at(d, t);
    count += f.cols();
  }
  require(count > 0, ErrorCode::kInvalidArgument, "conditioning statistics: no frames");
  for (double& m : mean) m /= static_cast<double>(count);
  for (const ConditioningPlan& plan : plans) {
    const Tensor& f = plan.frames;
    for (std::size_t t = 0; t < f.cols(); ++t)
      for (std::size_t d = 0; d < kConditioningDims; ++d) {
        const double e = f.at(d, t) - mean[d];
        stddev[d] += e * e;
      }
  }
  for (double& s : stddev) s = std::max(std::sqrt(s / static_cast<double>(count)), 1e-3);
}

namespace {

struct PreparedPair {
  std::vector<int> targets;
  std::vector<int> inputs;
  ConditioningPlan plan;
};

WaveNetTrainingResult run_training(WaveNetModel model, std::span<const VocoderPair> pairs,
                                   const WaveNetTrainConfig& train, const char* stage) {
  require(train.batch >= 1 && train.window >= 1, ErrorCode::kConfig,
          std::string(stage) + ": batch and window must be positive");
  std::vector<PreparedPair> data;
  for (const VocoderPair& p : pairs) {
    PreparedPair d;
    d.targets = encode_wave(*p.wave, model.config().levels);
    d.inputs = model.shifted_inputs(d.targets);
    d.plan = upsample_conditioning(*p.track, p.wave->sample_rate);
    data.push_back(std::move(d));
  }
  const std::size_t context = model.config().receptive_field() - 1;
  Rng rng = Rng(train.seed).fork(fnv1a(stage));
  Adam adam(AdamConfig{train.learning_rate});
  WaveNetTrainingResult result{std::move(model), {}, 0};
  WaveNetModel& m = result.model;

  for (std::size_t step = 0; step < train.steps; ++step) {
    double loss_value = 0.0;
    try {
      Tape tape;
      Var total;
      for (std::size_t b = 0; b < train.batch; ++b) {
        const PreparedPair& d = data[rng.index(data.size())];
        const std::size_t n = d.targets.size();
        const std::size_t window = std::min(train.window, n);
        const std::size_t start = n > window ? rng.index(n - window + 1) : 0;
        // Context before the window gives every scored output its full
        // receptive field, as in whole-utterance evaluation.
        const std::size_t c0 = start > context ? start - context : 0;
        const std::size_t len = start + window - c0;
        const std::span<const int> inputs(d.inputs.data() + c0, len);
        const Var cond = tape.constant(m.conditioning(d.plan, c0, len));
        Var logits = m.logits_graph(tape, inputs, cond, true);
        logits = ops::slice_cols(logits, start - c0, window);
        const Var loss = ops::softmax_cross_entropy(
            logits, std::span<const int>(d.targets.data() + start, window));
        total = total.valid() ? ops::add(total, loss) : loss;
      }
      total = ops::scale(total, 1.0 / static_cast<double>(train.batch));
      loss_value = total.value().item();
      m.parameters().zero_grad();
      tape.backward(total);
    } catch (const Error& e) {
      fail(ErrorCode::kDivergence,
           std::string(stage) + " diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (train.clip_norm > 0.0) clip_grad_norm(m.parameters(), train.clip_norm);
    adam.step(m.parameters());
    result.losses.push_back(loss_value);
    result.steps_run = step + 1;
    if (train.on_step) train.on_step(step + 1, loss_value);
    if (train.target_nll > 0.0 && result.losses.size() >= 20) {
      const double recent =
          std::accumulate(result.losses.end() - 20, result.losses.end(), 0.0) / 20.0;
      if (recent <= train.target_nll) break;
    }
  }
  return result;
}

}  // namespace

WaveNetTrainingResult train_si(std::span<const VocoderPair> pairs, const WaveNetConfig& config,
                               const WaveNetTrainConfig& train) {
  validate_pairs(pairs);
  std::set<std::string> speakers;
  for (const VocoderPair& p : pairs) {
    speakers.insert(p.speaker);
    require(p.track->kind == FeatureKind::kNatural, ErrorCode::kInvalidArgument,
            "train_si: SI training uses natural features only");
  }
  require(speakers.size() >= 2, ErrorCode::kInvalidArgument,
          "train_si: need pairs from at least 2 speakers");
  require(config.cond_dims == kConditioningDims, ErrorCode::kConfig,
          "train_si: conditioning dims must be " + std::to_string(kConditioningDims));
  Rng init = Rng(train.seed).fork(7);
  WaveNetModel model(config, init);
  std::vector<double> mean, stddev;
  conditioning_statistics(pairs, mean, stddev);
  model.set_normalization(mean, stddev);
  model.set_provenance(Provenance::kSI);
  return run_training(std::move(model), pairs, train, "train_si");
}

WaveNetTrainingResult finetune(const WaveNetModel& si, std::span<const VocoderPair> pairs,
                               const WaveNetTrainConfig& train, bool gv_adapted) {
  validate_pairs(pairs);
  const std::string& speaker = pairs.front().speaker;
  const FeatureKind kind = pairs.front().track->kind;
  for (const VocoderPair& p : pairs) {
    require(p.speaker == speaker, ErrorCode::kInvalidArgument,
            "finetune: pairs mix speakers '" + speaker + "' and '" + p.speaker + "'");
    require(p.track->kind == kind, ErrorCode::kInvalidArgument,
            "finetune: pairs mix feature kinds");
  }
  require(kind != FeatureKind::kConverted, ErrorCode::kInvalidArgument,
          "finetune: adaptation features must be natural or reconstructed");
  require(!gv_adapted || kind == FeatureKind::kReconstructed, ErrorCode::kInvalidArgument,
          "finetune: the GV variant applies to reconstructed features only");
  WaveNetModel model = si;
  model.set_provenance(kind == FeatureKind::kNatural ? Provenance::kFinetunedNatural
                       : gv_adapted                  ? Provenance::kFinetunedReconstructedGV
                                                     : Provenance::kFinetunedReconstructed);
  model.set_speaker(speaker);
  return run_training(std::move(model), pairs, train, "finetune");
}

}  // namespace vcwn
