#include "vcwn/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vcwn/error.hpp"
#include "vcwn/optim.hpp"

namespace vcwn {

SpeakerCode::SpeakerCode(std::size_t index, std::size_t n_speakers)
    : index_(index), n_(n_speakers) {
  require(n_speakers >= 1, ErrorCode::kInvalidArgument, "speaker code: no speakers");
  require(index < n_speakers, ErrorCode::kInvalidArgument,
          "speaker code: index " + std::to_string(index) + " outside " +
              std::to_string(n_speakers) + " speakers");
}

std::vector<double> SpeakerCode::one_hot() const {
  std::vector<double> v(n_, 0.0);
  v[index_] = 1.0;
  return v;
}

namespace {

const char* const kLayerNames[] = {"enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.w3", "enc.b3",
                                   "dec.w1", "dec.b1", "dec.w2", "dec.b2", "dec.w3", "dec.b3"};

struct LayerShape {
  std::size_t out, in;
};

std::vector<LayerShape> layer_shapes(const VaeConfig& c) {
  return {{c.hidden, c.input_dim},
          {c.hidden, c.hidden},
          {2 * c.latent, c.hidden},
          {c.hidden, c.latent + c.n_speakers},
          {c.hidden, c.hidden},
          {c.input_dim, c.hidden}};
}

void check_config(const VaeConfig& c) {
  require(c.input_dim >= 1 && c.hidden >= 1 && c.latent >= 1, ErrorCode::kConfig,
          "vae: layer sizes must be positive");
  require(c.n_speakers >= 1, ErrorCode::kConfig, "vae: need at least one speaker");
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    require(std::isfinite(x), ErrorCode::kNonFinite, std::string("vae: non-finite ") + what);
}

}  // namespace

VaeModel::VaeModel(const VaeConfig& config) : config_(config) {
  check_config(config);
  const auto shapes = layer_shapes(config);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    params_.add(kLayerNames[2 * l], Tensor({shapes[l].out, shapes[l].in}));
    params_.add(kLayerNames[2 * l + 1], Tensor({shapes[l].out, 1}));
  }
  mean_.assign(config.input_dim, 0.0);
  std_.assign(config.input_dim, 1.0);
  for (std::size_t s = 0; s < config.n_speakers; ++s) speakers_.push_back("spk" + std::to_string(s));
}

VaeModel::VaeModel(const VaeConfig& config, Rng& rng) : VaeModel(config) {
  for (Parameter& p : params_.items()) {
    if (p.value.cols() == 1) continue;  // biases stay zero
    const double a = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (double& w : p.value.values()) w = rng.uniform(-a, a);
  }
}

VaeModel VaeModel::zeros(const VaeConfig& config) { return VaeModel(config); }

void VaeModel::set_normalization(std::vector<double> mean, std::vector<double> stddev) {
  require(mean.size() == config_.input_dim && stddev.size() == config_.input_dim,
          ErrorCode::kInvalidArgument, "vae: normalization statistics have the wrong size");
  for (std::size_t d = 0; d < stddev.size(); ++d)
    require(std::isfinite(mean[d]) && std::isfinite(stddev[d]) && stddev[d] > 0.0,
            ErrorCode::kInvalidArgument, "vae: normalization stddev must be positive");
  mean_ = std::move(mean);
  std_ = std::move(stddev);
}

void VaeModel::set_speakers(std::vector<std::string> ids) {
  require(ids.size() == config_.n_speakers, ErrorCode::kInvalidArgument,
          "vae: speaker table size differs from the configured speaker count");
  speakers_ = std::move(ids);
}

SpeakerCode VaeModel::code_for(const std::string& speaker) const {
  const auto it = std::find(speakers_.begin(), speakers_.end(), speaker);
  if (it == speakers_.end())
    fail(ErrorCode::kInvalidArgument, "vae: unknown speaker '" + speaker + "'");
  return SpeakerCode(static_cast<std::size_t>(it - speakers_.begin()), config_.n_speakers);
}

Var VaeModel::leaf(Tape& tape, const std::string& name, bool trainable) const {
  Parameter& p = params_.get(name);
  return trainable ? tape.parameter(p) : tape.constant(p.value);
}

VaeModel::Posterior VaeModel::encode_graph(Tape& tape, Var h, bool trainable) const {
  auto layer = [&](Var x, const char* w, const char* b) {
    return ops::add_bias(ops::matmul(leaf(tape, w, trainable), x), leaf(tape, b, trainable));
  };
  Var a = ops::tanh(layer(h, "enc.w1", "enc.b1"));
  a = ops::tanh(layer(a, "enc.w2", "enc.b2"));
  Var out = layer(a, "enc.w3", "enc.b3");
  return {ops::slice_rows(out, 0, config_.latent),
          ops::slice_rows(out, config_.latent, config_.latent)};
}

Var VaeModel::decode_graph(Tape& tape, Var z, Var code, bool trainable) const {
  auto layer = [&](Var x, const char* w, const char* b) {
    return ops::add_bias(ops::matmul(leaf(tape, w, trainable), x), leaf(tape, b, trainable));
  };
  Var a = ops::tanh(layer(ops::concat_rows(z, code), "dec.w1", "dec.b1"));
  a = ops::tanh(layer(a, "dec.w2", "dec.b2"));
  return layer(a, "dec.w3", "dec.b3");
}

VaeModel::LossVars VaeModel::elbo_graph(Tape& tape, Var h, Var code, const Tensor& noise,
                                        bool trainable) const {
  const Posterior q = encode_graph(tape, h, trainable);
  const Var z = ops::reparameterize(q.mean, q.log_var, noise);
  const Var out = decode_graph(tape, z, code, trainable);
  const double inv_batch = 1.0 / static_cast<double>(h.value().cols());
  const Var recon = ops::scale(ops::gaussian_nll(out, h), inv_batch);
  const Var latent = ops::scale(ops::gaussian_kl(q.mean, q.log_var), inv_batch);
  return {ops::add(recon, latent), recon, latent};
}

LatentPosterior VaeModel::encode(std::span<const double> h) const {
  require(h.size() == config_.input_dim, ErrorCode::kInvalidArgument,
          "vae encode: expected " + std::to_string(config_.input_dim) + " dims");
  check_finite(h, "encoder input");
  Tape tape;
  const Posterior q = encode_graph(
      tape, tape.constant(Tensor({config_.input_dim, 1}, std::vector<double>(h.begin(), h.end()))),
      false);
  const auto& m = q.mean.value().values();
  const auto& s = q.log_var.value().values();
  return {{m.begin(), m.end()}, {s.begin(), s.end()}};
}

std::vector<double> VaeModel::decode(std::span<const double> z, const SpeakerCode& code) const {
  require(z.size() == config_.latent, ErrorCode::kInvalidArgument,
          "vae decode: expected " + std::to_string(config_.latent) + " latent dims");
  require(code.size() == config_.n_speakers, ErrorCode::kInvalidArgument,
          "vae decode: speaker code length differs from the model's speaker count");
  check_finite(z, "latent");
  Tape tape;
  const Var out = decode_graph(
      tape, tape.constant(Tensor({config_.latent, 1}, std::vector<double>(z.begin(), z.end()))),
      tape.constant(Tensor({config_.n_speakers, 1}, code.one_hot())), false);
  const auto& v = out.value().values();
  return {v.begin(), v.end()};
}

LossBreakdown elbo_loss(const VaeModel& model, std::span<const double> h,
                        const SpeakerCode& code, std::span<const double> noise) {
  const VaeConfig& c = model.config();
  require(h.size() == c.input_dim, ErrorCode::kInvalidArgument, "elbo_loss: input size");
  require(noise.size() == c.latent, ErrorCode::kInvalidArgument, "elbo_loss: noise size");
  require(code.size() == c.n_speakers, ErrorCode::kInvalidArgument, "elbo_loss: speaker code");
  check_finite(h, "input");
  check_finite(noise, "noise");
  Tape tape;
  const auto vars = model.elbo_graph(
      tape, tape.constant(Tensor({c.input_dim, 1}, std::vector<double>(h.begin(), h.end()))),
      tape.constant(Tensor({c.n_speakers, 1}, code.one_hot())),
      Tensor({c.latent, 1}, std::vector<double>(noise.begin(), noise.end())), false);
  return {vars.total.value().item(), vars.recon.value().item(), vars.latent.value().item()};
}

FeatureTrack VaeModel::forward(const FeatureTrack& track, const SpeakerCode& code,
                               ForwardMode mode, bool deterministic, Rng* rng) const {
  track.validate();
  require(code.size() == config_.n_speakers, ErrorCode::kInvalidArgument,
          "vae forward: speaker code length differs from the model's speaker count");
  require(config_.input_dim == kShapeDims, ErrorCode::kPrecondition,
          "vae forward: model does not cover MCC dims 1..34");
  if (mode == ForwardMode::kReconstruct)
    require(track.kind == FeatureKind::kNatural, ErrorCode::kPrecondition,
            "vae reconstruct: input track must hold natural features");
  require(deterministic || rng != nullptr, ErrorCode::kInvalidArgument,
          "vae forward: sampling requires a generator");

  FeatureTrack out = track;
  out.kind = mode == ForwardMode::kReconstruct ? FeatureKind::kReconstructed
                                               : FeatureKind::kConverted;
  const std::size_t n = track.frames();
  if (n == 0) return out;
  const std::size_t dims = config_.input_dim;

  Tensor h({dims, n});
  for (std::size_t t = 0; t < n; ++t) {
    const auto f = track.frame(t);
    for (std::size_t d = 0; d < dims; ++d) h.at(d, t) = (f[d + 1] - mean_[d]) / std_[d];
  }
  Tensor codes({config_.n_speakers, n});
  for (std::size_t t = 0; t < n; ++t) codes.at(code.index(), t) = 1.0;

  Tape tape;
  const Posterior q = encode_graph(tape, tape.constant(std::move(h)), false);
  Var z = q.mean;
  if (!deterministic) {
    Tensor noise({config_.latent, n});
    for (double& e : noise.values()) e = rng->normal();
    z = ops::reparameterize(q.mean, q.log_var, noise);
  }
  const Tensor& dec = decode_graph(tape, z, tape.constant(std::move(codes)), false).value();
  for (std::size_t t = 0; t < n; ++t) {
    auto f = out.frame(t);
    for (std::size_t d = 0; d < dims; ++d) f[d + 1] = dec.at(d, t) * std_[d] + mean_[d];
  }
  require(out.frames() == n, ErrorCode::kPrecondition, "vae forward: frame count changed");
  return out;
}

Checkpoint VaeModel::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["model"] = "vae";
  ck.meta["vae.input_dim"] = std::to_string(config_.input_dim);
  ck.meta["vae.hidden"] = std::to_string(config_.hidden);
  ck.meta["vae.latent"] = std::to_string(config_.latent);
  ck.meta["vae.n_speakers"] = std::to_string(config_.n_speakers);
  std::string table;
  for (std::size_t s = 0; s < speakers_.size(); ++s) table += (s ? "," : "") + speakers_[s];
  ck.meta["vae.speakers"] = table;
  ck.add_parameters(params_);
  ck.tensors.emplace_back("norm.mean", Tensor({mean_.size(), 1}, mean_));
  ck.tensors.emplace_back("norm.std", Tensor({std_.size(), 1}, std_));
  return ck;
}

VaeModel VaeModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.count("model") == 0 || ck.get_meta("model") != "vae")
    fail(ErrorCode::kFormat, "checkpoint does not hold a VAE model");
  auto number = [&](const char* key) {
    const std::string& s = ck.get_meta(key);
    try {
      return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, std::string("vae checkpoint: bad value for ") + key);
    }
  };
  VaeConfig c;
  c.input_dim = number("vae.input_dim");
  c.hidden = number("vae.hidden");
  c.latent = number("vae.latent");
  c.n_speakers = number("vae.n_speakers");
  VaeModel model(c);
  ck.load_parameters(model.params_);
  const Tensor& m = ck.tensor("norm.mean");
  const Tensor& s = ck.tensor("norm.std");
  model.set_normalization({m.values().begin(), m.values().end()},
                          {s.values().begin(), s.values().end()});
  std::vector<std::string> ids;
  const std::string& table = ck.get_meta("vae.speakers");
  std::size_t pos = 0;
  while (pos <= table.size()) {
    const std::size_t comma = std::min(table.find(',', pos), table.size());
    ids.push_back(table.substr(pos, comma - pos));
    pos = comma + 1;
  }
  model.set_speakers(std::move(ids));
  return model;
}

void corpus_statistics(std::span<const LabeledTrack> corpus, std::vector<double>& mean,
                       std::vector<double>& stddev) {
  mean.assign(kShapeDims, 0.0);
  stddev.assign(kShapeDims, 0.0);
  std::size_t count = 0;
  for (const LabeledTrack& item : corpus) {
    for (std::size_t t = 0; t < item.track->frames(); ++t) {
      const auto f = item.track->frame(t);
      for (std::size_t d = 0; d < kShapeDims; ++d) mean[d] += f[d + 1];
      ++count;
    }
  }
  require(count > 0, ErrorCode::kInvalidArgument, "vae corpus holds no frames");
  for (double& m : mean) m /= static_cast<double>(count);
  for (const LabeledTrack& item : corpus) {
    for (std::size_t t = 0; t < item.track->frames(); ++t) {
      const auto f = item.track->frame(t);
      for (std::size_t d = 0; d < kShapeDims; ++d) {
        const double e = f[d + 1] - mean[d];
        stddev[d] += e * e;
      }
    }
  }
  // Floor keeps constant dimensions (e.g. a 1-frame corpus) usable.
  for (double& s : stddev) s = std::max(std::sqrt(s / static_cast<double>(count)), 1e-6);
}

VaeTrainingResult train_vae(std::span<const LabeledTrack> corpus,
                            const std::vector<std::string>& speakers, const VaeConfig& config,
                            const VaeTrainConfig& train) {
  require(!corpus.empty(), ErrorCode::kInvalidArgument, "train_vae: empty corpus");
  require(config.n_speakers == speakers.size(), ErrorCode::kConfig,
          "train_vae: speaker table size differs from n_speakers");
  require(config.input_dim == kShapeDims, ErrorCode::kConfig,
          "train_vae: input dim must equal the MCC shape dims");
  require(train.batch >= 1, ErrorCode::kConfig, "train_vae: batch must be positive");
  const std::size_t eval_interval =
      train.eval_interval > 0 ? train.eval_interval : std::max<std::size_t>(1, train.steps / 100);
  for (const LabeledTrack& item : corpus) {
    require(item.track != nullptr, ErrorCode::kInvalidArgument, "train_vae: null track");
    require(item.speaker < config.n_speakers, ErrorCode::kInvalidArgument,
            "train_vae: speaker index out of range");
    item.track->validate();
  }

  Rng init_rng = Rng(train.seed).fork(1);
  Rng order_rng = Rng(train.seed).fork(2);
  Rng noise_rng = Rng(train.seed).fork(3);
  Rng eval_rng = Rng(train.seed).fork(4);

  VaeTrainingResult result{VaeModel(config, init_rng), {}, {}};
  VaeModel& model = result.model;
  model.set_speakers(speakers);
  std::vector<double> mean, stddev;
  corpus_statistics(corpus, mean, stddev);
  model.set_normalization(mean, stddev);

  struct FrameRef {
    std::size_t item, frame;
  };
  std::vector<FrameRef> frames;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t t = 0; t < corpus[i].track->frames(); ++t) frames.push_back({i, t});
  require(!frames.empty(), ErrorCode::kInvalidArgument, "train_vae: corpus holds no frames");

  const std::size_t dims = config.input_dim;
  auto gather = [&](std::span<const FrameRef> refs, Tensor& h, Tensor& codes) {
    h = Tensor({dims, refs.size()});
    codes = Tensor({config.n_speakers, refs.size()});
    for (std::size_t b = 0; b < refs.size(); ++b) {
      const LabeledTrack& item = corpus[refs[b].item];
      const auto f = item.track->frame(refs[b].frame);
      for (std::size_t d = 0; d < dims; ++d) h.at(d, b) = (f[d + 1] - mean[d]) / stddev[d];
      codes.at(item.speaker, b) = 1.0;
    }
  };

  // Fixed evaluation subset and noise make the history comparable across steps.
  std::vector<FrameRef> eval_refs;
  const std::size_t n_eval = std::min(train.eval_frames, frames.size());
  {
    std::vector<std::size_t> idx(frames.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n_eval; ++i) {
      std::swap(idx[i], idx[i + eval_rng.index(idx.size() - i)]);
      eval_refs.push_back(frames[idx[i]]);
    }
  }
  Tensor eval_h, eval_codes;
  gather(eval_refs, eval_h, eval_codes);
  Tensor eval_noise({config.latent, n_eval});
  for (double& e : eval_noise.values()) e = eval_rng.normal();
  auto evaluate = [&]() {
    Tape tape;
    return model.elbo_graph(tape, tape.constant(eval_h), tape.constant(eval_codes), eval_noise,
                            false)
        .total.value()
        .item();
  };

  Adam adam(AdamConfig{train.learning_rate});
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<FrameRef> batch_refs;
  Tensor h, codes;

  result.eval_history.push_back(evaluate());
  for (std::size_t step = 0; step < train.steps; ++step) {
    batch_refs.clear();
    while (batch_refs.size() < std::min(train.batch, frames.size())) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[order_rng.index(i)]);
        cursor = 0;
      }
      batch_refs.push_back(frames[order[cursor++]]);
    }
    gather(batch_refs, h, codes);
    Tensor noise({config.latent, batch_refs.size()});
    for (double& e : noise.values()) e = noise_rng.normal();

    double loss = 0.0;
    try {
      Tape tape;
      const auto vars =
          model.elbo_graph(tape, tape.constant(h), tape.constant(codes), noise, true);
      loss = vars.total.value().item();
      model.parameters().zero_grad();
      tape.backward(vars.total);
    } catch (const Error& e) {
      fail(ErrorCode::kDivergence,
           "train_vae diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (train.final_learning_rate >= 0.0) {
      const double progress = static_cast<double>(step) / static_cast<double>(train.steps);
      adam.set_learning_rate(train.final_learning_rate +
                             0.5 * (train.learning_rate - train.final_learning_rate) *
                                 (1.0 + std::cos(std::numbers::pi * progress)));
    }
    adam.step(model.parameters());
    result.step_losses.push_back(loss);
    if (train.on_step) train.on_step(step + 1, loss);
    if ((step + 1) % eval_interval == 0) {
      const double ev = evaluate();
      if (!std::isfinite(ev))
        fail(ErrorCode::kDivergence, "train_vae diverged at step " + std::to_string(step));
      result.eval_history.push_back(ev);
    }
  }
  return result;
}

}  // namespace vcwn
