#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "toy_fixture.hpp"
#include "vcwn/error.hpp"
#include "vcwn/gradcheck.hpp"
#include "vcwn/vae.hpp"

using namespace vcwn;

namespace {

VaeConfig tiny_config() {
  VaeConfig c;
  c.input_dim = 4;
  c.hidden = 5;
  c.latent = 3;
  c.n_speakers = 2;
  return c;
}

FeatureTrack random_track(Rng& rng, std::size_t frames) {
  FeatureTrack t;
  t.resize(frames);
  for (double& v : t.mcc) v = rng.normal(0.0, 0.5);
  for (std::size_t i = 0; i < frames; ++i) {
    t.energy[i] = 1.0 + rng.uniform();
    if (rng.uniform() < 0.6) {
      t.voiced[i] = 1;
      t.log_f0[i] = 5.0 + 0.1 * rng.normal();
    }
  }
  return t;
}

Parameter& param(VaeModel& m, const char* name) { return m.parameters().get(name); }

}  // namespace

TEST_CASE("speaker code is one-hot and validated") {
  const SpeakerCode c(2, 4);
  const auto v = c.one_hot();
  CHECK(std::accumulate(v.begin(), v.end(), 0.0) == 1.0);
  CHECK(v[2] == 1.0);
  CHECK_THROWS_AS(SpeakerCode(4, 4), Error);
  CHECK_THROWS_AS(SpeakerCode(0, 0), Error);
}

TEST_CASE("zero-initialized model: posterior is the prior and decode is zero") {
  VaeConfig c;
  c.n_speakers = 3;
  const VaeModel m = VaeModel::zeros(c);
  Rng rng(3);
  std::vector<double> h(kShapeDims);
  for (double& v : h) v = rng.normal();
  const LatentPosterior q = m.encode(h);
  REQUIRE(q.mean.size() == c.latent);
  for (std::size_t d = 0; d < c.latent; ++d) {
    CHECK(q.mean[d] == 0.0);
    CHECK(q.log_var[d] == 0.0);
  }
  std::vector<double> z(c.latent);
  for (double& v : z) v = rng.normal();
  for (double v : m.decode(z, SpeakerCode(1, 3))) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic and rejects bad input") {
  Rng rng(4);
  const VaeModel m(tiny_config(), rng);
  const std::vector<double> h = {0.1, -0.3, 0.7, 1.2};
  const auto a = m.encode(h);
  const auto b = m.encode(h);
  CHECK(a.mean == b.mean);
  CHECK(a.log_var == b.log_var);
  CHECK_THROWS_AS(m.encode(std::vector<double>{0.1, NAN, 0.0, 0.0}), Error);
  CHECK_THROWS_AS(m.encode(std::vector<double>{0.1}), Error);
  CHECK_THROWS_AS(m.decode(std::vector<double>{0.0, 0.0, 0.0}, SpeakerCode(0, 3)), Error);
}

TEST_CASE("elbo_loss closed-form examples") {
  VaeConfig c = tiny_config();
  VaeModel m = VaeModel::zeros(c);
  const std::vector<double> noise = {0.3, -1.0, 0.5};

  // Posterior equals prior and output 0 equals input 0: both terms vanish.
  auto l = elbo_loss(m, std::vector<double>(4, 0.0), SpeakerCode(0, 2), noise);
  CHECK(l.latent == 0.0);
  CHECK(l.recon == 0.0);

  // mu = 1, log var = 0 in every dim: 0.5 per dim.
  Parameter& b3 = param(m, "enc.b3");
  for (std::size_t d = 0; d < c.latent; ++d) b3.value[d] = 1.0;
  l = elbo_loss(m, std::vector<double>(4, 0.0), SpeakerCode(0, 2), noise);
  CHECK(l.latent == doctest::Approx(0.5 * c.latent).epsilon(1e-15));

  // Output is 0, so the recon term is 0.5 * |h|^2.
  const std::vector<double> h = {1.0, -2.0, 0.5, 0.0};
  l = elbo_loss(m, h, SpeakerCode(1, 2), noise);
  CHECK(l.recon == doctest::Approx(0.5 * (1.0 + 4.0 + 0.25)));
  CHECK(l.total == doctest::Approx(l.recon + l.latent).epsilon(1e-15));
}

TEST_CASE("latent term is non-negative and total = recon + latent") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    VaeModel m(tiny_config(), rng);
    for (Parameter& p : m.parameters().items())
      for (double& v : p.value.values()) v += rng.normal(0.0, 0.5);
    std::vector<double> h(4), noise(3);
    for (double& v : h) v = rng.normal();
    for (double& v : noise) v = rng.normal();
    const auto l = elbo_loss(m, h, SpeakerCode(trial % 2, 2), noise);
    CHECK(l.latent >= 0.0);
    CHECK(l.total == doctest::Approx(l.recon + l.latent).epsilon(1e-14));
  }
}

TEST_CASE("full VAE loss passes grad_check for every parameter") {
  Rng rng(21);
  VaeModel m(tiny_config(), rng);
  // Non-zero biases so every path is exercised.
  for (Parameter& p : m.parameters().items())
    for (double& v : p.value.values()) v += rng.normal(0.0, 0.3);
  Tensor h({4, 3}), codes({2, 3}), noise({3, 3});
  for (double& v : h.values()) v = rng.normal();
  for (double& v : noise.values()) v = rng.normal();
  codes.at(0, 0) = codes.at(1, 1) = codes.at(0, 2) = 1.0;
  auto loss = [&](Tape& tape) {
    return m.elbo_graph(tape, tape.constant(h), tape.constant(codes), noise, true).total;
  };
  for (const Parameter& p : std::vector<Parameter>(m.parameters().items())) {
    const auto report = grad_check_parameter(m.parameters(), p.name, loss);
    INFO(p.name << " max rel err " << report.max_relative_error);
    CHECK(report.passed);
    CHECK(report.max_relative_error <= 1e-4);
  }
  // Gradient with respect to the input frame as well.
  const auto report = grad_check(
      [&](Tape& tape, Var x) {
        return m.elbo_graph(tape, x, tape.constant(codes), noise, false).total;
      },
      h);
  CHECK(report.passed);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("closed-form KL matches a Monte Carlo estimate within 3 standard errors") {
  // Oracle: E_q[log q(z) - log p(z)] with z = mu + sigma * eps, eps ~ N(0, I).
  Rng rng(31);
  const std::size_t dims = 16;
  const std::size_t samples = 100000;
  int within = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mu({dims, 1}), logvar({dims, 1});
    for (double& v : mu.values()) v = rng.normal(0.0, 1.0);
    for (double& v : logvar.values()) v = rng.uniform(-2.0, 1.0);
    Tape tape;
    const double closed =
        ops::gaussian_kl(tape.constant(mu), tape.constant(logvar)).value().item();
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      double v = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double eps = rng.normal();
        const double z = mu[d] + std::exp(0.5 * logvar[d]) * eps;
        v += -0.5 * logvar[d] - 0.5 * eps * eps + 0.5 * z * z;
      }
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / samples;
    const double var = (sum_sq - samples * mean * mean) / (samples - 1);
    const double se = std::sqrt(var / samples);
    if (std::abs(mean - closed) <= 3.0 * se) ++within;
    CHECK(std::abs(mean - closed) <= 5.0 * se);
  }
  // 3-sigma coverage is 99.7%; allow the odd excursion among 100 trials.
  CHECK(within >= 97);
}

TEST_CASE("forward keeps frame count, prosody and energy; sets kind") {
  Rng rng(41);
  VaeConfig c;
  c.n_speakers = 2;
  const VaeModel m(c, rng);
  const FeatureTrack in = random_track(rng, 37);
  const FeatureTrack rec = m.forward(in, SpeakerCode(0, 2), ForwardMode::kReconstruct);
  const FeatureTrack conv = m.forward(in, SpeakerCode(1, 2), ForwardMode::kConvert);
  for (const FeatureTrack* out : {&rec, &conv}) {
    REQUIRE(out->frames() == in.frames());
    CHECK(out->log_f0 == in.log_f0);
    CHECK(out->voiced == in.voiced);
    CHECK(out->energy == in.energy);
    for (std::size_t t = 0; t < in.frames(); ++t) CHECK(out->frame(t)[0] == in.frame(t)[0]);
  }
  CHECK(rec.kind == FeatureKind::kReconstructed);
  CHECK(conv.kind == FeatureKind::kConverted);

  // Same code in convert mode gives the reconstruct output: the code is the
  // only input that differs between the two modes.
  const FeatureTrack same = m.forward(in, SpeakerCode(0, 2), ForwardMode::kConvert);
  CHECK(same.mcc == rec.mcc);

  // Forward equals per-frame encode -> decode with z = mean.
  const auto& mean = m.feature_mean();
  const auto& sd = m.feature_std();
  for (std::size_t t = 0; t < in.frames(); t += 9) {
    std::vector<double> h(kShapeDims);
    for (std::size_t d = 0; d < kShapeDims; ++d) h[d] = (in.frame(t)[d + 1] - mean[d]) / sd[d];
    const auto out = m.decode(m.encode(h).mean, SpeakerCode(1, 2));
    for (std::size_t d = 0; d < kShapeDims; ++d)
      CHECK(conv.frame(t)[d + 1] == doctest::Approx(out[d] * sd[d] + mean[d]).epsilon(1e-12));
  }

  FeatureTrack empty;
  CHECK(m.forward(empty, SpeakerCode(0, 2), ForwardMode::kConvert).frames() == 0);
}

TEST_CASE("forward preconditions") {
  Rng rng(42);
  VaeConfig c;
  const VaeModel m(c, rng);
  FeatureTrack in = random_track(rng, 5);
  in.kind = FeatureKind::kConverted;
  CHECK_THROWS_AS(m.forward(in, SpeakerCode(0, 2), ForwardMode::kReconstruct), Error);
  in.kind = FeatureKind::kNatural;
  CHECK_THROWS_AS(m.forward(in, SpeakerCode(0, 3), ForwardMode::kConvert), Error);
  CHECK_THROWS_AS(m.forward(in, SpeakerCode(0, 2), ForwardMode::kConvert, false, nullptr), Error);
  Rng sampler(1);
  const FeatureTrack sampled = m.forward(in, SpeakerCode(0, 2), ForwardMode::kConvert, false, &sampler);
  CHECK(sampled.frames() == in.frames());
}

TEST_CASE("checkpoint round trip is byte-exact and restores behaviour") {
  Rng rng(51);
  VaeConfig c;
  c.n_speakers = 3;
  VaeModel m(c, rng);
  std::vector<double> mean(kShapeDims), sd(kShapeDims);
  for (std::size_t d = 0; d < kShapeDims; ++d) {
    mean[d] = rng.normal();
    sd[d] = 0.5 + rng.uniform();
  }
  m.set_normalization(mean, sd);
  m.set_speakers({"alice", "bob", "carol"});
  const auto bytes = m.to_checkpoint().serialize();
  const VaeModel back = VaeModel::from_checkpoint(Checkpoint::deserialize(bytes));
  CHECK(back.to_checkpoint().serialize() == bytes);
  CHECK(back.speakers() == m.speakers());
  CHECK(back.code_for("bob").index() == 1);
  CHECK_THROWS_AS(back.code_for("dave"), Error);
  const FeatureTrack in = random_track(rng, 8);
  CHECK(back.forward(in, SpeakerCode(2, 3), ForwardMode::kConvert).mcc ==
        m.forward(in, SpeakerCode(2, 3), ForwardMode::kConvert).mcc);

  Checkpoint wrong = m.to_checkpoint();
  wrong.meta["model"] = "wavenet";
  CHECK_THROWS_AS(VaeModel::from_checkpoint(wrong), Error);
}

TEST_CASE("training is deterministic per seed and handles one speaker") {
  Rng rng(61);
  std::vector<FeatureTrack> tracks;
  for (int i = 0; i < 4; ++i) tracks.push_back(random_track(rng, 30));
  std::vector<LabeledTrack> corpus;
  for (std::size_t i = 0; i < tracks.size(); ++i) corpus.push_back({&tracks[i], i % 2});
  VaeConfig c;
  c.hidden = 16;
  c.latent = 4;
  VaeTrainConfig t;
  t.steps = 40;
  t.batch = 16;
  const auto a = train_vae(corpus, {"a", "b"}, c, t);
  const auto b = train_vae(corpus, {"a", "b"}, c, t);
  CHECK(a.model.to_checkpoint().serialize() == b.model.to_checkpoint().serialize());
  CHECK(a.eval_history == b.eval_history);
  CHECK(a.eval_history.size() == 41);
  CHECK(a.step_losses.size() == 40);
  t.seed = 2;
  const auto other = train_vae(corpus, {"a", "b"}, c, t);
  CHECK(other.model.to_checkpoint().serialize() != a.model.to_checkpoint().serialize());

  // Degenerate single-speaker corpus still trains.
  VaeConfig one = c;
  one.n_speakers = 1;
  for (auto& item : corpus) item.speaker = 0;
  const auto solo = train_vae(corpus, {"only"}, one, t);
  CHECK(solo.eval_history.back() < solo.eval_history.front());

  CHECK_THROWS_AS(train_vae(corpus, {"a", "b"}, one, t), Error);
  CHECK_THROWS_AS(train_vae({}, {"a", "b"}, c, t), Error);
}

namespace {

struct Trained {
  ToyData data;
  std::vector<LabeledTrack> corpus = data.labeled(true);
  VaeConfig config = [this] {
    VaeConfig c;
    c.n_speakers = data.speakers.size();
    return c;
  }();
  VaeTrainConfig train;
  VaeTrainingResult result = train_vae(corpus, data.speakers, config, train);
};

const Trained& trained() {
  static const Trained t;
  return t;
}

}  // namespace

TEST_CASE("trained toy model: loss halves and trends down") {
  const auto& h = trained().result.eval_history;
  CHECK(h.back() < 0.5 * h.front());
  std::vector<double> avg;
  for (std::size_t i = 9; i < h.size(); ++i)
    avg.push_back(std::accumulate(h.begin() + (i - 9), h.begin() + i + 1, 0.0) / 10.0);
  std::size_t down = 0;
  for (std::size_t i = 1; i < avg.size(); ++i) down += avg[i] < avg[i - 1];
  CHECK(static_cast<double>(down) >= 0.9 * static_cast<double>(avg.size() - 1));
}

TEST_CASE("trained toy model: posteriors are confident on training frames") {
  const auto& corpus = trained().corpus;
  const VaeModel& m = trained().result.model;
  std::size_t confident = 0, total = 0;
  for (const LabeledTrack& item : corpus) {
    for (std::size_t f = 0; f < item.track->frames(); ++f) {
      std::vector<double> h(kShapeDims);
      for (std::size_t d = 0; d < kShapeDims; ++d)
        h[d] = (item.track->frame(f)[d + 1] - m.feature_mean()[d]) / m.feature_std()[d];
      const auto q = m.encode(h);
      confident += std::accumulate(q.log_var.begin(), q.log_var.end(), 0.0) < 0.0;
      ++total;
    }
  }
  CHECK(static_cast<double>(confident) >= 0.8 * static_cast<double>(total));
}

TEST_CASE("trained toy model: reconstruction beats the untrained model by 5x and is imperfect") {
  const auto& corpus = trained().corpus;
  const VaeConfig& c = trained().config;
  const VaeModel& m = trained().result.model;
  Rng rng(trained().train.seed);
  VaeModel untrained(c, rng);
  untrained.set_normalization(m.feature_mean(), m.feature_std());
  double trained_mcd = 0.0, untrained_mcd = 0.0;
  for (const LabeledTrack& item : corpus) {
    const SpeakerCode code(item.speaker, c.n_speakers);
    trained_mcd += track_mcd(*item.track, m.forward(*item.track, code, ForwardMode::kReconstruct));
    untrained_mcd +=
        track_mcd(*item.track, untrained.forward(*item.track, code, ForwardMode::kReconstruct));
  }
  INFO("trained " << trained_mcd / corpus.size() << " dB, untrained "
                  << untrained_mcd / corpus.size() << " dB");
  CHECK(trained_mcd > 0.0);
  CHECK(5.0 * trained_mcd <= untrained_mcd);
}

TEST_CASE("trained toy model: speaker conditioning is live") {
  const auto& corpus = trained().corpus;
  const VaeConfig& c = trained().config;
  const VaeModel& m = trained().result.model;
  const FeatureTrack& in = *corpus.front().track;
  const FeatureTrack rec =
      m.forward(in, SpeakerCode(corpus.front().speaker, c.n_speakers), ForwardMode::kReconstruct);
  const FeatureTrack conv = m.forward(
      in, SpeakerCode((corpus.front().speaker + 1) % c.n_speakers, c.n_speakers),
      ForwardMode::kConvert);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < rec.mcc.size(); ++i)
    max_diff = std::max(max_diff, std::abs(rec.mcc[i] - conv.mcc[i]));
  CHECK(max_diff >= 1e-6);
  // Fixed z, two codes.
  const std::vector<double> z(c.latent, 0.25);
  const auto a = m.decode(z, SpeakerCode(0, c.n_speakers));
  const auto b = m.decode(z, SpeakerCode(1, c.n_speakers));
  CHECK(a != b);
}
