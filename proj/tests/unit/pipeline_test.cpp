#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <unistd.h>

#include "doctest.h"
#include "toy_fixture.hpp"
#include "vcwn/error.hpp"
#include "vcwn/log.hpp"
#include "vcwn/pipeline.hpp"

using namespace vcwn;
namespace fs = std::filesystem;

namespace {

FeatureTrack random_track(Rng& rng, std::size_t frames, double voiced_p = 0.7) {
  FeatureTrack t;
  t.resize(frames);
  for (double& v : t.mcc) v = rng.normal(0.0, 0.5);
  for (std::size_t i = 0; i < frames; ++i) {
    t.energy[i] = 0.5 + rng.uniform();
    if (rng.uniform() < voiced_p) {
      t.voiced[i] = 1;
      t.log_f0[i] = 5.0 + 0.2 * rng.normal();
    }
  }
  return t;
}

std::vector<const FeatureTrack*> ptrs(const std::vector<FeatureTrack>& v) {
  std::vector<const FeatureTrack*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

double dim_variance(const FeatureTrack& t, std::size_t d) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.frames(); ++i) m += t.frame(i)[d];
  m /= static_cast<double>(t.frames());
  double v = 0.0;
  for (std::size_t i = 0; i < t.frames(); ++i) v += (t.frame(i)[d] - m) * (t.frame(i)[d] - m);
  return v / static_cast<double>(t.frames());
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vcwn_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

WaveNetModel tiny_wavenet(std::uint64_t seed) {
  WaveNetConfig c;
  c.n_stacks = 1;
  c.dilations = {1, 2};
  c.residual_channels = 4;
  c.skip_channels = 4;
  Rng rng(seed);
  WaveNetModel m(c, rng);
  for (double& w : m.parameters().get("out2").value.values()) w = rng.normal(0.0, 0.5);
  return m;
}

}  // namespace

TEST_CASE("speaker profile statistics") {
  Rng rng(1);
  SUBCASE("constant f0 gives the floor std") {
    FeatureTrack t = random_track(rng, 10, 1.0);
    std::fill(t.log_f0.begin(), t.log_f0.end(), 5.0);
    const FeatureTrack* one[] = {&t};
    const SpeakerProfile p = build_profile("a", 0, one);
    CHECK(p.lf0_mean == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(p.lf0_std == kLf0StdFloor);
  }
  SUBCASE("single utterance GV is its variance vector") {
    const FeatureTrack t = random_track(rng, 12);
    const FeatureTrack* one[] = {&t};
    const SpeakerProfile p = build_profile("a", 0, one);
    for (std::size_t d = 0; d < kShapeDims; ++d)
      CHECK(p.gv[d] == doctest::Approx(dim_variance(t, d + 1)).epsilon(1e-12));
  }
  SUBCASE("two-utterance hand corpus") {
    FeatureTrack a, b;
    a.resize(2);
    b.resize(3);
    // dim 1: a = {1, 3} -> var 1; b = {0, 0, 3} -> mean 1, var (1+1+4)/3 = 2
    a.frame(0)[1] = 1.0;
    a.frame(1)[1] = 3.0;
    b.frame(2)[1] = 3.0;
    a.voiced = {1, 1};
    a.log_f0 = {4.0, 5.0};
    b.voiced = {0, 1, 0};
    b.log_f0 = {0.0, 6.0, 0.0};
    for (auto* t : {&a, &b}) std::fill(t->energy.begin(), t->energy.end(), 1.0);
    const FeatureTrack* both[] = {&a, &b};
    const SpeakerProfile p = build_profile("h", 3, both, {"u1", "u2"});
    CHECK(p.gv[0] == doctest::Approx(1.5).epsilon(1e-15));
    for (std::size_t d = 1; d < kShapeDims; ++d) CHECK(p.gv[d] == 0.0);
    CHECK(p.lf0_mean == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(p.lf0_std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
    CHECK(p.code_index == 3);
    CHECK(p.utterances.size() == 2);
  }
  SUBCASE("no voiced frames") {
    const FeatureTrack t = random_track(rng, 5, 0.0);
    const FeatureTrack* one[] = {&t};
    CHECK_THROWS_AS(build_profile("a", 0, one), Error);
    CHECK_THROWS_AS(build_profile("a", 0, {}), Error);
  }
}

TEST_CASE("log-f0 mean-variance transform") {
  SpeakerProfile s, t;
  s.id = "s";
  s.lf0_mean = 4.5;
  s.lf0_std = 0.2;
  t.lf0_mean = 5.0;
  t.lf0_std = 0.3;
  CHECK(transform_log_f0(4.7, s, t) == doctest::Approx(5.3).epsilon(1e-14));
  CHECK(transform_log_f0(4.5, s, t) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(transform_log_f0(4.9, s, s) == doctest::Approx(4.9).epsilon(1e-15));

  Rng rng(2);
  FeatureTrack track = random_track(rng, 30);
  const FeatureTrack out = transform_f0(track, s, t);
  for (std::size_t i = 0; i < track.frames(); ++i) {
    if (track.voiced[i]) {
      CHECK(out.log_f0[i] == doctest::Approx(transform_log_f0(track.log_f0[i], s, t)));
    } else {
      CHECK(out.log_f0[i] == 0.0);
    }
    CHECK(out.voiced[i] == track.voiced[i]);
  }
  CHECK(out.mcc == track.mcc);

  s.lf0_std = 0.0;
  CHECK_THROWS_AS(transform_log_f0(4.7, s, t), Error);
  s.lf0_std = std::nan("");
  CHECK_THROWS_AS(transform_f0(track, s, t), Error);
}

TEST_CASE("f0 transform maps source corpus statistics onto the target's") {
  Rng rng(3);
  std::vector<FeatureTrack> src, tgt;
  for (int i = 0; i < 6; ++i) src.push_back(random_track(rng, 40));
  for (int i = 0; i < 4; ++i) {
    tgt.push_back(random_track(rng, 40));
    for (double& f : tgt.back().log_f0)
      if (f != 0.0) f = 1.3 * f - 1.0;
  }
  const SpeakerProfile ps = build_profile("s", 0, ptrs(src));
  const SpeakerProfile pt = build_profile("t", 1, ptrs(tgt));
  std::vector<FeatureTrack> mapped;
  for (const auto& t : src) mapped.push_back(transform_f0(t, ps, pt));
  const SpeakerProfile pm = build_profile("m", 0, ptrs(mapped));
  CHECK(std::abs(pm.lf0_mean - pt.lf0_mean) <= 1e-9);
  CHECK(std::abs(pm.lf0_std - pt.lf0_std) <= 1e-9);
}

TEST_CASE("energy compensation copies source energy and dim 0") {
  Rng rng(4);
  const FeatureTrack src = random_track(rng, 8);
  CHECK(compensate_energy(src, src).mcc == src.mcc);
  CHECK(compensate_energy(src, src).energy == src.energy);

  FeatureTrack conv = random_track(rng, 8);
  conv.kind = FeatureKind::kConverted;
  FeatureTrack silent = src;
  silent.energy[2] = 1e-10;
  const FeatureTrack out = compensate_energy(conv, silent);
  CHECK(out.kind == FeatureKind::kConverted);
  CHECK(out.energy == silent.energy);
  for (std::size_t t = 0; t < 8; ++t) {
    CHECK(out.frame(t)[0] == silent.frame(t)[0]);
    for (std::size_t d = 1; d < kMccDim; ++d) CHECK(out.frame(t)[d] == conv.frame(t)[d]);
    CHECK(out.log_f0[t] == conv.log_f0[t]);
    CHECK(out.voiced[t] == conv.voiced[t]);
  }
  CHECK_THROWS_AS(compensate_energy(random_track(rng, 7), src), Error);
}

TEST_CASE("GV postfilter") {
  Rng rng(5);
  const FeatureTrack t = random_track(rng, 50);
  const GvVector own = utterance_gv(t);

  SUBCASE("matching GV is the identity") {
    const FeatureTrack out = gv_postfilter(t, own);
    for (std::size_t i = 0; i < t.mcc.size(); ++i)
      CHECK(out.mcc[i] == doctest::Approx(t.mcc[i]).epsilon(1e-12));
  }
  SUBCASE("variance 1 to 4 doubles deviations") {
    FeatureTrack u;
    u.resize(4);
    const double vals[4] = {1.0, 3.0, 1.0, 3.0};  // mean 2, variance 1
    for (std::size_t i = 0; i < 4; ++i) {
      u.frame(i)[1] = vals[i];
      u.energy[i] = 1.0;
    }
    GvVector g{};
    g[0] = 4.0;
    const FeatureTrack out = gv_postfilter(u, g);
    const double expect[4] = {0.0, 4.0, 0.0, 4.0};
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(out.frame(i)[1] == doctest::Approx(expect[i]).epsilon(1e-14));
      for (std::size_t d = 2; d < kMccDim; ++d) CHECK(out.frame(i)[d] == 0.0);  // constant dims
    }
  }
  SUBCASE("filtered variance equals the target exactly") {
    for (int trial = 0; trial < 20; ++trial) {
      const FeatureTrack x = random_track(rng, 2 + rng.index(80));
      GvVector g{};
      for (double& v : g) v = std::exp(rng.normal(-2.0, 1.5));
      const FeatureTrack y = gv_postfilter(x, g);
      const GvVector got = utterance_gv(y);
      for (std::size_t d = 0; d < kShapeDims; ++d)
        CHECK(std::abs(got[d] - g[d]) / g[d] <= 1e-9);
      CHECK(y.energy == x.energy);
      CHECK(y.log_f0 == x.log_f0);
      for (std::size_t i = 0; i < x.frames(); ++i) CHECK(y.frame(i)[0] == x.frame(i)[0]);
    }
  }
  SUBCASE("single frame is a no-op with a warning") {
    std::vector<std::string> warnings;
    set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
    const FeatureTrack one = random_track(rng, 1);
    CHECK(gv_postfilter(one, own).mcc == one.mcc);
    set_warning_sink({});
    CHECK(warnings.size() == 1);
  }
  SUBCASE("bad target") {
    std::vector<double> short_gv(5, 1.0);
    CHECK_THROWS_AS(gv_postfilter(t, short_gv), Error);
    GvVector neg = own;
    neg[3] = -1.0;
    CHECK_THROWS_AS(gv_postfilter(t, neg), Error);
  }
}

TEST_CASE("system table") {
  const auto& specs = system_specs();
  REQUIRE(specs.size() == 7);
  const char* ids[] = {"B1", "B2", "B3", "B4", "P1", "P2", "UB"};
  const bool wavenet[] = {false, false, true, true, true, true, true};
  const bool gv[] = {false, true, false, true, false, true, false};
  const AdaptingKind adapt[] = {AdaptingKind::kNone,    AdaptingKind::kNone,
                                AdaptingKind::kNatural, AdaptingKind::kNatural,
                                AdaptingKind::kReconstructed, AdaptingKind::kReconstructedGV,
                                AdaptingKind::kNatural};
  for (std::size_t i = 0; i < 7; ++i) {
    CAPTURE(ids[i]);
    CHECK(specs[i].id == ids[i]);
    CHECK((specs[i].vocoder == VocoderKind::kWaveNet) == wavenet[i]);
    CHECK(specs[i].gv_postfilter == gv[i]);
    CHECK(specs[i].adapting == adapt[i]);
    CHECK(specs[i].convert == (i != 6));
    CHECK(&system_spec(ids[i]) == &specs[i]);
  }
  CHECK_THROWS_AS(system_spec("P3"), Error);
  CHECK(std::string(to_string(AdaptingKind::kReconstructedGV)) == "reconstructed+GV");
}

TEST_CASE("adaptation sets and system runs") {
  ToyCorpusConfig cc;
  cc.n_speakers = 2;
  cc.train_utts = 2;
  cc.test_utts = 1;
  cc.utt_seconds = 0.4;
  const ToyData data(cc);
  VaeConfig vc;
  vc.n_speakers = 2;
  vc.hidden = 16;
  vc.latent = 4;
  Rng rng(6);
  VaeModel vae(vc, rng);
  vae.set_speakers(data.speakers);
  std::vector<double> mean, sd;
  corpus_statistics(data.labeled(true), mean, sd);
  vae.set_normalization(mean, sd);

  std::vector<SpeakerProfile> profiles;
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<const FeatureTrack*> tr;
    for (std::size_t i = 0; i < data.tracks.size(); ++i)
      if (data.speaker[i] == s && data.train[i]) tr.push_back(&data.tracks[i]);
    profiles.push_back(build_profile(data.speakers[s], s, tr));
  }
  std::vector<const FeatureTrack*> tgt_tracks;
  std::vector<const Waveform*> tgt_waves;
  for (std::size_t i = 0; i < data.tracks.size(); ++i)
    if (data.speaker[i] == 1 && data.train[i]) {
      tgt_tracks.push_back(&data.tracks[i]);
      tgt_waves.push_back(&data.waves[i]);
    }

  SUBCASE("natural pairs are the analysis tracks") {
    const auto set = build_adaptation_set(vae, profiles[1], tgt_tracks, tgt_waves,
                                          AdaptingKind::kNatural);
    REQUIRE(set.size() == 2);
    for (std::size_t i = 0; i < set.size(); ++i) {
      CHECK(encode_feature_track(set[i].track) == encode_feature_track(*tgt_tracks[i]));
      CHECK(set[i].track.mcc == tgt_tracks[i]->mcc);
      CHECK(set[i].wave == tgt_waves[i]);
      CHECK(set[i].speaker == profiles[1].id);
    }
    validate_pairs(vocoder_pairs(set));
  }
  SUBCASE("reconstructed pairs keep frame counts and differ from natural") {
    const auto set = build_adaptation_set(vae, profiles[1], tgt_tracks, tgt_waves,
                                          AdaptingKind::kReconstructed);
    for (std::size_t i = 0; i < set.size(); ++i) {
      CHECK(set[i].track.kind == FeatureKind::kReconstructed);
      CHECK(set[i].track.frames() == tgt_tracks[i]->frames());
      CHECK(track_mcd(set[i].track, *tgt_tracks[i]) > 0.0);
    }
    validate_pairs(vocoder_pairs(set));
  }
  SUBCASE("GV variant carries the target GV") {
    const auto set = build_adaptation_set(vae, profiles[1], tgt_tracks, tgt_waves,
                                          AdaptingKind::kReconstructedGV);
    for (const auto& p : set) {
      const GvVector g = utterance_gv(p.track);
      for (std::size_t d = 0; d < kShapeDims; ++d)
        CHECK(std::abs(g[d] - profiles[1].gv[d]) <= 1e-9 * profiles[1].gv[d]);
    }
  }
  SUBCASE("bad adaptation inputs") {
    CHECK_THROWS_AS(build_adaptation_set(vae, profiles[1], tgt_tracks, {}, AdaptingKind::kNatural),
                    Error);
    CHECK_THROWS_AS(
        build_adaptation_set(vae, profiles[1], tgt_tracks, tgt_waves, AdaptingKind::kNone), Error);
    Waveform longer = *tgt_waves[0];
    longer.samples.push_back(0.0);
    const Waveform* w[] = {&longer};
    const FeatureTrack* t[] = {tgt_tracks[0]};
    CHECK_THROWS_AS(build_adaptation_set(vae, profiles[1], t, w, AdaptingKind::kNatural), Error);
  }

  const std::size_t src_index = data.config.train_utts;  // speaker 0 test utterance
  const Waveform& src_wave = data.waves[src_index];
  const WaveNetModel nat = tiny_wavenet(11), rec = tiny_wavenet(12), recgv = tiny_wavenet(13);
  SystemModels models{&vae, &nat, &rec, &recgv};

  SUBCASE("B1 is parametric with no postfilter") {
    const SystemOutput o = run_system(system_spec("B1"), src_wave, profiles[0], profiles[1], models);
    CHECK(o.converted.kind == FeatureKind::kConverted);
    CHECK(o.wave.samples.size() == o.natural.frames() * 80);
    CHECK(o.wave.samples.size() == src_wave.samples.size());
    for (double s : o.wave.samples) CHECK(std::isfinite(s));
    const FeatureTrack expect = transform_f0(o.compensated, profiles[0], profiles[1]);
    CHECK(o.final.mcc == expect.mcc);
    CHECK(o.final.log_f0 == expect.log_f0);
    // No WaveNet involved: works without any vocoder checkpoints.
    SystemModels vae_only{&vae};
    CHECK(run_system(system_spec("B1"), src_wave, profiles[0], profiles[1], vae_only).wave.samples ==
          o.wave.samples);
  }
  SUBCASE("B2 applies the target GV") {
    const SystemOutput o = run_system(system_spec("B2"), src_wave, profiles[0], profiles[1], models);
    const GvVector g = utterance_gv(o.final);
    for (std::size_t d = 0; d < kShapeDims; ++d)
      CHECK(std::abs(g[d] - profiles[1].gv[d]) <= 1e-9 * profiles[1].gv[d]);
  }
  SUBCASE("WaveNet systems pick their fine-tuned vocoder") {
    const char* ids[] = {"B3", "B4", "P1", "P2"};
    const WaveNetModel* expect[] = {&nat, &nat, &rec, &recgv};
    for (int i = 0; i < 4; ++i) {
      const SystemSpec& spec = system_spec(ids[i]);
      const SystemOutput o = run_system(spec, src_wave, profiles[0], profiles[1], models, {9});
      const Waveform ref = sample(*expect[i], upsample_conditioning(o.final, 16000), 9);
      CHECK(o.wave.samples == ref.samples);
      CHECK(o.wave.samples.size() == src_wave.samples.size());
    }
  }
  SUBCASE("P1 uses no postfilter at conversion") {
    const SystemOutput o = run_system(system_spec("P1"), src_wave, profiles[0], profiles[1], models);
    CHECK(o.final.mcc == transform_f0(o.compensated, profiles[0], profiles[1]).mcc);
  }
  SUBCASE("upper bound resynthesizes natural target features") {
    const Waveform& tgt_test = data.waves[2 * (cc.train_utts + cc.test_utts) - 1];
    const SystemOutput o = run_system(system_spec("UB"), tgt_test, profiles[1], profiles[1],
                                      SystemModels{nullptr, &nat}, {4});
    CHECK(o.final.mcc == analyze(tgt_test).track.mcc);
    CHECK(o.converted.frames() == 0);
    CHECK(o.wave.samples == sample(nat, upsample_conditioning(o.final, 16000), 4).samples);
  }
  SUBCASE("missing models are named") {
    SystemModels none{&vae};
    try {
      run_system(system_spec("P1"), src_wave, profiles[0], profiles[1], none);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kMissingModel);
      CHECK(std::string(e.what()).find("finetuned-reconstructed") != std::string::npos);
    }
    SystemModels no_vae{nullptr, &nat, &rec, &recgv};
    CHECK_THROWS_AS(run_system(system_spec("B1"), src_wave, profiles[0], profiles[1], no_vae),
                    Error);
    Waveform other_rate = src_wave;
    other_rate.sample_rate = 8000;
    CHECK_THROWS_AS(run_system(system_spec("B1"), other_rate, profiles[0], profiles[1], models),
                    Error);
  }
}

TEST_CASE("padding to whole frames") {
  Waveform w;
  w.samples.assign(161, 0.5);
  const Waveform p = pad_to_frames(w);
  CHECK(p.samples.size() == 240);
  CHECK(p.samples[160] == 0.5);
  CHECK(p.samples[161] == 0.0);
  CHECK(analyze(p).track.frames() * 80 == p.samples.size());
  w.samples.assign(160, 0.1);
  CHECK(pad_to_frames(w).samples.size() == 160);
  w.samples.clear();
  CHECK(pad_to_frames(w).samples.size() == 80);
}

TEST_CASE("toy corpus") {
  ToyCorpusConfig cc;
  cc.n_speakers = 3;
  cc.train_utts = 2;
  cc.test_utts = 1;
  cc.utt_seconds = 0.5;

  SUBCASE("same seed gives a byte-identical corpus") {
    TempDir a("corpus_a"), b("corpus_b");
    const CorpusManifest ma = make_toy_corpus(cc, a.path.string());
    make_toy_corpus(cc, b.path.string());
    CHECK(ma.entries.size() == 9);
    CHECK(ma.speakers.size() == 3);
    CHECK(slurp(a.path / "manifest.txt") == slurp(b.path / "manifest.txt"));
    for (const ManifestEntry& e : ma.entries) CHECK(slurp(a.path / e.path) == slurp(b.path / e.path));
    const CorpusManifest back = CorpusManifest::load((a.path / "manifest.txt").string());
    CHECK(back.serialize() == ma.serialize());
    CHECK(back.select(ma.speakers[1], "test").size() == 1);
    const Waveform w = read_wav(back.resolve(back.entries[0]));
    CHECK(w.samples.size() % 80 == 0);
  }
  SUBCASE("different seeds differ") {
    ToyCorpusConfig other = cc;
    other.seed = 2;
    const auto v = toy_voices(cc);
    CHECK(synthesize_toy_utterance(cc, v[0], 0).samples !=
          synthesize_toy_utterance(other, toy_voices(other)[0], 0).samples);
  }
  SUBCASE("voices are separated and mostly voiced") {
    const ToyData data(cc);
    std::vector<SpeakerProfile> profiles;
    for (std::size_t s = 0; s < cc.n_speakers; ++s) {
      std::vector<const FeatureTrack*> tr;
      for (std::size_t i = 0; i < data.tracks.size(); ++i)
        if (data.speaker[i] == s) tr.push_back(&data.tracks[i]);
      profiles.push_back(build_profile(data.speakers[s], s, tr));
    }
    for (std::size_t a = 0; a < profiles.size(); ++a)
      for (std::size_t b = a + 1; b < profiles.size(); ++b)
        CHECK(std::abs(profiles[a].lf0_mean - profiles[b].lf0_mean) > 0.1);
    for (const FeatureTrack& t : data.tracks) {
      const auto voiced = std::count(t.voiced.begin(), t.voiced.end(), 1);
      CHECK(static_cast<double>(voiced) >= 0.5 * static_cast<double>(t.frames()));
      CHECK(t.frames() * 80 == data.waves[&t - data.tracks.data()].samples.size());
    }
  }
  SUBCASE("needs two speakers") {
    cc.n_speakers = 1;
    CHECK_THROWS_AS(toy_voices(cc), Error);
  }
}

TEST_CASE("corpus manifest validation") {
  const std::string text =
      "# speaker split path\n"
      "a train wav/a1.wav\n"
      "a test wav/a2.wav\n"
      "b train wav/b1.wav\n";
  const CorpusManifest m = CorpusManifest::parse(text, "/data");
  CHECK(m.speakers == std::vector<std::string>{"a", "b"});
  CHECK(m.resolve(m.entries[0]) == "/data/wav/a1.wav");
  CHECK(m.entries[1].utterance_id() == "a2");
  CHECK(CorpusManifest::parse(m.serialize(), "/data").serialize() == m.serialize());
  CHECK_THROWS_AS(CorpusManifest::parse(text + "b dev wav/b2.wav\n", "/data"), Error);
  CHECK_THROWS_AS(CorpusManifest::parse(text + "b test wav/a1.wav\n", "/data"), Error);
  CHECK_THROWS_AS(CorpusManifest::parse("a train\n", "/data"), Error);
  CHECK_THROWS_AS(CorpusManifest::load("/nonexistent/manifest.txt"), Error);
}
