#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "vcwn.h"
#include "vcwn/error.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vcwn_capi_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<double> tone(std::size_t n, double hz, int sr) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 0.4 * std::sin(2.0 * M_PI * hz * i / sr);
  return x;
}

vcwn_experiment* tiny_experiment(const fs::path& out) {
  vcwn_experiment* e = nullptr;
  REQUIRE(vcwn_experiment_create(&e) == VCWN_OK);
  const char* settings[][2] = {
      {"seed", "5"},           {"corpus.speakers", "2"},   {"corpus.train_utts", "2"},
      {"corpus.test_utts", "1"}, {"corpus.utt_seconds", "0.5"}, {"vae.hidden", "8"},
      {"vae.latent", "2"},     {"vae.steps", "20"},        {"wavenet.dilations", "1,2,4,8"},
      {"wavenet.residual", "4"}, {"wavenet.skip", "4"},     {"wavenet.window", "128"},
      {"si.steps", "2"},       {"finetune.steps", "2"},    {"targets", "spk01"},
  };
  for (auto& kv : settings) REQUIRE(vcwn_experiment_set(e, kv[0], kv[1]) == VCWN_OK);
  REQUIRE(vcwn_experiment_set(e, "out", out.string().c_str()) == VCWN_OK);
  vcwn_experiment_set_progress(e, [](const char*, void*) {}, nullptr);
  return e;
}

}  // namespace

TEST_CASE("status codes mirror the library error codes") {
  CHECK(VCWN_ERR_INVALID_ARGUMENT == static_cast<int>(vcwn::ErrorCode::kInvalidArgument));
  CHECK(VCWN_ERR_CONFIG == static_cast<int>(vcwn::ErrorCode::kConfig));
  CHECK(VCWN_ERR_IO == static_cast<int>(vcwn::ErrorCode::kIo));
  CHECK(VCWN_ERR_FORMAT == static_cast<int>(vcwn::ErrorCode::kFormat));
  CHECK(VCWN_ERR_MISSING_MODEL == static_cast<int>(vcwn::ErrorCode::kMissingModel));
  CHECK(VCWN_ERR_NON_FINITE == static_cast<int>(vcwn::ErrorCode::kNonFinite));
  CHECK(VCWN_ERR_PRECONDITION == static_cast<int>(vcwn::ErrorCode::kPrecondition));
  CHECK(VCWN_ERR_DIVERGENCE == static_cast<int>(vcwn::ErrorCode::kDivergence));
  CHECK(std::string(vcwn_status_name(VCWN_ERR_MISSING_MODEL)) == "missing model");
  CHECK(std::strlen(vcwn_version()) > 0);
}

TEST_CASE("argument errors set the last error") {
  CHECK(vcwn_wave_read(nullptr, nullptr) == VCWN_ERR_INVALID_ARGUMENT);
  CHECK(std::string(vcwn_last_error()).find("NULL") != std::string::npos);
  vcwn_wave* w = nullptr;
  CHECK(vcwn_wave_create(nullptr, 0, 0, &w) == VCWN_ERR_INVALID_ARGUMENT);
  CHECK(vcwn_wave_read("/no/such/file.wav", &w) != VCWN_OK);
  CHECK(w == nullptr);
  CHECK(std::strlen(vcwn_last_error()) > 0);
  CHECK(vcwn_wave_length(nullptr) == 0);
  vcwn_wave_free(nullptr);
  vcwn_track_free(nullptr);
}

TEST_CASE("waves and tracks round trip through files") {
  TempDir dir("io");
  const auto x = tone(1600, 200.0, 16000);
  vcwn_wave* w = nullptr;
  REQUIRE(vcwn_wave_create(x.data(), x.size(), 16000, &w) == VCWN_OK);
  const std::string wav = (dir.path / "a.wav").string();
  REQUIRE(vcwn_wave_write(w, wav.c_str()) == VCWN_OK);
  vcwn_wave* back = nullptr;
  REQUIRE(vcwn_wave_read(wav.c_str(), &back) == VCWN_OK);
  CHECK(vcwn_wave_length(back) == x.size());
  CHECK(vcwn_wave_sample_rate(back) == 16000);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(vcwn_wave_samples(back)[i] - x[i]) <= 1.0 / 32767.0);

  vcwn_track* t = nullptr;
  REQUIRE(vcwn_analyze(w, &t) == VCWN_OK);
  CHECK(vcwn_track_frames(t) == 20);
  CHECK(vcwn_track_dims() == 35);
  int voiced = 0;
  double lf0 = 0.0, energy = 0.0;
  REQUIRE(vcwn_track_frame_info(t, 10, &voiced, &lf0, &energy) == VCWN_OK);
  CHECK(voiced == 1);
  CHECK(std::exp(lf0) == doctest::Approx(200.0).epsilon(0.02));
  CHECK(energy > 0.0);
  CHECK(vcwn_track_frame_info(t, 20, nullptr, nullptr, nullptr) == VCWN_ERR_INVALID_ARGUMENT);

  const std::string vcft = (dir.path / "a.vcft").string();
  REQUIRE(vcwn_track_write(t, vcft.c_str()) == VCWN_OK);
  vcwn_track* t2 = nullptr;
  REQUIRE(vcwn_track_read(vcft.c_str(), &t2) == VCWN_OK);
  double mcd = -1.0;
  REQUIRE(vcwn_mean_mcd(t, t2, 0, &mcd) == VCWN_OK);
  CHECK(mcd < 1e-4);  // 32-bit storage
  std::vector<double> a(35), b(35);
  REQUIRE(vcwn_track_mcc(t2, 3, a.data()) == VCWN_OK);
  CHECK(vcwn_track_mcc(t2, 99, b.data()) == VCWN_ERR_INVALID_ARGUMENT);

  vcwn_wave* syn = nullptr;
  REQUIRE(vcwn_synthesize(t, 16000, 1, &syn) == VCWN_OK);
  CHECK(vcwn_wave_length(syn) == 1600);

  CHECK(vcwn_mu_law_decode(vcwn_mu_law_encode(0.0)) == doctest::Approx(0.0).epsilon(0.01));
  CHECK(vcwn_mu_law_encode(1.0) == 255);

  vcwn_wave_free(syn);
  vcwn_track_free(t2);
  vcwn_track_free(t);
  vcwn_wave_free(back);
  vcwn_wave_free(w);
}

TEST_CASE("experiment configuration through the C API") {
  CHECK(vcwn_stage_count() == 8);
  CHECK(std::string(vcwn_stage_name(0)) == "gen-corpus");
  CHECK(vcwn_stage_name(8) == nullptr);
  bool has_seed = false;
  for (std::size_t i = 0; i < vcwn_config_key_count(); ++i)
    has_seed = has_seed || std::string(vcwn_config_key_name(i)) == "seed";
  CHECK(has_seed);
  CHECK(std::string(vcwn_config_env_prefix()) == "VCWN_");

  vcwn_experiment* e = nullptr;
  REQUIRE(vcwn_experiment_create(&e) == VCWN_OK);
  CHECK(vcwn_experiment_validate(e) == VCWN_ERR_CONFIG);
  CHECK(std::string(vcwn_last_error()).find("seed") != std::string::npos);
  REQUIRE(vcwn_experiment_set(e, "seed", "9") == VCWN_OK);
  REQUIRE(vcwn_experiment_set(e, "vae.steps", "-3") == VCWN_OK);
  REQUIRE(vcwn_experiment_set(e, "nonsense", "1") == VCWN_OK);
  CHECK(vcwn_experiment_validate(e) == VCWN_ERR_CONFIG);
  const std::string msg = vcwn_last_error();
  CHECK(msg.find("vae.steps") != std::string::npos);
  CHECK(msg.find("nonsense") != std::string::npos);
  CHECK(vcwn_experiment_run(e, "gen-corpus") == VCWN_ERR_CONFIG);
  CHECK(std::string(vcwn_experiment_get(e, "seed")) == "9");
  CHECK(std::strlen(vcwn_experiment_config_hash(e)) == 16);
  CHECK(vcwn_experiment_load_config(e, "/no/such.cfg") == VCWN_ERR_CONFIG);
  vcwn_experiment_free(e);
}

TEST_CASE("stages and models through the C API") {
  TempDir dir("run");
  vcwn_experiment* e = tiny_experiment(dir.path / "out");
  CHECK(vcwn_experiment_run(e, "no-such-stage") == VCWN_ERR_INVALID_ARGUMENT);

  REQUIRE(vcwn_experiment_set(e, "systems", "P1") == VCWN_OK);
  CHECK(vcwn_experiment_run(e, "convert") == VCWN_ERR_MISSING_MODEL);
  CHECK(std::string(vcwn_last_error()).find("finetuned-reconstructed") != std::string::npos);

  for (const char* s : {"gen-corpus", "analyze-corpus", "train-vae", "train-wavenet-si"})
    REQUIRE_MESSAGE(vcwn_experiment_run(e, s) == VCWN_OK, vcwn_last_error());

  vcwn_vae* vae = nullptr;
  REQUIRE(vcwn_vae_load((dir.path / "out/models/vae.vcrm").c_str(), &vae) == VCWN_OK);
  REQUIRE(vcwn_vae_speaker_count(vae) == 2);
  CHECK(std::string(vcwn_vae_speaker(vae, 1)) == "spk02");
  CHECK(vcwn_vae_speaker(vae, 2) == nullptr);

  vcwn_wave* w = nullptr;
  REQUIRE(vcwn_wave_read((dir.path / "out/corpus/wav/spk01/spk01_test_01.wav").c_str(), &w) == VCWN_OK);
  vcwn_track* t = nullptr;
  REQUIRE(vcwn_track_read((dir.path / "out/features/spk01/spk01_test_01.vcft").c_str(), &t) == VCWN_OK);
  vcwn_track* conv = nullptr;
  REQUIRE(vcwn_vae_forward(vae, t, "spk02", 0, &conv) == VCWN_OK);
  CHECK(vcwn_track_frames(conv) == vcwn_track_frames(t));
  vcwn_track* bad = nullptr;
  CHECK(vcwn_vae_forward(vae, t, "nobody", 0, &bad) != VCWN_OK);

  vcwn_wavenet* net = nullptr;
  REQUIRE(vcwn_wavenet_load((dir.path / "out/models/wavenet_si.vcrm").c_str(), &net) == VCWN_OK);
  CHECK(std::string(vcwn_wavenet_provenance(net)) == "SI");
  CHECK(vcwn_wavenet_receptive_field(net) == 16);
  double nll = 0.0;
  REQUIRE(vcwn_wavenet_nll(net, w, t, &nll) == VCWN_OK);
  CHECK(std::isfinite(nll));
  CHECK(nll > 0.0);
  vcwn_wave* gen = nullptr;
  REQUIRE(vcwn_wavenet_generate(net, conv, 16000, 3, &gen) == VCWN_OK);
  CHECK(vcwn_wave_length(gen) == vcwn_track_frames(conv) * 80);
  CHECK(vcwn_wavenet_load("/no/such.vcrm", &net) != VCWN_OK);

  vcwn_wave_free(gen);
  vcwn_wavenet_free(net);
  vcwn_track_free(conv);
  vcwn_track_free(t);
  vcwn_wave_free(w);
  vcwn_vae_free(vae);
  vcwn_experiment_free(e);
}
