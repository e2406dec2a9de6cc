#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "vcwn/error.hpp"
#include "vcwn/experiment.hpp"

using namespace vcwn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vcwn_exp_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool mentions(const std::vector<std::string>& errs, const std::string& what) {
  for (const std::string& e : errs)
    if (e.find(what) != std::string::npos) return true;
  return false;
}

// Small enough to run every stage in seconds.
ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.merge_text(R"(
seed = 11
corpus.speakers = 2
corpus.train_utts = 3
corpus.test_utts = 2
corpus.utt_seconds = 0.5
vae.hidden = 16
vae.latent = 4
vae.steps = 60
vae.batch = 32
wavenet.dilations = 1,2,4,8
wavenet.residual = 4
wavenet.skip = 8
wavenet.window = 256
wavenet.batch = 2
si.steps = 4
finetune.steps = 3
targets = spk02
log.every = 1000
)");
  c.set("out", out.string());
  return c;
}

}  // namespace

TEST_CASE("config defaults, precedence and hashing") {
  ExperimentConfig c;
  CHECK(c.get("vae.steps") == "8000");
  CHECK(mentions(c.validate(), "seed: required"));
  CHECK_THROWS_AS(c.require_valid(), Error);

  c.merge_text("seed = 3\n# comment\nvae.steps = 100  # trailing\n");
  CHECK(c.validate().empty());
  CHECK(c.seed() == 3);
  CHECK(c.vae_train().steps == 100);

  CHECK(ExperimentConfig::env_name("vae.steps") == "VCWN_VAE_STEPS");
  ::setenv("VCWN_VAE_STEPS", "250", 1);
  c.apply_environment();
  ::unsetenv("VCWN_VAE_STEPS");
  CHECK(c.get("vae.steps") == "250");
  c.set("vae.steps", "300");  // flags beat the environment
  CHECK(c.vae_train().steps == 300);

  // Output location and log cadence do not change results.
  ExperimentConfig d = c;
  d.set("out", "/somewhere/else");
  d.set("log.every", "7");
  CHECK(d.hash() == c.hash());
  d.set("seed", "4");
  CHECK(d.hash() != c.hash());
  CHECK(c.hash().size() == 16);
  CHECK(c.canonical().find("out=") == std::string::npos);
}

TEST_CASE("config validation is itemized") {
  ExperimentConfig c;
  c.merge_text("seed = x\nvae.steps = 0\nsi.lr = -1\nbogus = 1\nsystems = B1,Q9,B1\n"
               "wavenet.dilations = 1,0\ntargets = nobody\ncorpus.manifest = /no/such/file\n");
  const auto errs = c.validate();
  CHECK(mentions(errs, "seed: 'x'"));
  CHECK(mentions(errs, "vae.steps"));
  CHECK(mentions(errs, "si.lr"));
  CHECK(mentions(errs, "unknown key 'bogus'"));
  CHECK(mentions(errs, "unknown system 'Q9'"));
  CHECK(mentions(errs, "'B1' listed twice"));
  CHECK(mentions(errs, "wavenet.dilations"));
  CHECK(mentions(errs, "corpus.manifest"));
  try {
    c.require_valid();
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    const std::string msg = e.what();
    CHECK(std::count(msg.begin(), msg.end(), '\n') == static_cast<long>(errs.size()));
  }

  ExperimentConfig t;
  t.merge_text("seed = 1\ntargets = spk09\n");
  CHECK(mentions(t.validate(), "targets: unknown speaker 'spk09'"));

  ExperimentConfig bad;
  CHECK_THROWS_AS(bad.merge_text("seed 1\n= 2\n"), Error);
  CHECK_THROWS_AS(bad.merge_text("seed = 1\nseed = 2\n"), Error);
  CHECK_THROWS_AS(bad.merge_file("/no/such/config"), Error);
}

TEST_CASE("typed views") {
  ExperimentConfig c;
  c.merge_text("seed = 5\nwavenet.dilations = 1, 2, 4\nwavenet.stacks = 2\nsystems = P2, UB\n");
  const WaveNetConfig w = c.wavenet();
  CHECK(w.dilations == std::vector<std::size_t>{1, 2, 4});
  CHECK(w.receptive_field() == 15);
  CHECK(c.systems() == std::vector<std::string>{"P2", "UB"});
  CHECK(c.targets().empty());
  CHECK(c.finetune_train().seed != c.si_train().seed);
  CHECK(c.finetune_train().steps == 200);
}

TEST_CASE("stages refuse to run out of order") {
  TempDir dir("order");
  Experiment e(tiny(dir.path / "run"));
  e.set_progress_sink([](std::string_view) {});
  try {
    e.run("analyze-corpus");
    FAIL("expected failure");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kPrecondition);
    CHECK(std::string(err.what()).find("stage analyze-corpus failed") != std::string::npos);
  }
  ExperimentConfig p1 = tiny(dir.path / "run");
  p1.set("systems", "P1");
  Experiment conv(p1);
  conv.set_progress_sink([](std::string_view) {});
  try {
    conv.run("convert");
    FAIL("expected failure");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kMissingModel);
    CHECK(std::string(err.what()).find("finetuned-reconstructed") != std::string::npos);
  }
  CHECK_THROWS_AS(e.run("no-such-stage"), Error);
}

TEST_CASE("full run: every system, complete manifest, reproducible reports") {
  TempDir dir("full");
  std::vector<std::string> lines;
  auto run = [&](const fs::path& out) {
    Experiment e(tiny(out));
    e.set_progress_sink([&](std::string_view s) { lines.emplace_back(s); });
    e.run("full-run");
    return e.config_hash();
  };
  const std::string hash = run(dir.path / "a");
  run(dir.path / "b");
  const fs::path a = dir.path / "a", b = dir.path / "b";

  for (const char* r : {"distances.csv", "gv.csv", "nll.csv", "systems.csv", "summary.json"}) {
    CAPTURE(r);
    REQUIRE(fs::is_regular_file(a / "reports" / r));
    CHECK(slurp(a / "reports" / r) == slurp(b / "reports" / r));
  }
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  // Every system produced a WAV; converting systems cover spk01 -> spk02.
  for (const char* s : {"B1", "B2", "B3", "B4", "P1", "P2"})
    CHECK(fs::is_regular_file(a / "converted" / s / "spk01_to_spk02" / "spk01_test_01.wav"));
  CHECK(fs::is_regular_file(a / "converted/UB/spk02/spk02_test_01.wav"));
  const std::string systems = slurp(a / "reports/systems.csv");
  CHECK(std::count(systems.begin(), systems.end(), '\n') == 8);

  // The manifest names every file under the output directory except the
  // manifest and the logs, all tied to this config hash.
  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(m.at("config_hash") == hash);
  std::set<std::string> listed;
  for (const auto& art : m.at("artifacts")) {
    CHECK(art.at("config_hash") == hash);
    listed.insert(art.at("path").get<std::string>());
  }
  std::set<std::string> on_disk;
  for (const auto& f : fs::recursive_directory_iterator(a)) {
    if (!f.is_regular_file()) continue;
    const std::string rel = fs::relative(f.path(), a).generic_string();
    if (rel == "manifest.json" || rel.rfind("logs/", 0) == 0) continue;
    on_disk.insert(rel);
  }
  CHECK(listed == on_disk);
  CHECK(m.at("stages").size() == stage_names().size());

  // Each stage logged its config hash as JSON lines.
  for (const std::string& s : stage_names()) {
    std::ifstream in(a / "logs" / (s + ".jsonl"));
    std::string line;
    REQUIRE(std::getline(in, line));
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("event") == "start");
    CHECK(j.at("config_hash") == hash);
  }
  bool saw_hash = false;
  for (const std::string& l : lines) saw_hash = saw_hash || l.find("config " + hash) != std::string::npos;
  CHECK(saw_hash);

  // Re-running one stage replaces its entries without touching the rest.
  Experiment again(tiny(a));
  again.set_progress_sink([](std::string_view) {});
  again.run("evaluate");
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}
