#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vcwn/error.hpp"
#include "vcwn/experiment.hpp"
#include "vcwn/rng.hpp"

namespace fs = std::filesystem;

namespace vcwn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty() && std::isfinite(out);
}

// Keys outside the result-affecting set.
bool cosmetic(const std::string& key) { return key == "out" || key == "log.every"; }

}  // namespace

const std::vector<ConfigKey>& ExperimentConfig::keys() {
  static const std::vector<ConfigKey> k = {
      {"seed", "", "random seed for every stage (required)"},
      {"out", "vcwn-run", "output directory"},
      {"log.every", "50", "progress line every N training steps"},
      {"corpus.manifest", "", "corpus listing (speaker split path); empty = generated toy corpus"},
      {"corpus.speakers", "4", "toy corpus speakers"},
      {"corpus.train_utts", "20", "toy corpus training utterances per speaker"},
      {"corpus.test_utts", "5", "toy corpus test utterances per speaker"},
      {"corpus.utt_seconds", "1.0", "toy utterance length in seconds"},
      {"corpus.sample_rate", "16000", "toy corpus sample rate"},
      {"vae.hidden", "128", "VAE hidden units"},
      {"vae.latent", "16", "VAE latent dims"},
      {"vae.steps", "8000", "VAE training steps"},
      {"vae.batch", "64", "VAE batch size (frames)"},
      {"vae.lr", "0.003", "VAE initial learning rate"},
      {"vae.final_lr", "0.0001", "VAE final learning rate (cosine decay; < 0 = constant)"},
      {"wavenet.stacks", "1", "WaveNet dilation stacks"},
      {"wavenet.dilations", "1,2,4,8,16,32,64,128", "dilations per stack"},
      {"wavenet.residual", "16", "residual channels"},
      {"wavenet.skip", "32", "skip channels"},
      {"wavenet.levels", "256", "mu-law levels"},
      {"wavenet.batch", "4", "training windows per step"},
      {"wavenet.window", "1024", "scored samples per window"},
      {"wavenet.clip", "10", "gradient norm clip (0 = off)"},
      {"si.steps", "1000", "speaker-independent training steps"},
      {"si.lr", "0.001", "speaker-independent learning rate"},
      {"finetune.steps", "200", "fine-tuning steps per adapted model"},
      {"finetune.lr", "0.001", "fine-tuning learning rate"},
      {"finetune.target_nll", "0", "stop fine-tuning at this running loss (0 = off)"},
      {"systems", "B1,B2,B3,B4,P1,P2,UB", "systems to run"},
      {"targets", "", "conversion targets (empty = every speaker)"},
      {"convert.utterances", "1", "test utterances converted per source/target pair"},
  };
  return k;
}

ExperimentConfig::ExperimentConfig() {
  for (const ConfigKey& k : keys())
    if (*k.default_value) values_[k.name] = k.default_value;
}

std::string ExperimentConfig::env_name(const std::string& key) {
  std::string out = "VCWN_";
  for (char c : key)
    out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void ExperimentConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, problems;
  std::size_t number = 0;
  std::map<std::string, std::string> parsed;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(body.substr(0, eq));
    if (key.empty()) {
      problems += "\n  " + origin + ":" + std::to_string(number) + ": expected key = value";
      continue;
    }
    if (parsed.count(key))
      problems += "\n  " + origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'";
    parsed[key] = trim(body.substr(eq + 1));
  }
  if (!problems.empty()) fail(ErrorCode::kConfig, "invalid configuration:" + problems);
  for (auto& [k, v] : parsed) values_[k] = v;
}

void ExperimentConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kConfig, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path);
}

void ExperimentConfig::apply_environment() {
  for (const ConfigKey& k : keys())
    if (const char* v = std::getenv(env_name(k.name).c_str())) values_[k.name] = trim(v);
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  values_[trim(key)] = trim(value);
}

bool ExperimentConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  static const std::string empty;
  auto it = values_.find(key);
  return it == values_.end() ? empty : it->second;
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  std::set<std::string> known;
  for (const ConfigKey& k : keys()) known.insert(k.name);
  for (const auto& [k, v] : values_)
    if (!known.count(k)) errs.push_back("unknown key '" + k + "'");

  std::uint64_t u = 0;
  double d = 0.0;
  if (!has("seed"))
    errs.push_back("seed: required (config file, " + env_name("seed") + " or --seed)");
  else if (!parse_u64(get("seed"), u))
    errs.push_back("seed: '" + get("seed") + "' is not a non-negative integer");

  auto positive = [&](const char* key, std::uint64_t min = 1) {
    if (!parse_u64(get(key), u) || u < min)
      errs.push_back(std::string(key) + ": expected an integer >= " + std::to_string(min) +
                     ", got '" + get(key) + "'");
  };
  for (const char* key :
       {"log.every", "corpus.train_utts", "corpus.test_utts", "vae.hidden", "vae.latent",
        "vae.steps", "vae.batch", "wavenet.stacks", "wavenet.residual", "wavenet.skip",
        "wavenet.batch", "wavenet.window", "si.steps", "finetune.steps", "convert.utterances"})
    positive(key);
  positive("corpus.speakers", 2);
  positive("corpus.sample_rate", 8000);
  positive("wavenet.levels", 2);

  auto real = [&](const char* key, double min, bool strict) {
    if (!parse_double(get(key), d) || (strict ? d <= min : d < min)) {
      char bound[32];
      std::snprintf(bound, sizeof(bound), "%s %g", strict ? ">" : ">=", min);
      errs.push_back(std::string(key) + ": expected a number " + bound + ", got '" + get(key) + "'");
    }
  };
  real("corpus.utt_seconds", 0.2, true);
  real("vae.lr", 0.0, true);
  real("si.lr", 0.0, true);
  real("finetune.lr", 0.0, true);
  real("finetune.target_nll", 0.0, false);
  real("wavenet.clip", 0.0, false);
  if (!parse_double(get("vae.final_lr"), d))
    errs.push_back("vae.final_lr: expected a number, got '" + get("vae.final_lr") + "'");

  const auto dil = split_list(get("wavenet.dilations"));
  if (dil.empty()) errs.push_back("wavenet.dilations: empty list");
  for (const std::string& s : dil)
    if (!parse_u64(s, u) || u == 0)
      errs.push_back("wavenet.dilations: '" + s + "' is not a positive integer");

  const auto sys = split_list(get("systems"));
  if (sys.empty()) errs.push_back("systems: empty list");
  std::set<std::string> seen;
  for (const std::string& s : sys) {
    bool ok = false;
    for (const SystemSpec& spec : system_specs()) ok = ok || spec.id == s;
    if (!ok) errs.push_back("systems: unknown system '" + s + "'");
    if (!seen.insert(s).second) errs.push_back("systems: '" + s + "' listed twice");
  }

  // Speaker ids for the target check.
  std::vector<std::string> speakers;
  if (has("corpus.manifest")) {
    const std::string m = get("corpus.manifest");
    if (!fs::is_regular_file(m)) {
      errs.push_back("corpus.manifest: '" + m + "' does not exist");
    } else {
      try {
        const CorpusManifest cm = CorpusManifest::load(m);
        cm.validate();
        speakers = cm.speakers;
        for (const ManifestEntry& e : cm.entries)
          if (!fs::is_regular_file(cm.resolve(e)))
            errs.push_back("corpus.manifest: missing audio '" + cm.resolve(e) + "'");
        if (speakers.size() < 2) errs.push_back("corpus.manifest: needs at least 2 speakers");
      } catch (const Error& e) {
        errs.push_back(std::string("corpus.manifest: ") + e.what());
      }
    }
  } else if (parse_u64(get("corpus.speakers"), u) && u >= 2) {
    for (std::uint64_t s = 0; s < u && s < 1000; ++s) {
      char id[16];
      std::snprintf(id, sizeof(id), "spk%02llu", static_cast<unsigned long long>(s + 1));
      speakers.push_back(id);
    }
  }
  for (const std::string& t : split_list(get("targets")))
    if (!speakers.empty() && std::find(speakers.begin(), speakers.end(), t) == speakers.end())
      errs.push_back("targets: unknown speaker '" + t + "'");

  if (!has("out")) errs.push_back("out: required");
  else if (fs::exists(get("out")) && !fs::is_directory(get("out")))
    errs.push_back("out: '" + get("out") + "' exists and is not a directory");
  return errs;
}

void ExperimentConfig::require_valid() const {
  const auto errs = validate();
  if (errs.empty()) return;
  std::string msg = "invalid configuration:";
  for (const std::string& e : errs) msg += "\n  " + e;
  fail(ErrorCode::kConfig, msg);
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_)
    if (!cosmetic(k)) out += k + "=" + v + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

std::size_t ExperimentConfig::get_size(const std::string& key) const {
  std::uint64_t u = 0;
  require(parse_u64(get(key), u), ErrorCode::kConfig, key + ": not an integer");
  return static_cast<std::size_t>(u);
}

double ExperimentConfig::get_double(const std::string& key) const {
  double d = 0.0;
  require(parse_double(get(key), d), ErrorCode::kConfig, key + ": not a number");
  return d;
}

std::uint64_t ExperimentConfig::seed() const {
  std::uint64_t u = 0;
  require(parse_u64(get("seed"), u), ErrorCode::kConfig, "seed: required");
  return u;
}

std::string ExperimentConfig::out_dir() const { return get("out"); }
std::size_t ExperimentConfig::log_every() const { return get_size("log.every"); }

ToyCorpusConfig ExperimentConfig::toy_corpus() const {
  ToyCorpusConfig c;
  c.seed = mix_seed(seed(), fnv1a("gen-corpus"));
  c.n_speakers = get_size("corpus.speakers");
  c.train_utts = get_size("corpus.train_utts");
  c.test_utts = get_size("corpus.test_utts");
  c.utt_seconds = get_double("corpus.utt_seconds");
  c.sample_rate = static_cast<int>(get_size("corpus.sample_rate"));
  return c;
}

VaeConfig ExperimentConfig::vae(std::size_t n_speakers) const {
  VaeConfig c;
  c.hidden = get_size("vae.hidden");
  c.latent = get_size("vae.latent");
  c.n_speakers = n_speakers;
  return c;
}

VaeTrainConfig ExperimentConfig::vae_train() const {
  VaeTrainConfig t;
  t.steps = get_size("vae.steps");
  t.batch = get_size("vae.batch");
  t.learning_rate = get_double("vae.lr");
  t.final_learning_rate = get_double("vae.final_lr");
  t.seed = mix_seed(seed(), fnv1a("train-vae"));
  return t;
}

WaveNetConfig ExperimentConfig::wavenet() const {
  WaveNetConfig c;
  c.n_stacks = get_size("wavenet.stacks");
  c.dilations.clear();
  for (const std::string& s : split_list(get("wavenet.dilations"))) {
    std::uint64_t u = 0;
    require(parse_u64(s, u), ErrorCode::kConfig, "wavenet.dilations: bad entry '" + s + "'");
    c.dilations.push_back(static_cast<std::size_t>(u));
  }
  c.residual_channels = get_size("wavenet.residual");
  c.skip_channels = get_size("wavenet.skip");
  c.levels = get_size("wavenet.levels");
  return c;
}

WaveNetTrainConfig ExperimentConfig::si_train() const {
  WaveNetTrainConfig t;
  t.steps = get_size("si.steps");
  t.batch = get_size("wavenet.batch");
  t.window = get_size("wavenet.window");
  t.learning_rate = get_double("si.lr");
  t.clip_norm = get_double("wavenet.clip");
  t.seed = mix_seed(seed(), fnv1a("train-wavenet-si"));
  return t;
}

WaveNetTrainConfig ExperimentConfig::finetune_train() const {
  WaveNetTrainConfig t;
  t.steps = get_size("finetune.steps");
  t.batch = get_size("wavenet.batch");
  t.window = get_size("wavenet.window");
  t.learning_rate = get_double("finetune.lr");
  t.clip_norm = get_double("wavenet.clip");
  t.target_nll = get_double("finetune.target_nll");
  // Same stream for every adapted model: identical budgets and window draws.
  t.seed = mix_seed(seed(), fnv1a("finetune"));
  return t;
}

std::vector<std::string> ExperimentConfig::systems() const { return split_list(get("systems")); }
std::vector<std::string> ExperimentConfig::targets() const { return split_list(get("targets")); }
std::size_t ExperimentConfig::convert_utterances() const { return get_size("convert.utterances"); }

}  // namespace vcwn
