#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vcwn/corpus.hpp"
#include "vcwn/pipeline.hpp"
#include "vcwn/vae.hpp"
#include "vcwn/wavenet.hpp"

namespace vcwn {

struct ConfigKey {
  const char* name;
  const char* default_value;  // "" = unset
  const char* help;
};

// Flat key=value experiment configuration.
//
// Precedence, lowest first: built-in defaults, config file, environment
// (VCWN_<KEY> with '.' -> '_' and upper case, e.g. VCWN_VAE_STEPS), then
// explicit set() calls (command-line flags).
class ExperimentConfig {
 public:
  ExperimentConfig();  // defaults only

  static const std::vector<ConfigKey>& keys();
  static std::string env_name(const std::string& key);

  // "key = value" lines, '#' starts a comment. Syntax errors throw kConfig
  // listing every bad line; unknown keys are reported by validate().
  void merge_text(const std::string& text, const std::string& origin = "config");
  void merge_file(const std::string& path);
  void apply_environment();
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  // Itemized problems; empty when valid.
  std::vector<std::string> validate() const;
  // Throws kConfig with one line per problem.
  void require_valid() const;

  // Sorted "key=value" lines of every setting that affects results
  // (out and log.every excluded).
  std::string canonical() const;
  // 16 hex digits of FNV-1a over canonical().
  std::string hash() const;

  std::uint64_t seed() const;
  std::string out_dir() const;
  std::size_t log_every() const;
  ToyCorpusConfig toy_corpus() const;
  VaeConfig vae(std::size_t n_speakers) const;
  VaeTrainConfig vae_train() const;
  WaveNetConfig wavenet() const;
  WaveNetTrainConfig si_train() const;
  WaveNetTrainConfig finetune_train() const;
  std::vector<std::string> systems() const;
  // Empty list means every speaker.
  std::vector<std::string> targets() const;
  std::size_t convert_utterances() const;

  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

// Pipeline order; "full-run" runs all of them.
const std::vector<std::string>& stage_names();

// Relative paths of the artifacts inside the output directory.
namespace layout {
std::string corpus_manifest();
std::string features(const std::string& speaker, const std::string& utterance);
std::string profiles();
std::string vae();
std::string wavenet_si();
std::string wavenet_finetuned(const std::string& target, AdaptingKind kind);
std::string adaptation_track(const std::string& target, AdaptingKind kind,
                             const std::string& utterance);
// Converted outputs: <dir>.wav plus audit tracks <dir>.converted.vcft and
// <dir>.final.vcft. UB has no converted track.
std::string system_output(const std::string& system, const std::string& source,
                          const std::string& target, const std::string& utterance);
std::string report(const std::string& name);
std::string stage_log(const std::string& stage);
std::string manifest();
}  // namespace layout

const char* kind_tag(AdaptingKind kind);  // natural, reconstructed, reconstructed_gv
Provenance provenance_for(AdaptingKind kind);

class Experiment {
 public:
  // Validates the configuration (kConfig on failure).
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  const std::string& config_hash() const { return hash_; }
  std::string path(const std::string& relative) const;

  std::vector<std::string> speakers() const;
  std::vector<std::string> targets() const;

  // Runs one stage or "full-run". Failures rethrow with the stage name
  // prefixed and the original error code.
  void run(const std::string& stage);

  // Progress lines (one per log.every steps plus stage start/end); the
  // default writes to stderr.
  void set_progress_sink(std::function<void(std::string_view)> sink) { progress_ = std::move(sink); }

 private:
  friend class StageContext;
  void run_stage(const std::string& stage);

  ExperimentConfig config_;
  std::string hash_;
  std::string root_;
  std::function<void(std::string_view)> progress_;
};

}  // namespace vcwn
