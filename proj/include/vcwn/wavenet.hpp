#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vcwn/autodiff.hpp"
#include "vcwn/checkpoint.hpp"
#include "vcwn/dsp.hpp"
#include "vcwn/rng.hpp"

namespace vcwn {

// 34 MCC shape dims + log energy + continuous log-f0 + voicing flag.
inline constexpr std::size_t kConditioningDims = kShapeDims + 3;

struct WaveNetConfig {
  std::size_t n_stacks = 2;
  std::vector<std::size_t> dilations = {1, 2, 4, 8, 16, 32, 64};  // per stack
  std::size_t residual_channels = 32;
  std::size_t skip_channels = 64;
  std::size_t cond_dims = kConditioningDims;
  std::size_t levels = 256;

  // Smaller network used for the toy experiments and tests.
  static WaveNetConfig toy();

  std::size_t layers() const { return n_stacks * dilations.size(); }
  std::size_t dilation(std::size_t layer) const { return dilations[layer % dilations.size()]; }
  // Number of past samples that can influence a prediction:
  // 1 + (kernel - 1) * sum of dilations, kernel width 2.
  std::size_t receptive_field() const;
  void validate() const;
};

std::size_t receptive_field(const WaveNetConfig& config);

enum class Provenance : std::uint8_t {
  kUntrained,
  kSI,
  kFinetunedNatural,
  kFinetunedReconstructed,
  kFinetunedReconstructedGV,
};

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// Frame-level conditioning duplicated to sample rate on access.
// frames is [cond_dims x F]; sample t uses column t / samples_per_frame.
struct ConditioningPlan {
  Tensor frames;
  std::size_t samples_per_frame = 0;

  std::size_t length() const { return frames.cols() * samples_per_frame; }
  std::size_t frame_of(std::size_t sample) const { return sample / samples_per_frame; }
  // Sample-rate matrix [cond_dims x length()] (tests and small inputs).
  Tensor expand() const;
};

// Unvoiced frames get log-f0 linearly interpolated between the neighbouring
// voiced frames (held flat at the ends) and voicing 0.
ConditioningPlan upsample_conditioning(const FeatureTrack& track, int sample_rate);

class WaveNetModel {
 public:
  // Glorot-uniform weights; the output projection starts at zero so the
  // untrained model predicts the uniform distribution.
  WaveNetModel(const WaveNetConfig& config, Rng& rng);

  const WaveNetConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  Provenance provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = p; }
  const std::string& speaker() const { return speaker_; }
  void set_speaker(std::string s) { speaker_ = std::move(s); }

  // Per-dimension conditioning normalization applied inside the model.
  void set_normalization(std::vector<double> mean, std::vector<double> stddev);
  const std::vector<double>& cond_mean() const { return cond_mean_; }
  const std::vector<double>& cond_std() const { return cond_std_; }

  // Logits [levels x T] for the network input `inputs` (codes fed at each
  // step) and normalized sample-rate conditioning [cond_dims x T]. Output t
  // depends on inputs[t - receptive_field + 1 .. t] only.
  Var logits_graph(Tape& tape, std::span<const int> inputs, Var cond, bool trainable) const;

  // Same computation without a tape.
  Tensor logits(std::span<const int> inputs, const Tensor& cond) const;

  // Teacher-forcing input sequence for target codes: start code, then the
  // targets shifted by one.
  std::vector<int> shifted_inputs(std::span<const int> targets) const;
  // Normalized sample-rate conditioning for plan samples [begin, begin + count).
  Tensor conditioning(const ConditioningPlan& plan, std::size_t begin, std::size_t count) const;

  int start_code() const { return static_cast<int>(config_.levels / 2); }

  Checkpoint to_checkpoint() const;
  static WaveNetModel from_checkpoint(const Checkpoint& checkpoint);

 private:
  explicit WaveNetModel(const WaveNetConfig& config);
  Var leaf(Tape& tape, const std::string& name, bool trainable) const;

  WaveNetConfig config_;
  mutable ParameterSet params_;
  Provenance provenance_ = Provenance::kUntrained;
  std::string speaker_;
  std::vector<double> cond_mean_;
  std::vector<double> cond_std_;
};

// Mean categorical cross-entropy (nats/sample) of the waveform's mu-law codes
// under teacher forcing. The first sample is predicted from the start code.
double teacher_forced_nll(const WaveNetModel& model, const Waveform& wave,
                          const ConditioningPlan& plan);

// Autoregressive generation at temperature 1; length = plan.length().
Waveform sample(const WaveNetModel& model, const ConditioningPlan& plan, std::uint64_t seed,
                int sample_rate = 16000);

// Incremental generator state: one ring buffer of past layer inputs per
// layer, so each step costs one column per layer.
class IncrementalGenerator {
 public:
  explicit IncrementalGenerator(const WaveNetModel& model);
  // Logits for the next sample given the code fed at this step and the
  // normalized conditioning column.
  std::vector<double> step(int input_code, std::span<const double> cond);

 private:
  const WaveNetModel& model_;
  std::vector<std::vector<double>> history_;  // per layer, dilation x R ring
  std::vector<std::size_t> head_;
  std::size_t t_ = 0;
};

struct VocoderPair {
  const FeatureTrack* track = nullptr;
  const Waveform* wave = nullptr;
  std::string speaker;
  std::string utterance;
};

struct WaveNetTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 4;
  std::size_t window = 1024;  // scored samples per window
  double learning_rate = 1e-3;
  double clip_norm = 10.0;
  std::uint64_t seed = 1;
  // Stop as soon as the running mean loss over the last 20 steps falls to
  // this value; <= 0 disables it.
  double target_nll = 0.0;
  // Called after every step with the 1-based step count and the batch loss.
  std::function<void(std::size_t, double)> on_step;
};

struct WaveNetTrainingResult {
  WaveNetModel model;
  std::vector<double> losses;  // per step, nats/sample
  std::size_t steps_run = 0;
};

// Checks the pair lengths (track frames x samples per frame = samples).
void validate_pairs(std::span<const VocoderPair> pairs);

// Normalization statistics of the conditioning over all pairs.
void conditioning_statistics(std::span<const VocoderPair> pairs, std::vector<double>& mean,
                             std::vector<double>& stddev);

// Speaker-independent training on pooled natural pairs from >= 2 speakers.
WaveNetTrainingResult train_si(std::span<const VocoderPair> pairs, const WaveNetConfig& config,
                               const WaveNetTrainConfig& train);

// Whole-network fine-tuning on one target speaker. The provenance tag
// follows the feature kind of the tracks; gv_adapted marks
// reconstructed+GV adaptation features.
WaveNetTrainingResult finetune(const WaveNetModel& si, std::span<const VocoderPair> pairs,
                               const WaveNetTrainConfig& train, bool gv_adapted = false);

}  // namespace vcwn
