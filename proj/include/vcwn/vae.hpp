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

// One-hot speaker code.
class SpeakerCode {
 public:
  SpeakerCode(std::size_t index, std::size_t n_speakers);

  std::size_t index() const { return index_; }
  std::size_t size() const { return n_; }
  std::vector<double> one_hot() const;

 private:
  std::size_t index_;
  std::size_t n_;
};

struct VaeConfig {
  std::size_t input_dim = kShapeDims;
  std::size_t hidden = 128;
  std::size_t latent = 16;
  std::size_t n_speakers = 2;
};

struct LatentPosterior {
  std::vector<double> mean;
  std::vector<double> log_var;
};

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double latent = 0.0;
};

enum class ForwardMode { kReconstruct, kConvert };

// Speaker-conditioned VAE over MCC dims 1..34.
//
// Encoder: input -> hidden -> hidden -> [mean | log-variance] (tanh hidden).
// Decoder: [z | one-hot speaker] -> hidden -> hidden -> input (tanh hidden).
// Inputs are z-scored per dimension with statistics kept in the model.
class VaeModel {
 public:
  // Glorot-uniform weights, zero biases.
  VaeModel(const VaeConfig& config, Rng& rng);
  // Every weight and bias zero.
  static VaeModel zeros(const VaeConfig& config);

  const VaeConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  void set_normalization(std::vector<double> mean, std::vector<double> stddev);
  const std::vector<double>& feature_mean() const { return mean_; }
  const std::vector<double>& feature_std() const { return std_; }

  void set_speakers(std::vector<std::string> ids);
  const std::vector<std::string>& speakers() const { return speakers_; }
  SpeakerCode code_for(const std::string& speaker) const;

  // h: normalized 34-dim frame.
  LatentPosterior encode(std::span<const double> h) const;
  // Returns the normalized 34-dim frame.
  std::vector<double> decode(std::span<const double> z, const SpeakerCode& code) const;

  // Graph builders over column batches. h [input_dim x B], code [n_speakers x B].
  struct Posterior {
    Var mean;
    Var log_var;
  };
  struct LossVars {
    Var total;
    Var recon;
    Var latent;
  };
  Posterior encode_graph(Tape& tape, Var h, bool trainable) const;
  Var decode_graph(Tape& tape, Var z, Var code, bool trainable) const;
  // Losses are averaged over the B columns. noise is [latent x B].
  LossVars elbo_graph(Tape& tape, Var h, Var code, const Tensor& noise, bool trainable) const;

  // Frame-wise encode -> decode of MCC dims 1..34. Dim 0, energy, f0 and
  // voicing are copied through; frame count is preserved. deterministic
  // uses z = mean, otherwise z is sampled from `rng`.
  FeatureTrack forward(const FeatureTrack& track, const SpeakerCode& code, ForwardMode mode,
                       bool deterministic = true, Rng* rng = nullptr) const;

  Checkpoint to_checkpoint() const;
  static VaeModel from_checkpoint(const Checkpoint& checkpoint);

 private:
  explicit VaeModel(const VaeConfig& config);
  Var leaf(Tape& tape, const std::string& name, bool trainable) const;

  VaeConfig config_;
  mutable ParameterSet params_;
  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<std::string> speakers_;
};

// Single-frame ELBO terms for a normalized frame and explicit noise.
LossBreakdown elbo_loss(const VaeModel& model, std::span<const double> h,
                        const SpeakerCode& code, std::span<const double> noise);

struct LabeledTrack {
  const FeatureTrack* track = nullptr;
  std::size_t speaker = 0;
};

struct VaeTrainConfig {
  std::size_t steps = 8000;
  std::size_t batch = 64;
  double learning_rate = 3e-3;
  // Cosine decay from learning_rate to this value over the run; a
  // negative value keeps the rate constant.
  double final_learning_rate = 1e-4;
  std::uint64_t seed = 1;
  // 0 evaluates every steps / 100 steps (at least 1).
  std::size_t eval_interval = 0;
  std::size_t eval_frames = 512;
  // Called after every step with the 1-based step count and the batch loss.
  std::function<void(std::size_t, double)> on_step;
};

struct VaeTrainingResult {
  VaeModel model;
  // Total loss on a fixed evaluation subset with fixed noise, measured
  // before training and then every eval_interval steps.
  std::vector<double> eval_history;
  std::vector<double> step_losses;
};

// Per-dimension mean / stddev of MCC dims 1..34 pooled over all frames.
void corpus_statistics(std::span<const LabeledTrack> corpus, std::vector<double>& mean,
                       std::vector<double>& stddev);

VaeTrainingResult train_vae(std::span<const LabeledTrack> corpus,
                            const std::vector<std::string>& speakers, const VaeConfig& config,
                            const VaeTrainConfig& train);

}  // namespace vcwn
