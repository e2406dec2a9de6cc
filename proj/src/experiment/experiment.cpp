#include "vcwn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vcwn/analysis.hpp"
#include "vcwn/error.hpp"
#include "vcwn/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vcwn {

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> s = {
      "gen-corpus", "analyze-corpus", "train-vae", "train-wavenet-si",
      "build-adapt-set", "finetune", "convert", "evaluate"};
  return s;
}

const char* kind_tag(AdaptingKind kind) {
  switch (kind) {
    case AdaptingKind::kNatural: return "natural";
    case AdaptingKind::kReconstructed: return "reconstructed";
    case AdaptingKind::kReconstructedGV: return "reconstructed_gv";
    case AdaptingKind::kNone: break;
  }
  fail(ErrorCode::kInvalidArgument, "adapting kind 'none' has no tag");
}

Provenance provenance_for(AdaptingKind kind) {
  switch (kind) {
    case AdaptingKind::kNatural: return Provenance::kFinetunedNatural;
    case AdaptingKind::kReconstructed: return Provenance::kFinetunedReconstructed;
    case AdaptingKind::kReconstructedGV: return Provenance::kFinetunedReconstructedGV;
    case AdaptingKind::kNone: break;
  }
  return Provenance::kSI;
}

namespace layout {
std::string corpus_manifest() { return "corpus/manifest.txt"; }
std::string features(const std::string& speaker, const std::string& utterance) {
  return "features/" + speaker + "/" + utterance + ".vcft";
}
std::string profiles() { return "features/profiles.json"; }
std::string vae() { return "models/vae.vcrm"; }
std::string wavenet_si() { return "models/wavenet_si.vcrm"; }
std::string wavenet_finetuned(const std::string& target, AdaptingKind kind) {
  return "models/wavenet_" + target + "_" + kind_tag(kind) + ".vcrm";
}
std::string adaptation_track(const std::string& target, AdaptingKind kind,
                             const std::string& utterance) {
  return "adapt/" + target + "/" + kind_tag(kind) + "/" + utterance + ".vcft";
}
std::string system_output(const std::string& system, const std::string& source,
                          const std::string& target, const std::string& utterance) {
  if (source == target) return "converted/" + system + "/" + target + "/" + utterance;
  return "converted/" + system + "/" + source + "_to_" + target + "/" + utterance;
}
std::string report(const std::string& name) { return "reports/" + name; }
std::string stage_log(const std::string& stage) { return "logs/" + stage + ".jsonl"; }
std::string manifest() { return "manifest.json"; }
}  // namespace layout

namespace {

const AdaptingKind kKinds[] = {AdaptingKind::kNatural, AdaptingKind::kReconstructed,
                               AdaptingKind::kReconstructedGV};

const char* model_name(AdaptingKind kind) {
  switch (kind) {
    case AdaptingKind::kNatural: return "finetuned-natural";
    case AdaptingKind::kReconstructed: return "finetuned-reconstructed";
    default: return "finetuned-reconstructed-GV";
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(out.good(), ErrorCode::kIo, "cannot write '" + path + "'");
}

json profile_json(const SpeakerProfile& p) {
  return {{"id", p.id},
          {"code_index", p.code_index},
          {"lf0_mean", p.lf0_mean},
          {"lf0_std", p.lf0_std},
          {"gv", p.gv},
          {"utterances", p.utterances}};
}

SpeakerProfile profile_from_json(const json& j) {
  SpeakerProfile p;
  p.id = j.at("id").get<std::string>();
  p.code_index = j.at("code_index").get<std::size_t>();
  p.lf0_mean = j.at("lf0_mean").get<double>();
  p.lf0_std = j.at("lf0_std").get<double>();
  p.gv = j.at("gv").get<GvVector>();
  p.utterances = j.at("utterances").get<std::vector<std::string>>();
  return p;
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

// Per-stage state: log file, produced artifacts, progress output.
class StageContext {
 public:
  StageContext(Experiment& e, std::string stage) : e_(e), stage_(std::move(stage)) {
    const std::string log = e_.path(layout::stage_log(stage_));
    fs::create_directories(fs::path(log).parent_path());
    log_.open(log, std::ios::trunc);
    require(log_.good(), ErrorCode::kIo, "cannot write '" + log + "'");
    start_ = std::chrono::steady_clock::now();
    event({{"event", "start"}});
    say("config " + e_.hash_);
  }

  const ExperimentConfig& cfg() const { return e_.config_; }
  std::string path(const std::string& rel) const { return e_.path(rel); }

  void event(json j) {
    j["stage"] = stage_;
    j["config_hash"] = e_.hash_;
    log_ << j.dump() << "\n";
    log_.flush();
  }
  void metric(const std::string& name, double value, json extra = json::object()) {
    extra["event"] = "metric";
    extra["name"] = name;
    extra["value"] = value;
    event(std::move(extra));
  }
  void say(const std::string& msg) { e_.progress_("[" + stage_ + "] " + msg); }

  // Training progress: every step goes to the metrics log, every N-th
  // step (and the last) to the progress sink.
  std::function<void(std::size_t, double)> step_logger(const std::string& what, std::size_t total) {
    const std::size_t every = cfg().log_every();
    return [this, what, total, every](std::size_t step, double loss) {
      event({{"event", "step"}, {"what", what}, {"step", step}, {"loss", loss}});
      if (step % every == 0 || step == total) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s step %zu/%zu loss %.4f", what.c_str(), step, total, loss);
        say(buf);
      }
    };
  }

  void produce(const std::string& rel) { produced_.push_back(rel); }

  void finish() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    event({{"event", "end"}, {"seconds", secs}, {"artifacts", produced_.size()}});
    log_.close();
    update_manifest();
    char buf[96];
    std::snprintf(buf, sizeof(buf), "done in %.1f s, %zu artifacts", secs, produced_.size());
    say(buf);
  }

  // ---- shared loaders ----

  CorpusManifest corpus() const {
    const std::string m =
        cfg().has("corpus.manifest") ? cfg().get("corpus.manifest") : path(layout::corpus_manifest());
    require(fs::is_regular_file(m), ErrorCode::kPrecondition,
            "corpus manifest '" + m + "' not found; run gen-corpus first");
    return CorpusManifest::load(m);
  }

  Waveform wave(const CorpusManifest& c, const ManifestEntry& e) const {
    return pad_to_frames(read_wav(c.resolve(e)));
  }

  FeatureTrack features(const ManifestEntry& e) const {
    const std::string p = path(layout::features(e.speaker, e.utterance_id()));
    require(fs::is_regular_file(p), ErrorCode::kPrecondition,
            "features '" + p + "' not found; run analyze-corpus first");
    return read_feature_track(p);
  }

  std::map<std::string, SpeakerProfile> profiles() const {
    const std::string p = path(layout::profiles());
    require(fs::is_regular_file(p), ErrorCode::kPrecondition,
            "speaker profiles '" + p + "' not found; run analyze-corpus first");
    std::map<std::string, SpeakerProfile> out;
    const json doc = json::parse(read_file(p));
    for (const json& j : doc.at("speakers")) {
      SpeakerProfile sp = profile_from_json(j);
      out.emplace(sp.id, std::move(sp));
    }
    return out;
  }

  VaeModel vae() const {
    const std::string p = path(layout::vae());
    require(fs::is_regular_file(p), ErrorCode::kMissingModel,
            "VAE checkpoint '" + p + "' not found; run train-vae first");
    return VaeModel::from_checkpoint(Checkpoint::load(p));
  }

  WaveNetModel wavenet(const std::string& rel, const std::string& name) const {
    const std::string p = path(rel);
    require(fs::is_regular_file(p), ErrorCode::kMissingModel,
            name + " WaveNet checkpoint '" + p + "' not found");
    return WaveNetModel::from_checkpoint(Checkpoint::load(p));
  }

  void save_track(const std::string& rel, const FeatureTrack& t) {
    const std::string p = path(rel);
    fs::create_directories(fs::path(p).parent_path());
    write_feature_track(p, t);
    produce(rel);
  }
  void save_text(const std::string& rel, const std::string& text) {
    write_file(path(rel), text);
    produce(rel);
  }
  void save_checkpoint(const std::string& rel, const Checkpoint& c) {
    const std::string p = path(rel);
    fs::create_directories(fs::path(p).parent_path());
    c.save(p);
    produce(rel);
  }
  void save_wave(const std::string& rel, const Waveform& w) {
    const std::string p = path(rel);
    fs::create_directories(fs::path(p).parent_path());
    write_wav(p, w);
    produce(rel);
  }

 private:
  void update_manifest() {
    const std::string p = path(layout::manifest());
    json m = fs::is_regular_file(p) ? json::parse(read_file(p)) : json::object();
    json artifacts = json::array();
    if (m.contains("artifacts"))
      for (const json& a : m["artifacts"])
        if (a.at("stage") != stage_) artifacts.push_back(a);
    for (const std::string& rel : produced_) {
      const std::string bytes = read_file(path(rel));
      artifacts.push_back({{"path", rel},
                           {"stage", stage_},
                           {"config_hash", e_.hash_},
                           {"bytes", bytes.size()},
                           {"fnv1a", hex64(fnv1a(bytes))}});
    }
    std::sort(artifacts.begin(), artifacts.end(),
              [](const json& a, const json& b) { return a.at("path") < b.at("path"); });
    json stages = m.contains("stages") ? m["stages"] : json::object();
    stages[stage_] = {{"config_hash", e_.hash_},
                      {"log", layout::stage_log(stage_)},
                      {"artifacts", produced_.size()}};
    json config = json::object();
    for (const auto& [k, v] : e_.config_.values())
      if (k != "out" && k != "log.every") config[k] = v;
    json out = {{"config_hash", e_.hash_}, {"config", config}, {"stages", stages},
                {"artifacts", artifacts}};
    write_file(p, out.dump(2) + "\n");
  }

  Experiment& e_;
  std::string stage_;
  std::ofstream log_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> produced_;
};

namespace {

// Which adapted WaveNets the configured systems need.
std::vector<AdaptingKind> needed_kinds(const std::vector<std::string>& systems) {
  std::set<AdaptingKind> k;
  for (const std::string& s : systems) {
    const SystemSpec& spec = system_spec(s);
    if (spec.vocoder == VocoderKind::kWaveNet) k.insert(spec.adapting);
  }
  std::vector<AdaptingKind> out;
  for (AdaptingKind kind : kKinds)
    if (k.count(kind)) out.push_back(kind);
  return out;
}

void stage_gen_corpus(StageContext& ctx) {
  if (ctx.cfg().has("corpus.manifest")) {
    ctx.say("corpus.manifest is set; using " + ctx.cfg().get("corpus.manifest"));
    return;
  }
  const std::string dir = ctx.path("corpus");
  const CorpusManifest m = make_toy_corpus(ctx.cfg().toy_corpus(), dir);
  for (const ManifestEntry& e : m.entries) ctx.produce("corpus/" + e.path);
  ctx.produce(layout::corpus_manifest());
  ctx.event({{"event", "metric"}, {"name", "utterances"}, {"value", m.entries.size()}});
  ctx.say(std::to_string(m.speakers.size()) + " speakers, " + std::to_string(m.entries.size()) +
          " utterances");
}

void stage_analyze(StageContext& ctx) {
  const CorpusManifest c = ctx.corpus();
  c.validate();
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    const ManifestEntry& e = c.entries[i];
    const AnalysisResult a = analyze(ctx.wave(c, e));
    ctx.save_track(layout::features(e.speaker, e.utterance_id()), a.track);
    if ((i + 1) % ctx.cfg().log_every() == 0 || i + 1 == c.entries.size())
      ctx.say("analyzed " + std::to_string(i + 1) + "/" + std::to_string(c.entries.size()));
  }
  // Profiles from the stored (audit) tracks so every later stage sees the
  // same numbers.
  json speakers = json::array();
  for (std::size_t s = 0; s < c.speakers.size(); ++s) {
    std::vector<FeatureTrack> tracks;
    std::vector<std::string> ids;
    for (const ManifestEntry& e : c.select(c.speakers[s], "train")) {
      tracks.push_back(ctx.features(e));
      ids.push_back(e.utterance_id());
    }
    std::vector<const FeatureTrack*> ptrs;
    for (const FeatureTrack& t : tracks) ptrs.push_back(&t);
    const SpeakerProfile p = build_profile(c.speakers[s], s, ptrs, ids);
    ctx.metric("lf0_mean", p.lf0_mean, {{"speaker", p.id}});
    ctx.metric("lf0_std", p.lf0_std, {{"speaker", p.id}});
    speakers.push_back(profile_json(p));
  }
  ctx.save_text(layout::profiles(), json{{"speakers", speakers}}.dump(2) + "\n");
}

void stage_train_vae(StageContext& ctx) {
  const CorpusManifest c = ctx.corpus();
  std::vector<FeatureTrack> tracks;
  std::vector<std::size_t> labels;
  for (std::size_t s = 0; s < c.speakers.size(); ++s)
    for (const ManifestEntry& e : c.select(c.speakers[s], "train")) {
      tracks.push_back(ctx.features(e));
      labels.push_back(s);
    }
  std::vector<LabeledTrack> corpus;
  for (std::size_t i = 0; i < tracks.size(); ++i) corpus.push_back({&tracks[i], labels[i]});
  VaeTrainConfig tc = ctx.cfg().vae_train();
  tc.on_step = ctx.step_logger("vae", tc.steps);
  const VaeTrainingResult r = train_vae(corpus, c.speakers, ctx.cfg().vae(c.speakers.size()), tc);
  for (std::size_t i = 0; i < r.eval_history.size(); ++i)
    ctx.metric("eval_loss", r.eval_history[i], {{"index", i}});
  ctx.save_checkpoint(layout::vae(), r.model.to_checkpoint());
}

void stage_train_si(StageContext& ctx) {
  const CorpusManifest c = ctx.corpus();
  std::vector<FeatureTrack> tracks;
  std::vector<Waveform> waves;
  std::vector<const ManifestEntry*> entries;
  for (const std::string& s : c.speakers)
    for (const ManifestEntry& e : c.entries)
      if (e.speaker == s && e.split == "train") entries.push_back(&e);
  tracks.reserve(entries.size());
  waves.reserve(entries.size());
  std::vector<VocoderPair> pairs;
  for (const ManifestEntry* e : entries) {
    tracks.push_back(ctx.features(*e));
    waves.push_back(ctx.wave(c, *e));
    pairs.push_back({&tracks.back(), &waves.back(), e->speaker, e->utterance_id()});
  }
  WaveNetTrainConfig tc = ctx.cfg().si_train();
  tc.on_step = ctx.step_logger("wavenet-si", tc.steps);
  const WaveNetTrainingResult r = train_si(pairs, ctx.cfg().wavenet(), tc);
  ctx.metric("steps_run", static_cast<double>(r.steps_run));
  ctx.save_checkpoint(layout::wavenet_si(), r.model.to_checkpoint());
}

void stage_build_adapt(StageContext& ctx, const std::vector<std::string>& targets) {
  const CorpusManifest c = ctx.corpus();
  const VaeModel vae = ctx.vae();
  const auto profiles = ctx.profiles();
  for (const std::string& t : targets) {
    std::vector<FeatureTrack> tracks;
    std::vector<Waveform> waves;
    std::vector<std::string> ids;
    for (const ManifestEntry& e : c.select(t, "train")) {
      tracks.push_back(ctx.features(e));
      waves.push_back(ctx.wave(c, e));
      ids.push_back(e.utterance_id());
    }
    std::vector<const FeatureTrack*> tp;
    std::vector<const Waveform*> wp;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      tp.push_back(&tracks[i]);
      wp.push_back(&waves[i]);
    }
    for (AdaptingKind kind : kKinds) {
      const auto set = build_adaptation_set(vae, profiles.at(t), tp, wp, kind, ids);
      double mcd = 0.0;
      for (std::size_t i = 0; i < set.size(); ++i) {
        ctx.save_track(layout::adaptation_track(t, kind, set[i].utterance), set[i].track);
        mcd += mean_mcd(set[i].track, tracks[i], Alignment::kNone);
      }
      ctx.metric("mcd_vs_natural", mcd / static_cast<double>(set.size()),
                 {{"target", t}, {"kind", kind_tag(kind)}});
    }
    ctx.say("adaptation sets for " + t);
  }
}

double mean_nll(const WaveNetModel& m, std::span<const VocoderPair> pairs) {
  double s = 0.0;
  for (const VocoderPair& p : pairs)
    s += teacher_forced_nll(m, *p.wave, upsample_conditioning(*p.track, p.wave->sample_rate));
  return s / static_cast<double>(pairs.size());
}

void stage_finetune(StageContext& ctx, const std::vector<std::string>& targets) {
  const CorpusManifest c = ctx.corpus();
  const auto kinds = needed_kinds(ctx.cfg().systems());
  if (kinds.empty()) {
    ctx.say("no configured system uses an adapted WaveNet");
    return;
  }
  const WaveNetModel si = ctx.wavenet(layout::wavenet_si(), "SI");
  for (const std::string& t : targets) {
    std::vector<Waveform> waves;
    std::vector<std::string> ids;
    for (const ManifestEntry& e : c.select(t, "train")) {
      waves.push_back(ctx.wave(c, e));
      ids.push_back(e.utterance_id());
    }
    for (AdaptingKind kind : kinds) {
      std::vector<FeatureTrack> tracks;
      for (const std::string& id : ids) {
        const std::string p = ctx.path(layout::adaptation_track(t, kind, id));
        require(fs::is_regular_file(p), ErrorCode::kPrecondition,
                "adaptation features '" + p + "' not found; run build-adapt-set first");
        tracks.push_back(read_feature_track(p));
      }
      std::vector<VocoderPair> pairs;
      for (std::size_t i = 0; i < ids.size(); ++i) pairs.push_back({&tracks[i], &waves[i], t, ids[i]});
      WaveNetTrainConfig tc = ctx.cfg().finetune_train();
      const std::string what = t + "/" + kind_tag(kind);
      tc.on_step = ctx.step_logger(what, tc.steps);
      const double before = mean_nll(si, pairs);
      const WaveNetTrainingResult r =
          finetune(si, pairs, tc, kind == AdaptingKind::kReconstructedGV);
      const double after = mean_nll(r.model, pairs);
      const json tags = {{"target", t}, {"kind", kind_tag(kind)}};
      ctx.metric("adapt_nll_before", before, tags);
      ctx.metric("adapt_nll_after", after, tags);
      ctx.metric("steps_run", static_cast<double>(r.steps_run), tags);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: adaptation NLL %.4f -> %.4f", what.c_str(), before, after);
      ctx.say(buf);
      ctx.save_checkpoint(layout::wavenet_finetuned(t, kind), r.model.to_checkpoint());
    }
  }
}

// Largest relative deviation of the utterance GV from the target GV over
// the dims the postfilter scaled.
double gv_rel_error(const FeatureTrack& before, const FeatureTrack& after, const GvVector& target) {
  const GvVector pre = utterance_gv(before), post = utterance_gv(after);
  double worst = 0.0;
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (pre[d] < 1e-12 || target[d] <= 0.0) continue;
    worst = std::max(worst, std::abs(post[d] - target[d]) / target[d]);
  }
  return worst;
}

void stage_convert(StageContext& ctx, const std::vector<std::string>& speakers,
                   const std::vector<std::string>& targets) {
  const auto systems = ctx.cfg().systems();
  // Resolve every model file up front so a missing one fails before any work.
  std::vector<std::string> missing;
  bool need_vae = false;
  for (const std::string& s : systems) {
    const SystemSpec& spec = system_spec(s);
    need_vae = need_vae || spec.convert;
    if (spec.vocoder != VocoderKind::kWaveNet) continue;
    for (const std::string& t : targets) {
      const std::string rel = layout::wavenet_finetuned(t, spec.adapting);
      if (!fs::is_regular_file(ctx.path(rel)))
        missing.push_back("system " + s + " needs the " + model_name(spec.adapting) +
                          " WaveNet for target " + t + " (" + rel + ")");
    }
  }
  if (need_vae && !fs::is_regular_file(ctx.path(layout::vae())))
    missing.insert(missing.begin(), "conversion needs the VAE checkpoint (" + layout::vae() + ")");
  if (!missing.empty()) {
    std::string msg = "missing model(s); run the training stages first:";
    std::set<std::string> uniq;
    for (const std::string& m : missing)
      if (uniq.insert(m).second) msg += "\n  " + m;
    fail(ErrorCode::kMissingModel, msg);
  }

  const CorpusManifest c = ctx.corpus();
  const auto profiles = ctx.profiles();
  std::unique_ptr<VaeModel> vae;
  if (need_vae) vae = std::make_unique<VaeModel>(ctx.vae());
  const std::size_t per_pair = ctx.cfg().convert_utterances();

  std::string table = "system,source,target,utterance,frames,samples,gv_max_rel_err\n";
  for (const std::string& s : systems) {
    const SystemSpec& spec = system_spec(s);
    for (const std::string& t : targets) {
      std::map<AdaptingKind, std::unique_ptr<WaveNetModel>> nets;
      SystemModels models;
      models.vae = vae.get();
      if (spec.vocoder == VocoderKind::kWaveNet) {
        auto m = std::make_unique<WaveNetModel>(
            ctx.wavenet(layout::wavenet_finetuned(t, spec.adapting), model_name(spec.adapting)));
        switch (spec.adapting) {
          case AdaptingKind::kNatural: models.wavenet_natural = m.get(); break;
          case AdaptingKind::kReconstructed: models.wavenet_reconstructed = m.get(); break;
          default: models.wavenet_reconstructed_gv = m.get(); break;
        }
        nets[spec.adapting] = std::move(m);
      }
      // UB resynthesizes the target's own test sentences.
      std::vector<std::string> sources;
      if (spec.convert) {
        for (const std::string& src : speakers)
          if (src != t) sources.push_back(src);
      } else {
        sources.push_back(t);
      }
      for (const std::string& src : sources) {
        const auto tests = c.select(src, "test");
        for (std::size_t k = 0; k < std::min(per_pair, tests.size()); ++k) {
          const ManifestEntry& e = tests[k];
          const FeatureTrack natural = ctx.features(e);
          const Waveform input = ctx.wave(c, e);
          RunOptions opt;
          opt.sample_rate = input.sample_rate;
          opt.seed = mix_seed(ctx.cfg().seed(), fnv1a(s + "/" + src + "/" + t + "/" + e.utterance_id()));
          const SystemOutput out =
              run_system(spec, natural, profiles.at(src), profiles.at(t), models, opt);
          const std::size_t expect =
              natural.frames() * frame_shift_samples(natural.frame_shift_ms, opt.sample_rate);
          require(out.wave.samples.size() == expect, ErrorCode::kPrecondition,
                  "system " + s + " produced " + std::to_string(out.wave.samples.size()) +
                      " samples, expected " + std::to_string(expect));
          for (double v : out.wave.samples)
            require(std::isfinite(v), ErrorCode::kNonFinite, "system " + s + " produced non-finite audio");
          const std::string base = layout::system_output(s, src, t, e.utterance_id());
          ctx.save_wave(base + ".wav", out.wave);
          if (spec.convert) ctx.save_track(base + ".converted.vcft", out.converted);
          ctx.save_track(base + ".final.vcft", out.final);
          std::string gv_err = "";
          if (spec.gv_postfilter) {
            const double err = gv_rel_error(out.compensated, out.final, profiles.at(t).gv);
            gv_err = csv_number(err);
            ctx.metric("gv_max_rel_err", err, {{"system", s}, {"utterance", e.utterance_id()}});
          }
          table += s + "," + src + "," + t + "," + e.utterance_id() + "," +
                   std::to_string(out.final.frames()) + "," +
                   std::to_string(out.wave.samples.size()) + "," + gv_err + "\n";
          ctx.say(s + " " + src + "->" + t + " " + e.utterance_id());
        }
      }
    }
  }
  ctx.save_text(layout::report("systems.csv"), table);
}

void stage_evaluate(StageContext& ctx, const std::vector<std::string>& speakers,
                    const std::vector<std::string>& targets) {
  const CorpusManifest c = ctx.corpus();
  const VaeModel vae = ctx.vae();

  // Natural test tracks; test sentence k of every speaker is the same text.
  std::map<std::string, std::vector<FeatureTrack>> natural;
  std::map<std::string, std::vector<std::string>> ids;
  for (const std::string& s : speakers)
    for (const ManifestEntry& e : c.select(s, "test")) {
      natural[s].push_back(ctx.features(e));
      ids[s].push_back(e.utterance_id());
    }

  std::vector<ParallelUtterance> items;
  for (const std::string& src : speakers)
    for (const std::string& tgt : speakers) {
      if (src == tgt) continue;
      const std::size_t n = std::min(natural[src].size(), natural[tgt].size());
      for (std::size_t k = 0; k < n; ++k)
        items.push_back({src, tgt, ids[src][k], &natural[src][k], &natural[tgt][k]});
    }
  require(!items.empty(), ErrorCode::kPrecondition, "evaluate: no parallel test utterances");
  const DistanceReport dist = distance_experiment(vae, items);
  ctx.save_text(layout::report("distances.csv"), dist.to_csv());

  // GV sets.
  std::vector<FeatureTrack> recon, conv;
  for (const std::string& s : speakers)
    for (std::size_t k = 0; k < natural[s].size(); ++k) {
      recon.push_back(vae.forward(natural[s][k], vae.code_for(s), ForwardMode::kReconstruct));
      ctx.save_track("reports/tracks/reconstructed/" + s + "/" + ids[s][k] + ".vcft", recon.back());
    }
  for (const ParallelUtterance& u : items) {
    conv.push_back(vae.forward(*u.source, vae.code_for(u.target_speaker), ForwardMode::kConvert));
    ctx.save_track("reports/tracks/converted/" + u.source_speaker + "_to_" + u.target_speaker +
                       "/" + u.utterance + ".vcft",
                   conv.back());
  }
  std::vector<GvInput> sets(3);
  sets[0].first = "natural";
  for (const std::string& s : speakers)
    for (const FeatureTrack& t : natural[s]) sets[0].second.push_back(&t);
  sets[1].first = "reconstructed";
  for (const FeatureTrack& t : recon) sets[1].second.push_back(&t);
  sets[2].first = "converted";
  for (const FeatureTrack& t : conv) sets[2].second.push_back(&t);

  // Per-system vocoder inputs and re-analysed outputs, where converted.
  std::deque<FeatureTrack> sys_tracks;  // stable addresses
  for (const std::string& s : ctx.cfg().systems()) {
    const fs::path dir = ctx.path("converted/" + s);
    if (!fs::is_directory(dir)) continue;
    std::vector<std::string> finals, wavs;
    for (const auto& f : fs::recursive_directory_iterator(dir)) {
      const std::string p = f.path().string();
      if (p.ends_with(".final.vcft")) finals.push_back(p);
      if (p.ends_with(".wav")) wavs.push_back(p);
    }
    std::sort(finals.begin(), finals.end());
    std::sort(wavs.begin(), wavs.end());
    if (finals.empty()) continue;
    GvInput in{s + ":vocoder-input", {}}, outp{s + ":output", {}};
    for (const std::string& p : finals) {
      sys_tracks.push_back(read_feature_track(p));
      in.second.push_back(&sys_tracks.back());
    }
    for (const std::string& p : wavs) {
      sys_tracks.push_back(analyze(read_wav(p)).track);
      outp.second.push_back(&sys_tracks.back());
    }
    sets.push_back(std::move(in));
    sets.push_back(std::move(outp));
  }
  const GvReport gv = gv_report(sets);
  ctx.save_text(layout::report("gv.csv"), gv.to_csv());

  // Held-out vocoder likelihood on (reconstructed, waveform) and
  // (natural, waveform) pairs of each target's test sentences.
  std::string nll_csv = "target,model,features,utterance,nll\n";
  json nll_summary = json::object();
  const bool have_si = fs::is_regular_file(ctx.path(layout::wavenet_si()));
  for (const std::string& t : targets) {
    std::vector<std::pair<std::string, std::unique_ptr<WaveNetModel>>> models;
    if (have_si)
      models.emplace_back("SI", std::make_unique<WaveNetModel>(ctx.wavenet(layout::wavenet_si(), "SI")));
    for (AdaptingKind kind : kKinds)
      if (fs::is_regular_file(ctx.path(layout::wavenet_finetuned(t, kind))))
        models.emplace_back(model_name(kind), std::make_unique<WaveNetModel>(ctx.wavenet(
                                                  layout::wavenet_finetuned(t, kind), model_name(kind))));
    if (models.empty()) continue;
    std::vector<Waveform> waves;
    std::vector<FeatureTrack> rec;
    const auto tests = c.select(t, "test");
    for (std::size_t k = 0; k < tests.size(); ++k) {
      waves.push_back(ctx.wave(c, tests[k]));
      rec.push_back(vae.forward(natural[t][k], vae.code_for(t), ForwardMode::kReconstruct));
    }
    for (const auto& [name, model] : models)
      for (const char* feat : {"reconstructed", "natural"}) {
        double sum = 0.0;
        for (std::size_t k = 0; k < waves.size(); ++k) {
          const FeatureTrack& tr = std::string(feat) == "natural" ? natural[t][k] : rec[k];
          const double v =
              teacher_forced_nll(*model, waves[k], upsample_conditioning(tr, waves[k].sample_rate));
          sum += v;
          nll_csv += t + "," + name + "," + feat + "," + ids[t][k] + "," + csv_number(v) + "\n";
        }
        const double mean = sum / static_cast<double>(waves.size());
        nll_summary[t][name][feat] = mean;
        ctx.metric("heldout_nll", mean, {{"target", t}, {"model", name}, {"features", feat}});
      }
    ctx.say("held-out NLL for " + t);
  }
  ctx.save_text(layout::report("nll.csv"), nll_csv);

  json summary;
  summary["config_hash"] = ctx.cfg().hash();
  for (int d = 1; d <= 3; ++d) summary["dist_median"]["dist" + std::to_string(d)] = dist.median(d);
  for (const auto& [k, v] : gv.entries) summary["gv_mean"][k] = gv.mean_over_dims(k);
  summary["nll_mean"] = nll_summary;
  json checks;
  checks["dist2_positive"] = dist.median(2) > 0.0;
  checks["dist3_below_dist1"] = dist.median(3) < dist.median(1);
  checks["gv_natural_above_reconstructed"] =
      gv.mean_over_dims("natural") > gv.mean_over_dims("reconstructed");
  checks["gv_natural_above_converted"] = gv.mean_over_dims("natural") > gv.mean_over_dims("converted");
  for (const auto& [t, m] : nll_summary.items())
    if (m.contains("finetuned-natural") && m.contains("finetuned-reconstructed"))
      checks["mismatch_reduced"][t] = m["finetuned-reconstructed"]["reconstructed"].get<double>() <
                                      m["finetuned-natural"]["reconstructed"].get<double>();
  summary["checks"] = checks;
  ctx.save_text(layout::report("summary.json"), summary.dump(2) + "\n");
  char buf[200];
  std::snprintf(buf, sizeof(buf), "median MCD dist1 %.3f dist2 %.3f dist3 %.3f dB", dist.median(1),
                dist.median(2), dist.median(3));
  ctx.say(buf);
}

}  // namespace

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  config_.require_valid();
  hash_ = config_.hash();
  root_ = config_.out_dir();
  progress_ = [](std::string_view s) { std::cerr << s << std::endl; };
}

std::string Experiment::path(const std::string& relative) const {
  return (fs::path(root_) / relative).string();
}

std::vector<std::string> Experiment::speakers() const {
  if (config_.has("corpus.manifest")) return CorpusManifest::load(config_.get("corpus.manifest")).speakers;
  std::vector<std::string> out;
  for (const ToyVoice& v : toy_voices(config_.toy_corpus())) out.push_back(v.id);
  return out;
}

std::vector<std::string> Experiment::targets() const {
  const auto t = config_.targets();
  return t.empty() ? speakers() : t;
}

void Experiment::run(const std::string& stage) {
  if (stage == "full-run") {
    for (const std::string& s : stage_names()) run(s);
    return;
  }
  bool known = false;
  for (const std::string& s : stage_names()) known = known || s == stage;
  require(known, ErrorCode::kInvalidArgument, "unknown stage '" + stage + "'");
  try {
    fs::create_directories(root_);
    run_stage(stage);
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + stage + " failed: " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIo, "stage " + stage + " failed: " + e.what());
  }
}

void Experiment::run_stage(const std::string& stage) {
  StageContext ctx(*this, stage);
  if (stage == "gen-corpus") stage_gen_corpus(ctx);
  else if (stage == "analyze-corpus") stage_analyze(ctx);
  else if (stage == "train-vae") stage_train_vae(ctx);
  else if (stage == "train-wavenet-si") stage_train_si(ctx);
  else if (stage == "build-adapt-set") stage_build_adapt(ctx, targets());
  else if (stage == "finetune") stage_finetune(ctx, targets());
  else if (stage == "convert") stage_convert(ctx, speakers(), targets());
  else stage_evaluate(ctx, speakers(), targets());
  ctx.finish();
}

}  // namespace vcwn
