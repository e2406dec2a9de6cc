// Command-line driver; talks to the library only through vcwn.h.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vcwn.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::string seed;
  std::string out;
  std::vector<std::string> systems;
  std::vector<std::string> sets;
};

std::string key_table() {
  std::string s = "Configuration keys (file: key = value; environment: ";
  s += vcwn_config_env_prefix();
  s += "<KEY> with '.' as '_', e.g. VCWN_VAE_STEPS):\n";
  for (std::size_t i = 0; i < vcwn_config_key_count(); ++i) {
    char line[256];
    const char* def = vcwn_config_key_default(i);
    std::snprintf(line, sizeof(line), "  %-22s %-24s %s\n", vcwn_config_key_name(i),
                  *def ? def : "(unset)", vcwn_config_key_help(i));
    s += line;
  }
  s += "Precedence: defaults < --config file < environment < flags.\n";
  s += "Exit codes: 0 ok, 1 configuration/model/stage error, 2 usage.\n";
  return s;
}

int fail_with(const std::string& what) {
  std::cerr << "error: " << what << "\n";
  return kExitError;
}

int run(const std::string& stage, const Options& opt) {
  vcwn_experiment* exp = nullptr;
  if (vcwn_experiment_create(&exp) != VCWN_OK) return fail_with(vcwn_last_error());
  struct Guard {
    vcwn_experiment* e;
    ~Guard() { vcwn_experiment_free(e); }
  } guard{exp};

  if (!opt.config.empty() && vcwn_experiment_load_config(exp, opt.config.c_str()) != VCWN_OK)
    return fail_with(vcwn_last_error());
  vcwn_experiment_apply_environment(exp);
  for (const std::string& kv : opt.sets) {
    const auto eq = kv.find('=');
    vcwn_experiment_set(exp, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
  }
  if (!opt.seed.empty()) vcwn_experiment_set(exp, "seed", opt.seed.c_str());
  if (!opt.out.empty()) vcwn_experiment_set(exp, "out", opt.out.c_str());
  if (!opt.systems.empty()) {
    std::string joined;
    for (const std::string& s : opt.systems) joined += (joined.empty() ? "" : ",") + s;
    vcwn_experiment_set(exp, "systems", joined.c_str());
  }
  if (vcwn_experiment_validate(exp) != VCWN_OK) return fail_with(vcwn_last_error());

  vcwn_experiment_set_progress(
      exp, [](const char* line, void*) { std::fprintf(stderr, "%s\n", line); }, nullptr);
  if (vcwn_experiment_run(exp, stage.c_str()) != VCWN_OK) return fail_with(vcwn_last_error());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voice conversion experiment driver (VAE conversion + WaveNet vocoder)", "vcwn"};
  app.require_subcommand(1, 1);
  app.footer(key_table());

  Options opt;
  std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "generate the seeded toy corpus"},
      {"analyze-corpus", "extract feature tracks and speaker profiles"},
      {"train-vae", "train the conversion VAE"},
      {"train-wavenet-si", "train the speaker-independent WaveNet vocoder"},
      {"build-adapt-set", "build natural / reconstructed / reconstructed+GV adaptation sets"},
      {"finetune", "fine-tune the vocoder per target and adaptation kind"},
      {"convert", "run the configured systems on the test sentences"},
      {"evaluate", "write distance, GV and likelihood reports"},
      {"full-run", "run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "random seed (overrides the config)");
    sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--system", opt.systems, "system id(s): B1 B2 B3 B4 P1 P2 UB")->delimiter(',');
    sub->add_option("--set", opt.sets, "override any configuration key: KEY=VALUE (repeatable)")
        ->check([](const std::string& v) {
          const auto eq = v.find('=');
          return eq == std::string::npos || eq == 0 ? std::string("expected KEY=VALUE") : std::string();
        });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  return run(app.get_subcommands().front()->get_name(), opt);
}
