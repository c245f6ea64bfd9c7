// scaled: prepare / train / sweep / report / verify.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scaled/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--out", f.out, "output directory (overrides output_dir)");
  cmd->add_option("--seed", f.seed, "random seed (overrides seed)");
  cmd->add_option("--jobs", f.jobs, "worker count (overrides jobs)")->check(CLI::PositiveNumber);
  cmd->add_flag("--print-config", f.print_config, "print the resolved configuration and exit");
}

scaled::RunConfig resolve(const CommonFlags& f) {
  scaled::RunConfig cfg = f.config.empty() ? scaled::RunConfig{} : scaled::load_run_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (f.jobs) cfg.jobs = *f.jobs;
  scaled::apply_environment(cfg);
  scaled::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Codec-in-the-loop training and RD evaluation of learned downsamplers"};
  app.require_subcommand(1);
  CommonFlags flags;

  using Command = int (*)(const scaled::RunConfig&, std::ostream&);
  const std::pair<const char*, Command> commands[] = {
      {"prepare", scaled::cmd_prepare},
      {"train", scaled::cmd_train},
      {"sweep", scaled::cmd_sweep},
      {"report", scaled::cmd_report},
      {"verify", [](const scaled::RunConfig&, std::ostream& log) { return scaled::cmd_verify(log); }},
  };
  const char* help[] = {"extract training patches and write the dataset manifest",
                        "train one model per grid cell (resumable)", "run the RD sweep and write rd.csv",
                        "convex hulls, BD-BR tables and curve files", "run the built-in property suites"};
  for (std::size_t i = 0; i < std::size(commands); ++i) add_common(app.add_subcommand(commands[i].first, help[i]), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? scaled::kExitOk : scaled::kExitUsage;
  }

  return scaled::run_command(
      [&] {
        const auto cfg = resolve(flags);
        if (flags.print_config) {
          std::cout << scaled::to_json(cfg).dump(2) << "\n";
          return int{scaled::kExitOk};
        }
        for (const auto& [name, fn] : commands)
          if (app.got_subcommand(name)) return fn(cfg, std::cout);
        return int{scaled::kExitUsage};
      },
      std::cerr);
}
