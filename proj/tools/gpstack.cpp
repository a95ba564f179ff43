// gpstack: synth | fit | predict | cv | decompose | eval
//
// Every subcommand takes --config FILE (JSON), repeatable --set key=value overrides, --seed N and --out DIR.
// Failures print one line "error: <category>: <message>" and exit with 2 (config), 3 (data/schema),
// 4 (numerical) or 1 (anything else).

#include "gpstack/cli.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace gpstack;
  CLI::App app{"Stacked Gaussian-process prevalence mapping"};
  app.require_subcommand(1);
  Options opt;
  const std::map<std::string, std::function<void(const cli::RunConfig&)>> commands{
      {"synth", cli::cmd_synth}, {"fit", cli::cmd_fit},           {"predict", cli::cmd_predict},
      {"cv", cli::cmd_cv},       {"decompose", cli::cmd_decompose}, {"eval", cli::cmd_eval}};
  const std::map<std::string, std::string> help{
      {"synth", "generate a synthetic scenario (surveys, covariates, truth)"},
      {"fit", "fit a stack and write model.json"},
      {"predict", "predict mean and sd on a grid from a saved model"},
      {"cv", "repeated cross-validation of level-0 learners and stacks"},
      {"decompose", "ambiguity decomposition of the CWM ensemble"},
      {"eval", "combine metrics files into a ranked summary"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("-c,--config", opt.config, "JSON run configuration");
    sub->add_option("--set", opt.overrides, "override a config value, e.g. --set stacking.folds=10");
    sub->add_option("--seed", opt.seed, "master seed (required for synth and cv)");
    sub->add_option("-o,--out", opt.out, "output directory (overrides config 'output')");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  }

  try {
    nlohmann::json raw = opt.config.empty() ? nlohmann::json::object() : cli::load_config_file(opt.config);
    for (const auto& s : opt.overrides) cli::apply_override(raw, s);
    if (!opt.out.empty()) raw["output"] = opt.out;
    const auto cfg = cli::resolve_config(raw, opt.seed);
    for (const auto* sub : app.get_subcommands()) commands.at(sub->get_name())(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << error_category(e.kind()) << ": " << e.what() << '\n';
    return cli::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
