#include <CLI11.hpp>
#include <cstdio>

#include "epicodec/common.hpp"
#include "epicodec/pipeline.hpp"

using namespace epicodec;

int main(int argc, char** argv) {
  CLI::App app{"EPI side-information codec for multi-view video"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::string curve_a, curve_b;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config JSON");
    if (needs_config) opt->required();
    cmd->add_option("--set", overrides, "override a config field, e.g. --set loss.beta=1e-5");
    cmd->add_option("--out", out_dir, "output directory");
  };

  for (const char* name : {"synth-data", "build-epi", "train", "encode", "decode", "evaluate"})
    add_common(app.add_subcommand(name), true);
  auto* bd = app.add_subcommand("bdstats", "compare two RD CSV files");
  add_common(bd, false);
  bd->add_option("--curve-a", curve_a, "baseline RD csv")->required();
  bd->add_option("--curve-b", curve_b, "comparison RD csv")->required();

  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();

  try {
    if (sub == "bdstats") {
      run_bdstats(curve_a, curve_b, out_dir);
      return 0;
    }
    ExperimentConfig cfg = load_config(config_path, overrides);
    if (sub == "synth-data") run_synth_data(cfg, out_dir);
    else if (sub == "build-epi") run_build_epi(cfg, out_dir);
    else if (sub == "train") run_train(cfg, out_dir);
    else if (sub == "encode") run_encode(cfg, out_dir);
    else if (sub == "decode") run_decode(cfg, out_dir);
    else if (sub == "evaluate") run_evaluate(cfg, out_dir);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const BitstreamError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const HashMismatchError& e) {
    std::fprintf(stderr, "provenance mismatch: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
