#include <CLI11.hpp>
#include <string>

#include "gpvae/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process amortized inference for VAEs"};
  app.require_subcommand(1);

  std::string config_path;
  const char* names[] = {"train", "eval", "gap", "uncertainty", "bench"};
  const char* descs[] = {
      "train a model and write checkpoint + run log",
      "IWAE test log-likelihood table for a checkpoint",
      "amortization-gap report against long-run SVI",
      "uncertainty gauge vs. true-posterior non-Gaussianity (d=2 models)",
      "per-batch inference timing of vae/gpvae/sa paths"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->add_option("-c,--config", config_path, "JSON config file")
        ->required();
  }

  CLI11_PARSE(app, argc, argv);
  return gpvae::cli::run_command(app.get_subcommands().front()->get_name(),
                                 config_path);
}
