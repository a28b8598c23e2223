// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Exit codes: 0 success, 1 usage / input / geometry
// error, 2 training divergence.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "templar/templar.hpp"

namespace {

using namespace templar;

constexpr int kExitError = 1;
constexpr int kExitDivergence = 2;

void print_kv(const char* key, double v) { std::printf("%s=%.10g\n", key, v); }
void print_kv(const char* key, std::size_t v) { std::printf("%s=%zu\n", key, v); }

void print_tail(const std::vector<double>& sigma, std::size_t from, std::size_t count = 8) {
  std::printf("spectrum_tail=");
  for (std::size_t j = from; j < sigma.size() && j < from + count; ++j) std::printf("%s%.6g", j == from ? "" : ",", sigma[j]);
  std::printf("\n");
}

PretrainConfig config_or_default(const std::string& path) {
  PretrainConfig c = path.empty() ? PretrainConfig{} : load_run_config(path);
  c.train.seed = seed_from_env(c.train.seed);
  return c;
}

std::filesystem::path history_path(const std::string& out, const std::string& explicit_path) {
  return explicit_path.empty() ? std::filesystem::path(out + ".history") : std::filesystem::path(explicit_path);
}

int run_pretrain(const std::string& config, const std::string& out, const std::string& history) {
  const PretrainConfig c = config_or_default(config);
  const PretrainResult r = pretrain_constrained(c);
  save_bank(out, r.bank, r.scalers);
  save_history(history_path(out, history), r.history);
  print_kv("steps", r.history.size());
  if (!r.history.empty()) {
    print_kv("initial_loss", r.history.front().loss);
    print_kv("final_loss", r.history.back().loss);
  }
  print_kv("bank_checksum", static_cast<std::size_t>(r.bank.checksum()));
  return 0;
}

int run_fit(const std::string& weights, std::size_t n, std::size_t a, const std::string& out) {
  const Matrix w = load_weights(weights);
  const FitResult f = fit(w, grid_for_span(n, a));
  if (!out.empty()) save_bank(out, f.bank, f.scalers);
  print_kv("templates", n);
  print_kv("residual", f.residual);
  print_kv("relative_residual", f.residual / std::max(frobenius_norm(w), 1e-300));
  print_tail(f.sigma, n);
  return 0;
}

struct TargetArgs {
  std::string bank, config, out;
  std::size_t depth = 0, heads = 0;
  std::uint64_t seed = 0;
  std::string init = "inherit";
};

ScalerInit parse_init(const std::string& s) {
  if (s == "inherit") return ScalerInit::kInherit;
  if (s == "random") return ScalerInit::kRandom;
  throw ContractError("--init must be inherit or random, got " + s);
}

int run_init_target(const TargetArgs& a) {
  const PretrainConfig src = config_or_default(a.config);
  const BankFile file = load_bank(a.bank);
  const ModelDims dims = target_dims(src.dims, a.depth, a.heads);
  const nn::TinyTransformerConfig model = model_config(dims, src.data);
  const auto [r1, r2] = target_grid(file.bank.config, src.dims.embed(), dims.embed());
  const TemplateBank bank = adapt_template(file.bank, r1, r2);
  Rng rng(derive_seed(seed_from_env(a.seed), stream::kTargetInit));
  const ScalerSet scalers = initial_scalers(file.scalers, bank.config, model, parse_init(a.init), rng);
  const TargetModel t = init_target(bank, scalers, model, rng);
  if (!a.out.empty()) save_weights(a.out, pack_transformer(t.layers, dims));
  print_kv("layers", dims.layers);
  print_kv("embed", dims.embed());
  print_kv("row_length", static_cast<std::size_t>(dims.row_length()));
  print_kv("templated_parameters", static_cast<std::size_t>(dims.layers * dims.row_length()));
  print_kv("template_parameters", bank.parameter_count());
  print_kv("scaler_parameters", scalers.parameter_count());
  print_kv("untemplated_parameters", t.untemplated.parameter_count());
  return 0;
}

int run_adapt(const TargetArgs& a, std::size_t steps) {
  const PretrainConfig src = config_or_default(a.config);
  const BankFile file = load_bank(a.bank);
  AdaptConfig cfg;
  cfg.target = target_dims(src.dims, a.depth, a.heads);
  cfg.init = parse_init(a.init);
  cfg.data = src.data;
  cfg.train.steps = steps;
  cfg.train.seed = seed_from_env(a.seed);
  cfg.train.adam = src.train.adam;
  const std::uint64_t before = file.bank.checksum();
  const AdaptResult r = adapt_scalers(file.bank, file.scalers, src.dims, cfg);
  if (file.bank.checksum() != before) throw NumericalError("adapt: template bank changed during adaptation");
  if (!a.out.empty()) save_bank(a.out, r.bank, r.scalers);
  print_kv("init_eval_loss", r.init_eval_loss);
  print_kv("final_eval_loss", r.final_eval_loss);
  print_kv("trainable_parameters", r.trainable_parameters);
  print_kv("templated_parameters", r.templated_parameters);
  const Matrix adapted = reconstruct(r.bank, r.scalers);
  const Matrix source = reconstruct(file.bank, file.scalers);
  if (adapted.same_shape(source)) {
    print_kv("reconstruction_error_vs_pretrain", frobenius_norm(adapted - source));
  } else {
    std::printf("reconstruction_error_vs_pretrain=n/a\n");
  }
  return 0;
}

struct AnalyzeArgs {
  std::string weights;
  std::size_t a = 0;
  double epsilon = 0.5, k = 1.0;
  double samples = 100.0, delta = 0.05, risk = 0.0;
};

int run_analyze(const AnalyzeArgs& a) {
  const Matrix w = load_weights(a.weights);
  const Spectrum spec = spectrum(w, a.a);
  const std::size_t n = min_templates(spec, a.epsilon, a.k);
  std::printf("spectrum=");
  for (std::size_t j = 0; j < spec.sigma.size(); ++j) std::printf("%s%.6g", j ? "," : "", spec.sigma[j]);
  std::printf("\n");
  print_kv("rank", spec.rank());
  print_kv("min_templates", n);
  print_kv("tail_energy", spec.tail_energy(n));
  const FitResult f = fit(w, grid_for_span(n, a.a));
  double scaler_cap = 0.0;
  for (const Matrix& s : f.scalers.scalers) scaler_cap = std::max(scaler_cap, frobenius_norm(s));
  BoundInputs in;
  in.scaler_cap = std::max(scaler_cap, 1e-300);
  in.template_norm = std::max(frobenius_norm(f.bank.templates), 1e-300);
  in.weight_cap = std::max(frobenius_norm(w), 1e-300);
  in.samples = a.samples;
  in.delta = a.delta;
  std::printf("# gap bound up to constants (hidden constant = 1), L_loss = R = 1\n");
  print_kv("scaler_complexity", scaler_complexity(in));
  print_kv("full_complexity", full_complexity(in));
  print_kv("gap_bound", generalization_gap_bound(in, a.risk));
  return 0;
}

int run_baseline(const std::string& config, const std::string& out, const std::string& history) {
  const PretrainConfig c = config_or_default(config);
  const UnconstrainedResult r = train_unconstrained({c.dims, c.data, c.train});
  if (!out.empty()) {
    save_weights(out, r.weights);
    save_history(history_path(out, history), r.history);
  }
  print_kv("steps", r.history.size());
  if (!r.history.empty()) {
    print_kv("initial_loss", r.history.front().loss);
    print_kv("final_loss", r.history.back().loss);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker weight templates: pretrain, fit, adapt and analyze"};
  app.require_subcommand(1);

  std::string config, out, history, weights;
  std::size_t n = 0, a = 0, steps = 0;

  auto* pretrain = app.add_subcommand("pretrain", "constraint-based pretraining of templates and scalers");
  pretrain->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--out", out, "bank file to write")->required();
  pretrain->add_option("--history", history, "history file (default <out>.history)");

  auto* fitc = app.add_subcommand("fit", "best rank-N Kronecker fit of a weight dump");
  fitc->add_option("--weights", weights, "L x P weight dump")->required()->check(CLI::ExistingFile);
  fitc->add_option("--n", n, "number of templates")->required()->check(CLI::PositiveNumber);
  fitc->add_option("--a", a, "template span r1*r2")->required()->check(CLI::PositiveNumber);
  fitc->add_option("--out", out, "bank file to write");

  TargetArgs target;
  auto add_target = [&](CLI::App* cmd) {
    cmd->add_option("--bank", target.bank, "pretrained bank file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--depth", target.depth, "target layers")->required()->check(CLI::PositiveNumber);
    cmd->add_option("--heads", target.heads, "target heads")->required()->check(CLI::PositiveNumber);
    cmd->add_option("--config", target.config, "source run configuration (default: desk)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", target.seed, "seed");
    cmd->add_option("--init", target.init, "scaler initialization: inherit | random");
  };
  auto* init = app.add_subcommand("init-target", "materialize a target model from a bank");
  add_target(init);
  init->add_option("--out", target.out, "weight dump to write")->required();

  auto* adapt = app.add_subcommand("adapt", "scaler-only adaptation to a new depth / width");
  add_target(adapt);
  adapt->add_option("--steps", steps, "adaptation steps")->required();
  adapt->add_option("--out", target.out, "bank file for the adapted templates and scalers");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "spectrum, minimal template count and gap-bound diagnostics");
  analyze->add_option("--weights", an.weights, "L x P weight dump")->required()->check(CLI::ExistingFile);
  analyze->add_option("--a", an.a, "template span r1*r2")->required()->check(CLI::PositiveNumber);
  analyze->add_option("--epsilon", an.epsilon, "output error target")->check(CLI::PositiveNumber);
  analyze->add_option("--k", an.k, "Lipschitz constant")->check(CLI::PositiveNumber);
  analyze->add_option("--m", an.samples, "sample count for the bound")->check(CLI::PositiveNumber);
  analyze->add_option("--delta", an.delta, "confidence level")->check(CLI::Range(1e-300, 1.0));
  analyze->add_option("--risk", an.risk, "empirical risk");

  auto* baseline = app.add_subcommand("baseline", "unconstrained control run");
  baseline->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  baseline->add_option("--out", out, "weight dump to write");
  baseline->add_option("--history", history, "history file (default <out>.history)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*pretrain) return run_pretrain(config, out, history);
    if (*fitc) return run_fit(weights, n, a, out);
    if (*init) return run_init_target(target);
    if (*adapt) return run_adapt(target, steps);
    if (*analyze) return run_analyze(an);
    if (*baseline) return run_baseline(config, out, history);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
