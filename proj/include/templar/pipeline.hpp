// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Training drivers: constrained pretraining of templates and scalers,
// scaler-only adaptation to a new depth/width, target materialization, and a
// directly parameterized control run.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "templar/analysis.hpp"
#include "templar/error.hpp"
#include "templar/factorization.hpp"
#include "templar/linalg.hpp"
#include "templar/mask.hpp"
#include "templar/nn.hpp"
#include "templar/packing.hpp"
#include "templar/scaling.hpp"

namespace templar {

inline constexpr double kDivergenceThreshold = 1e4;
inline constexpr double kInitStddev = 0.02;

/// Independent stream seeds derived from one run seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace stream {
inline constexpr std::uint64_t kData = 0, kInit = 1, kMask = 2, kEval = 3, kAdaptData = 4, kTargetInit = 5;
}

struct DataConfig {
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  std::size_t n = 16000;
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
};

struct HistoryRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t mask_r1 = 0;
  std::size_t mask_r2 = 0;

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

inline void guard_divergence(std::size_t step, double loss) {
  if (!std::isfinite(loss) || loss > kDivergenceThreshold) throw DivergenceError(static_cast<int>(step), loss);
}

inline nn::TinyTransformerConfig model_config(const ModelDims& dims, const DataConfig& data, std::size_t classes = 2) {
  return {dims, data.vocab, data.seq_len, classes, nn::Activation::kGelu};
}

inline nn::Batch training_data(const DataConfig& data, std::uint64_t seed) {
  return nn::synth_dataset(derive_seed(seed, stream::kData), data.n, data.vocab, data.seq_len);
}

inline nn::Batch evaluation_data(const DataConfig& data, std::uint64_t seed, std::size_t n = 512) {
  return nn::synth_dataset(derive_seed(seed, stream::kEval), n, data.vocab, data.seq_len);
}

// ---------------------------------------------------------------------------
// Constrained pretraining

struct PretrainConfig {
  ModelDims dims{4, 2, 4, 32};
  FactorizationConfig factorization{8, 8, 8};
  WidthSchedule schedule = default_schedule(8, 8);
  bool masking = true;
  DataConfig data;
  TrainConfig train;

  nn::TinyTransformerConfig model() const { return model_config(dims, data); }
};

struct PretrainResult {
  PretrainConfig config;
  TemplateBank bank;
  ScalerSet scalers;
  nn::UntemplatedParams untemplated;
  std::vector<HistoryRecord> history;

  Matrix weights() const { return reconstruct(bank, scalers); }
};

/// Templates and scalers ~ N(0, 0.02); untemplated parameters per init_untemplated.
inline PretrainResult init_pretrain(const PretrainConfig& cfg) {
  cfg.dims.validate();
  cfg.factorization.validate();
  const nn::TinyTransformerConfig model = cfg.model();
  Rng rng(derive_seed(cfg.train.seed, stream::kInit));
  PretrainResult r{cfg, TemplateBank::zeros(cfg.factorization),
                   ScalerSet::for_geometry(cfg.factorization, cfg.dims.layers, cfg.dims.row_length()), {}, {}};
  r.bank.templates = random_normal(rng, cfg.factorization.n_templates, cfg.factorization.span(), kInitStddev);
  for (Matrix& s : r.scalers.scalers) s = random_normal(rng, s.rows(), s.cols(), kInitStddev);
  r.untemplated = nn::init_untemplated(model, rng);
  return r;
}

/// One indirect update: rebuild W from (T, S) under `mask`, backpropagate the
/// batch loss to dL/dW, pull it back to (dT, dS) and step Adam on templates,
/// scalers and untemplated parameters. W itself is never stored or updated.
inline double constrained_step(PretrainResult& state, nn::AdamState& adam, const nn::Batch& batch,
                               const StructuredMask& mask) {
  const nn::TinyTransformerConfig model = state.config.model();
  const Matrix w = reconstruct(state.bank, state.scalers, mask);
  const std::vector<LayerWeights> layers = unpack_transformer(w, state.config.dims);
  nn::ModelGradients mg = nn::loss_and_gradients(model, layers, state.untemplated, batch);
  guard_divergence(adam.step, mg.loss);
  const Matrix gw = pack_transformer(mg.layers, state.config.dims);
  KronGradients kg = kron_gradients(gw, state.bank, state.scalers, mask);

  std::vector<Matrix*> params{&state.bank.templates};
  std::vector<const Matrix*> grads{&kg.templates};
  for (std::size_t i = 0; i < state.scalers.size(); ++i) {
    params.push_back(&state.scalers.scalers[i]);
    grads.push_back(&kg.scalers[i]);
  }
  auto ut = state.untemplated.tensors();
  for (std::size_t k = 0; k < ut.size(); ++k) {
    params.push_back(ut[k]);
    grads.push_back(&mg.untemplated[k]);
  }
  nn::adam_step(adam, params, grads);
  return mg.loss;
}

using StepCallback = std::function<void(const HistoryRecord&)>;

inline PretrainResult pretrain_constrained(const PretrainConfig& cfg, const StepCallback& on_step = nullptr) {
  const nn::TinyTransformerConfig model = cfg.model();
  model.validate();
  if (cfg.dims.row_length() % cfg.factorization.span() != 0) {
    throw ContractError("pretrain_constrained: P=" + std::to_string(cfg.dims.row_length()) +
                        " is not divisible by r1*r2=" + std::to_string(cfg.factorization.span()));
  }
  if (cfg.masking && (cfg.schedule.r1 != cfg.factorization.r1 || cfg.schedule.r2 != cfg.factorization.r2)) {
    throw ContractError("pretrain_constrained: width schedule grid does not match template grid");
  }
  if (cfg.train.batch == 0) throw ContractError("pretrain_constrained: batch must be positive");
  PretrainResult state = init_pretrain(cfg);
  if (cfg.train.steps == 0) return state;

  const nn::Batch data = training_data(cfg.data, cfg.train.seed);
  Rng mask_rng(derive_seed(cfg.train.seed, stream::kMask));
  nn::AdamState adam{cfg.train.adam, 0, {}, {}};
  const StructuredMask full = full_mask(cfg.factorization.r1, cfg.factorization.r2);
  state.history.reserve(cfg.train.steps);
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    const StructuredMask mask = cfg.masking ? sample_mask(cfg.schedule, mask_rng) : full;
    const nn::Batch batch = nn::slice_batch(data, step * cfg.train.batch, cfg.train.batch);
    const double loss = constrained_step(state, adam, batch, mask);
    state.history.push_back({step, loss, mask.r1_eff, mask.r2_eff});
    if (on_step) on_step(state.history.back());
  }
  return state;
}

// ---------------------------------------------------------------------------
// Target initialization and scaler-only adaptation

enum class ScalerInit { kInherit, kRandom };

/// Linearly interpolates scaler rows (layers) onto `target_layers` evenly
/// spaced depth positions. Matching depth reproduces the input exactly.
inline ScalerSet interpolate_scalers(const ScalerSet& source, std::size_t target_layers) {
  if (target_layers == 0) throw ContractError("interpolate_scalers: target depth must be positive");
  if (source.layers == 0) throw ContractError("interpolate_scalers: source has no layers");
  ScalerSet out = ScalerSet::zeros(source.size(), target_layers, source.b_cols);
  for (std::size_t j = 0; j < target_layers; ++j) {
    const double pos = target_layers == 1
                           ? 0.5 * static_cast<double>(source.layers - 1)
                           : static_cast<double>(j) * static_cast<double>(source.layers - 1) /
                                 static_cast<double>(target_layers - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= source.layers) lo = source.layers - 1;
    const std::size_t hi = std::min(lo + 1, source.layers - 1);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t i = 0; i < source.size(); ++i)
      for (std::size_t b = 0; b < source.b_cols; ++b) {
        const double a = source.scalers[i](lo, b);
        out.scalers[i](j, b) = frac == 0.0 ? a : (1.0 - frac) * a + frac * source.scalers[i](hi, b);
      }
  }
  return out;
}

/// Template grid for a model of embed width `target_embed`, keeping r / D fixed.
inline std::pair<std::size_t, std::size_t> target_grid(const FactorizationConfig& source, std::size_t source_embed,
                                                       std::size_t target_embed) {
  auto scale = [&](std::size_t r) {
    if ((r * target_embed) % source_embed != 0) {
      throw ContractError("target_grid: template width " + std::to_string(r) + " does not scale from D=" +
                          std::to_string(source_embed) + " to D=" + std::to_string(target_embed));
    }
    return r * target_embed / source_embed;
  };
  return {scale(source.r1), scale(source.r2)};
}

/// Target geometry with the given depth and head count. head_dim is kept; an
/// explicit FFN width scales with the embedding width.
inline ModelDims target_dims(const ModelDims& source, std::size_t depth, std::size_t heads) {
  ModelDims t{depth, heads, source.head_dim, 0};
  t.validate();
  if (source.ffn != 0 && source.ffn != 4 * source.embed()) {
    if ((source.ffn * t.embed()) % source.embed() != 0) {
      throw ContractError("target_dims: FFN width " + std::to_string(source.ffn) + " does not scale to D=" +
                          std::to_string(t.embed()));
    }
    t.ffn = source.ffn * t.embed() / source.embed();
  }
  return t;
}

struct TargetModel {
  nn::TinyTransformerConfig config;
  std::vector<LayerWeights> layers;
  nn::UntemplatedParams untemplated;
};

/// Theta_t = unpack(T (x) S_t) plus freshly initialized untemplated parameters.
inline TargetModel init_target(const TemplateBank& bank, const ScalerSet& scalers,
                               const nn::TinyTransformerConfig& target, Rng& rng) {
  target.validate();
  const std::uint64_t p = target.dims.row_length();
  if (p % bank.config.span() != 0) {
    throw ContractError("init_target: P_t=" + std::to_string(p) + " is not divisible by r1*r2=" +
                        std::to_string(bank.config.span()));
  }
  if (scalers.layers != target.dims.layers || scalers.b_cols != p / bank.config.span()) {
    throw ContractError("init_target: scalers are " + std::to_string(scalers.layers) + "x" +
                        std::to_string(scalers.b_cols) + ", target needs " + std::to_string(target.dims.layers) + "x" +
                        std::to_string(p / bank.config.span()));
  }
  return {target, unpack_transformer(reconstruct(bank, scalers), target.dims), nn::init_untemplated(target, rng)};
}

struct AdaptConfig {
  ModelDims target{2, 2, 4, 0};
  ScalerInit init = ScalerInit::kInherit;
  DataConfig data;
  TrainConfig train{300, 32, 0, {}};
  double subset_fraction = 0.1;
  std::size_t eval_examples = 512;
};

struct AdaptResult {
  nn::TinyTransformerConfig model;
  TemplateBank bank;  // width-adapted copy; the caller's bank is untouched
  ScalerSet scalers;
  nn::UntemplatedParams untemplated;
  std::vector<HistoryRecord> history;
  double init_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::size_t trainable_parameters = 0;  // scalers + untemplated
  std::size_t scaler_parameters = 0;
  std::size_t templated_parameters = 0;  // L_t * P_t

  std::vector<LayerWeights> layers() const { return unpack_transformer(reconstruct(bank, scalers), model.dims); }
};

/// The "small subset" of the training stream used for adaptation.
inline nn::Batch adaptation_data(const AdaptConfig& cfg) {
  const std::size_t n = std::max<std::size_t>(
      cfg.train.batch, static_cast<std::size_t>(std::llround(cfg.subset_fraction * static_cast<double>(cfg.data.n))));
  return nn::synth_dataset(derive_seed(cfg.train.seed, stream::kAdaptData), n, cfg.data.vocab, cfg.data.seq_len);
}

inline ScalerSet initial_scalers(const ScalerSet& source, const FactorizationConfig& grid,
                                 const nn::TinyTransformerConfig& target, ScalerInit init, Rng& rng) {
  const std::uint64_t p = target.dims.row_length();
  if (p % grid.span() != 0) {
    throw ContractError("adapt: P_t=" + std::to_string(p) + " is not divisible by r1'*r2'=" + std::to_string(grid.span()));
  }
  const std::size_t b_cols = static_cast<std::size_t>(p / grid.span());
  if (init == ScalerInit::kInherit) {
    if (source.b_cols != b_cols) {
      throw ContractError("adapt: inherited scalers have B=" + std::to_string(source.b_cols) + ", target needs B=" +
                          std::to_string(b_cols));
    }
    return interpolate_scalers(source, target.dims.layers);
  }
  ScalerSet s = ScalerSet::zeros(grid.n_templates, target.dims.layers, b_cols);
  for (Matrix& m : s.scalers) m = random_normal(rng, m.rows(), m.cols(), kInitStddev);
  return s;
}

/// Freezes `bank`, resizes it to the target width and trains only scalers and
/// untemplated parameters on a small data subset.
inline AdaptResult adapt_scalers(const TemplateBank& bank, const ScalerSet& source_scalers,
                                 const ModelDims& source_dims, const AdaptConfig& cfg,
                                 const StepCallback& on_step = nullptr) {
  bank.validate();
  const nn::TinyTransformerConfig target = model_config(cfg.target, cfg.data);
  target.validate();
  const auto [r1, r2] = target_grid(bank.config, source_dims.embed(), cfg.target.embed());

  AdaptResult r;
  r.model = target;
  r.bank = adapt_template(bank, r1, r2);
  Rng rng(derive_seed(cfg.train.seed, stream::kTargetInit));
  r.scalers = initial_scalers(source_scalers, r.bank.config, target, cfg.init, rng);
  r.untemplated = nn::init_untemplated(target, rng);
  r.scaler_parameters = r.scalers.parameter_count();
  r.trainable_parameters = r.scaler_parameters + r.untemplated.parameter_count();
  r.templated_parameters = static_cast<std::size_t>(target.dims.layers * target.dims.row_length());

  const nn::Batch eval = evaluation_data(cfg.data, cfg.train.seed, cfg.eval_examples);
  r.init_eval_loss = nn::evaluate_loss(target, r.layers(), r.untemplated, eval);
  r.final_eval_loss = r.init_eval_loss;
  if (cfg.train.steps == 0) return r;

  const nn::Batch data = adaptation_data(cfg);
  nn::AdamState adam{cfg.train.adam, 0, {}, {}};
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    const nn::Batch batch = nn::slice_batch(data, step * cfg.train.batch, cfg.train.batch);
    const Matrix w = reconstruct(r.bank, r.scalers);
    nn::ModelGradients mg = nn::loss_and_gradients(target, unpack_transformer(w, target.dims), r.untemplated, batch);
    guard_divergence(step, mg.loss);
    const Matrix gw = pack_transformer(mg.layers, target.dims);
    KronGradients kg = kron_gradients(gw, r.bank, r.scalers);

    std::vector<Matrix*> params;
    std::vector<const Matrix*> grads;
    for (std::size_t i = 0; i < r.scalers.size(); ++i) {
      params.push_back(&r.scalers.scalers[i]);
      grads.push_back(&kg.scalers[i]);
    }
    auto ut = r.untemplated.tensors();
    for (std::size_t k = 0; k < ut.size(); ++k) {
      params.push_back(ut[k]);
      grads.push_back(&mg.untemplated[k]);
    }
    nn::adam_step(adam, params, grads);
    r.history.push_back({step, mg.loss, r1, r2});
    if (on_step) on_step(r.history.back());
  }
  r.final_eval_loss = nn::evaluate_loss(target, r.layers(), r.untemplated, eval);
  return r;
}

// ---------------------------------------------------------------------------
// Unconstrained control

/// He-normal initialization of every templated matrix, std = sqrt(2 / fan_in).
inline Matrix he_init_weights(const ModelDims& dims, Rng& rng) {
  std::vector<LayerWeights> layers;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    LayerWeights lw = zero_layer(dims);
    for (Matrix* m : lw.parts()) *m = random_normal(rng, m->rows(), m->cols(), std::sqrt(2.0 / static_cast<double>(m->rows())));
    layers.push_back(std::move(lw));
  }
  return pack_transformer(layers, dims);
}

struct UnconstrainedResult {
  nn::TinyTransformerConfig model;
  Matrix weights;  // L x P
  nn::UntemplatedParams untemplated;
  std::vector<HistoryRecord> history;
};

/// Trains W (L x P) directly with the same optimizer and loss as the constrained path.
inline UnconstrainedResult train_direct(const nn::TinyTransformerConfig& model, Matrix weights,
                                        nn::UntemplatedParams untemplated, const nn::Batch& data,
                                        const TrainConfig& train, const StepCallback& on_step = nullptr) {
  model.validate();
  if (weights.rows() != model.dims.layers || weights.cols() != model.dims.row_length()) {
    throw ContractError("train_direct: weights " + weights.shape_str() + " do not match model dims");
  }
  UnconstrainedResult r{model, std::move(weights), std::move(untemplated), {}};
  nn::AdamState adam{train.adam, 0, {}, {}};
  const std::size_t d = model.dims.embed();
  for (std::size_t step = 0; step < train.steps; ++step) {
    const nn::Batch batch = nn::slice_batch(data, step * train.batch, train.batch);
    nn::ModelGradients mg = nn::loss_and_gradients(model, unpack_transformer(r.weights, model.dims), r.untemplated, batch);
    guard_divergence(step, mg.loss);
    Matrix gw = pack_transformer(mg.layers, model.dims);
    std::vector<Matrix*> params{&r.weights};
    std::vector<const Matrix*> grads{&gw};
    auto ut = r.untemplated.tensors();
    for (std::size_t k = 0; k < ut.size(); ++k) {
      params.push_back(ut[k]);
      grads.push_back(&mg.untemplated[k]);
    }
    nn::adam_step(adam, params, grads);
    r.history.push_back({step, mg.loss, d, d});
    if (on_step) on_step(r.history.back());
  }
  return r;
}

struct UnconstrainedConfig {
  ModelDims dims{4, 2, 4, 32};
  DataConfig data;
  TrainConfig train;

  nn::TinyTransformerConfig model() const { return model_config(dims, data); }
};

inline UnconstrainedResult train_unconstrained(const UnconstrainedConfig& cfg, const StepCallback& on_step = nullptr) {
  const nn::TinyTransformerConfig model = cfg.model();
  model.validate();
  Rng rng(derive_seed(cfg.train.seed, stream::kInit));
  Matrix w = he_init_weights(cfg.dims, rng);
  nn::UntemplatedParams u = nn::init_untemplated(model, rng);
  return train_direct(model, std::move(w), std::move(u), training_data(cfg.data, cfg.train.seed), cfg.train, on_step);
}

// ---------------------------------------------------------------------------
// Initialization comparison

struct TransferComparison {
  double adapted_eval_loss = 0.0;  // after scaler-only adaptation, before training
  double weit_eval_loss = 0.0;     // adapted init, then `train` steps of direct training
  double random_eval_loss = 0.0;   // He init, then the same direct training
};

/// Trains the adapted target and a He-initialized twin for the same budget on
/// the adaptation subset and scores both on the held-out evaluation set.
inline TransferComparison compare_initializations(const AdaptResult& adapted, const AdaptConfig& cfg) {
  const nn::Batch data = adaptation_data(cfg);
  const nn::Batch eval = evaluation_data(cfg.data, cfg.train.seed, cfg.eval_examples);
  const nn::TinyTransformerConfig& model = adapted.model;

  UnconstrainedResult weit =
      train_direct(model, reconstruct(adapted.bank, adapted.scalers), adapted.untemplated, data, cfg.train);
  Rng rng(derive_seed(cfg.train.seed, stream::kInit));
  Matrix w = he_init_weights(model.dims, rng);
  nn::UntemplatedParams u = nn::init_untemplated(model, rng);
  UnconstrainedResult random = train_direct(model, std::move(w), std::move(u), data, cfg.train);

  return {adapted.final_eval_loss,
          nn::evaluate_loss(model, unpack_transformer(weit.weights, model.dims), weit.untemplated, eval),
          nn::evaluate_loss(model, unpack_transformer(random.weights, model.dims), random.untemplated, eval)};
}

// ---------------------------------------------------------------------------
// Rank selection from an output error target

struct RankSelectionReport {
  double epsilon = 0.0;
  LipschitzEstimate lipschitz;
  std::size_t n_templates = 0;
  double residual = 0.0;       // ||W - W*||_F
  double max_deviation = 0.0;  // max_x ||f(x; W*) - f(x; W)||
  std::size_t violations = 0;  // inputs whose deviation exceeds epsilon
  std::size_t inputs = 0;

  bool holds() const { return violations == 0; }
};

/// Picks N from the spectrum of W so that K_hat * residual <= epsilon, fits a
/// rank-N bank and measures the actual per-example logit deviation. K_hat is
/// a sampled lower bound, so a violation is a finding to report, not an error.
inline RankSelectionReport rank_selection_check(const nn::TinyTransformerConfig& model, const Matrix& w,
                                                const nn::UntemplatedParams& untemplated, std::size_t span,
                                                const nn::Batch& held_out, double epsilon, Rng& rng,
                                                std::size_t n_samples = 200, double perturb_scale = 1e-2) {
  if (held_out.size() == 0) throw ContractError("rank_selection_check: empty held-out set");
  auto f = [&](const Matrix& weights, std::size_t x) {
    return nn::forward(model, unpack_transformer(weights, model.dims), untemplated, nn::slice_batch(held_out, x, 1));
  };
  RankSelectionReport rep;
  rep.epsilon = epsilon;
  rep.inputs = held_out.size();
  rep.lipschitz = estimate_lipschitz(f, w, held_out.size(), rng, n_samples, perturb_scale);
  const Spectrum spec = spectrum(w, span);
  const double k = std::max(rep.lipschitz.k_hat, 1e-12);
  rep.n_templates = min_templates(spec, epsilon, k);
  const FitResult fitted = fit(w, grid_for_span(rep.n_templates, span));
  rep.residual = fitted.residual;
  const Matrix approx = reconstruct(fitted.bank, fitted.scalers);
  const Matrix base = nn::forward(model, unpack_transformer(w, model.dims), untemplated, held_out);
  const Matrix star = nn::forward(model, unpack_transformer(approx, model.dims), untemplated, held_out);
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < base.cols(); ++c) sq += (star(i, c) - base(i, c)) * (star(i, c) - base(i, c));
    const double dev = std::sqrt(sq);
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev > epsilon) ++rep.violations;
  }
  return rep;
}

}  // namespace templar
