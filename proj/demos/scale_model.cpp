// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Pretrains a template bank on the desk task, then initializes models of other
// depths and widths from it by training only their scalers.

#include <cstdio>

#include "templar/templar.hpp"

int main() {
  using namespace templar;
  PretrainConfig cfg;
  const PretrainResult pre = pretrain_constrained(cfg);
  std::printf("pretrain: loss %.4f -> %.4f over %zu steps\n", pre.history.front().loss, pre.history.back().loss,
              pre.history.size());

  const std::pair<std::size_t, std::size_t> targets[] = {{2, 2}, {6, 2}, {4, 3}};
  for (const auto& [depth, heads] : targets) {
    AdaptConfig a;
    a.target = target_dims(cfg.dims, depth, heads);
    const AdaptResult r = adapt_scalers(pre.bank, pre.scalers, cfg.dims, a);
    std::printf("L=%zu H=%zu D=%zu: eval loss %.4f -> %.4f, trainable %zu of %zu templated\n", depth, heads,
                a.target.embed(), r.init_eval_loss, r.final_eval_loss, r.trainable_parameters,
                r.templated_parameters);
  }
}
