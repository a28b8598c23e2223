// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "templar/analysis.hpp"
#include "templar/autodiff.hpp"
#include "templar/error.hpp"
#include "templar/factorization.hpp"
#include "templar/io.hpp"
#include "templar/linalg.hpp"
#include "templar/mask.hpp"
#include "templar/nn.hpp"
#include "templar/packing.hpp"
#include "templar/pipeline.hpp"
#include "templar/scaling.hpp"
