// Copyright 2026 The qbnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "qbnn/checkpoint.hpp"
#include "qbnn/config.hpp"
#include "qbnn/data.hpp"
#include "qbnn/layers.hpp"
#include "qbnn/metrics.hpp"
#include "qbnn/model.hpp"
#include "qbnn/qkernel.hpp"
#include "qbnn/quant.hpp"
#include "qbnn/rng.hpp"
#include "qbnn/sweep.hpp"
#include "qbnn/tensor.hpp"
#include "qbnn/train.hpp"
