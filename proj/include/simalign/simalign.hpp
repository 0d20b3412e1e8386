// Copyright 2026 The simalign Authors
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

#include "simalign/ablation.hpp"
#include "simalign/alignment.hpp"
#include "simalign/artifacts.hpp"
#include "simalign/common.hpp"
#include "simalign/config.hpp"
#include "simalign/dataset_io.hpp"
#include "simalign/detector.hpp"
#include "simalign/eval.hpp"
#include "simalign/geometry.hpp"
#include "simalign/memory_bank.hpp"
#include "simalign/nn.hpp"
#include "simalign/report.hpp"
#include "simalign/retrieval.hpp"
#include "simalign/rng.hpp"
#include "simalign/synth.hpp"
#include "simalign/tensor.hpp"
#include "simalign/trainer.hpp"
