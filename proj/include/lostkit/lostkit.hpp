// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lostkit/box.hpp"
#include "lostkit/cluster.hpp"
#include "lostkit/datasets.hpp"
#include "lostkit/dinoseg.hpp"
#include "lostkit/error.hpp"
#include "lostkit/evalmetrics.hpp"
#include "lostkit/lost.hpp"
#include "lostkit/patchgraph.hpp"
#include "lostkit/tensorio.hpp"
