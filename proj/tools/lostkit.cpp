// Copyright 2026 The lostkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lostkit/cli_app.hpp"

int main(int argc, char** argv) { return lostkit::cli::run(argc, argv); }
