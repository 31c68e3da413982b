// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#include "lorachem/cli.hpp"

int main(int argc, char** argv) { return lorachem::cli::dispatch(argc, argv); }
