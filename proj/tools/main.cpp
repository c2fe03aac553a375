// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness.hpp"

int main(int argc, char** argv) { return shiftmatch::harness::run_cli(argc, argv); }
