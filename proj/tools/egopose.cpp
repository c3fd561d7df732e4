// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#include "egopose/cli.hpp"

int main(int argc, char** argv) { return egopose::cli::run(argc, argv); }
