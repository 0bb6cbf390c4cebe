// SPDX-License-Identifier: Apache-2.0
//
// condlstmq command-line tool. See `condlstmq --help`.

#include "condlstmq/commands.hpp"

int main(int argc, char** argv) { return condlstmq::cli::run_cli(argc, argv); }
