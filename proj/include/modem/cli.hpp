// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace modem::cli {

/// Exit codes shared by every subcommand.
enum Exit : int { ok = 0, failure = 1, usage = 2 };

/// Runs `modem <subcommand> ...`; args excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace modem::cli
