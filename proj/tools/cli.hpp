/*
 * Copyright 2026 The transfa-cpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <ostream>

namespace transfa::cli {

// Parses argv and runs one subcommand. Returns 0 on success, 1 on a usage
// error (bad flags, missing inputs) and 2 when the work itself fails.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace transfa::cli
