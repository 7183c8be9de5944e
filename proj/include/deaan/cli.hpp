// Copyright (c) 2026 DEAAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DEAAN_CLI_HPP_
#define DEAAN_CLI_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace deaan::cli {

// Flat dotted-key configuration: `key = value` lines (# comments), with
// command-line `key=value` overrides winning over file values.
class Config {
 public:
  static Config load(const std::filesystem::path &file,
                     const std::vector<std::string> &overrides);

  bool has(const std::string &key) const { return kv_.count(key) > 0; }
  std::string str(const std::string &key, const std::string &fallback) const;
  std::string require(const std::string &key) const;
  long integer(const std::string &key, long fallback) const;
  double real(const std::string &key, double fallback) const;
  uint64_t seed(const std::string &key, uint64_t fallback) const;

  // Rejects keys outside `valid`, listing all valid keys in the error.
  void restrict_keys(const std::vector<std::string> &valid) const;

 private:
  std::map<std::string, std::string> kv_;
};

// Exit code contract: 0 success, 1 usage/configuration error, 2 runtime error.
int dispatch(int argc, const char *const *argv);

}  // namespace deaan::cli

#endif  // DEAAN_CLI_HPP_
