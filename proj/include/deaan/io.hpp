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

#ifndef DEAAN_IO_HPP_
#define DEAAN_IO_HPP_

#include <filesystem>
#include <functional>
#include <string>

#include "deaan/common.hpp"

namespace deaan {

// Atomic file write: the writer streams into <path>.tmp.<pid> which is then
// renamed over the destination, so readers never observe a partial file.
void write_atomic(const std::filesystem::path &path,
                  const std::function<void(std::ostream &)> &writer);

// Feature matrix container: magic "FEATMAT1", u32 rows, u32 cols,
// rows*cols float32 row-major, all little-endian.
void write_feature_matrix(const std::filesystem::path &path, const Matrix &m);
Matrix read_feature_matrix(const std::filesystem::path &path);

std::string read_text_file(const std::filesystem::path &path);

}  // namespace deaan

#endif  // DEAAN_IO_HPP_
