// Copyright 2026 The VeriTensor Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "veritensor/errors.hpp"
#include "veritensor/field.hpp"

namespace veritensor {

/// Row-major signed integer matrix; entries are fixed-point values at scale
/// 2^q unless a kernel states otherwise.
struct QTensor {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<int64_t> data;

  QTensor() = default;
  QTensor(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0) {}
  QTensor(size_t r, size_t c, std::vector<int64_t> d) : rows(r), cols(c), data(std::move(d)) {
    VT_ENFORCE(data.size() == rows * cols, ErrorCode::kShapeMismatch, "QTensor data size != rows*cols");
  }

  static QTensor from_rows(const std::vector<std::vector<int64_t>>& rs) {
    QTensor t(rs.size(), rs.empty() ? 0 : rs[0].size());
    for (size_t i = 0; i < rs.size(); ++i) {
      VT_ENFORCE(rs[i].size() == t.cols, ErrorCode::kShapeMismatch, "ragged rows");
      for (size_t j = 0; j < t.cols; ++j) t.at(i, j) = rs[i][j];
    }
    return t;
  }

  int64_t& at(size_t i, size_t j) { return data[i * cols + j]; }
  int64_t at(size_t i, size_t j) const { return data[i * cols + j]; }

  std::span<const int64_t> row(size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<int64_t> row(size_t i) { return {data.data() + i * cols, cols}; }

  size_t size() const { return data.size(); }
  size_t bytes() const { return data.size() * sizeof(int64_t); }

  bool in_window() const {
    for (int64_t v : data)
      if (v < -kWindow || v > kWindow) return false;
    return true;
  }

  QTensor transposed() const {
    QTensor t(cols, rows);
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
    return t;
  }

  /// Columns [c0, c0 + n).
  QTensor col_slice(size_t c0, size_t n) const {
    VT_ENFORCE(c0 + n <= cols, ErrorCode::kShapeMismatch, "col_slice out of range");
    QTensor t(rows, n);
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < n; ++j) t.at(i, j) = at(i, c0 + j);
    return t;
  }

  QTensor row_slice(size_t r0, size_t n) const {
    VT_ENFORCE(r0 + n <= rows, ErrorCode::kShapeMismatch, "row_slice out of range");
    QTensor t(n, cols);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(r0 * cols),
              data.begin() + static_cast<std::ptrdiff_t>((r0 + n) * cols), t.data.begin());
    return t;
  }

  void set_col_slice(size_t c0, const QTensor& src) {
    VT_ENFORCE(src.rows == rows && c0 + src.cols <= cols, ErrorCode::kShapeMismatch,
               "set_col_slice shape");
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < src.cols; ++j) at(i, c0 + j) = src.at(i, j);
  }

  friend bool operator==(const QTensor&, const QTensor&) = default;
};

}  // namespace veritensor
