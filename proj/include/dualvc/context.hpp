// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "dualvc/tensor.hpp"

namespace dualvc {

/// Most recent frames seen by one convolution stage, at most `capacity`.
///
/// Running a length-preserving layer on [held frames + new chunk] and keeping
/// the last chunk-length rows gives exactly what the layer produces offline
/// for those frames: while fewer than `capacity` frames have been seen the
/// held frames are the entire history, so the layer's own zero padding lines
/// up with the sequence start.
template <typename T>
class ContextRing {
 public:
  ContextRing() = default;
  ContextRing(std::size_t capacity, std::size_t width) : capacity_(capacity), width_(width) {
    frames_.reserve(capacity * width);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return width_ ? frames_.size() / width_ : 0; }
  const std::vector<T>& frames() const { return frames_; }
  std::size_t byte_size() const { return capacity_ * width_ * sizeof(T); }

  /// [held frames ; chunk].
  BasicTensor<T> with_context(const BasicTensor<T>& chunk) const {
    if (chunk.cols() != width_) throw ShapeError("context ring: chunk width mismatch");
    std::vector<T> data(frames_);
    data.insert(data.end(), chunk.storage().begin(), chunk.storage().end());
    return BasicTensor<T>({size() + chunk.rows(), width_}, std::move(data));
  }

  void push(const BasicTensor<T>& chunk) {
    if (capacity_ == 0) return;
    frames_.insert(frames_.end(), chunk.storage().begin(), chunk.storage().end());
    const std::size_t keep = capacity_ * width_;
    if (frames_.size() > keep) frames_.erase(frames_.begin(), frames_.end() - static_cast<std::ptrdiff_t>(keep));
  }

  /// Applies a length-preserving `layer` to `chunk` given the held history,
  /// then records the chunk.
  template <typename Layer>
  BasicTensor<T> apply(const BasicTensor<T>& chunk, Layer&& layer) {
    const BasicTensor<T> padded = with_context(chunk);
    const BasicTensor<T> full = layer(padded);
    push(chunk);
    return full.slice_rows(full.rows() - chunk.rows(), full.rows());
  }

 private:
  std::size_t capacity_ = 0;
  std::size_t width_ = 0;
  std::vector<T> frames_;
};

}  // namespace dualvc
