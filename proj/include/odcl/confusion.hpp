#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "odcl/error.hpp"
#include "odcl/synthstream.hpp"

namespace odcl {

// Rows: reference (teacher) class, columns: predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return n_; }
  std::uint64_t at(std::size_t ref, std::size_t pred) const { return counts_[ref * n_ + pred]; }
  void add(std::size_t ref, std::size_t pred, std::uint64_t count = 1) { counts_[ref * n_ + pred] += count; }

  void add(const LabelGrid& reference, const LabelGrid& prediction) {
    if (reference.pixels() != prediction.pixels()) throw ShapeMismatch("confusion: grid sizes differ");
    for (std::size_t p = 0; p < reference.pixels(); ++p)
      add(static_cast<std::size_t>(reference.labels[p]), static_cast<std::size_t>(prediction.labels[p]));
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_) throw ShapeMismatch("confusion: class counts differ");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += o.counts_[k];
    return *this;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  std::span<const std::uint64_t> raw() const { return counts_; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

}  // namespace odcl
