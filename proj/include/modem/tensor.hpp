// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modem {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an API precondition that is not about shapes.
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

std::string shape_str(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

/// Dense row-major array of 64-bit floats.
///
/// The universal carrier for images (C x H x W), channel-major sequences
/// (C x L), vectors and weight matrices. Extents are always positive.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor(Shape{1}, value); }
    static Tensor from(std::initializer_list<double> values);

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double> &storage() noexcept { return data_; }

    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double &at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double &at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    /// Same data, new extents. Throws ShapeError if the element count differs.
    Tensor reshaped(Shape shape) const;

    bool same_shape(const Tensor &other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor &a, const Tensor &b) = default;

  private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace modem
