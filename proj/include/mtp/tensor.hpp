#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtp/rng.hpp"

namespace mtp {

// Dense row-major double tensor. A Tensor is a cheap shared handle to its
// storage (copying a Tensor aliases the data); use clone() for a deep copy.
// The gradient buffer lives next to the data and is allocated lazily.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from_data(std::vector<size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in)
    static Tensor he_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<size_t>& shape() const;
    size_t rank() const { return shape().size(); }
    size_t extent(size_t axis) const { return shape().at(axis); }
    size_t numel() const;

    double* data();
    const double* data() const;
    std::span<double> values();
    std::span<const double> values() const;

    double item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool v);

    // lazily allocated, zero-initialized
    double* grad();
    const double* grad_if_allocated() const;
    bool has_grad() const;
    void zero_grad();

    Tensor clone() const;  // deep copy of values; grad not copied
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    bool all_finite() const;

    std::string shape_str() const;

  private:
    struct Data {
        std::vector<size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty or same length as values
        bool requires_grad = false;
    };
    std::shared_ptr<Data> impl_;
};

size_t shape_numel(const std::vector<size_t>& shape);
void check_shape(bool cond, const std::string& what);

}  // namespace mtp
