#include "mtp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mtp {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

void check_shape(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument("shape mismatch: " + what);
}

Tensor::Tensor(std::vector<size_t> shape, double fill, bool requires_grad) {
    for (size_t e : shape) {
        if (e == 0) throw std::invalid_argument("tensor extents must be positive");
    }
    impl_ = std::make_shared<Data>();
    impl_->shape = std::move(shape);
    impl_->values.assign(shape_numel(impl_->shape), fill);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> values,
                         bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("from_data: value count does not match shape");
    Tensor t;
    t.impl_ = std::make_shared<Data>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::he_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng) {
    if (fan_in == 0) throw std::invalid_argument("he_uniform: fan_in must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape), 0.0, true);
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

const std::vector<size_t>& Tensor::shape() const {
    if (!impl_) throw std::runtime_error("undefined tensor");
    return impl_->shape;
}

size_t Tensor::numel() const { return shape_numel(shape()); }

double* Tensor::data() {
    if (!impl_) throw std::runtime_error("undefined tensor");
    return impl_->values.data();
}

const double* Tensor::data() const {
    if (!impl_) throw std::runtime_error("undefined tensor");
    return impl_->values.data();
}

std::span<double> Tensor::values() { return {data(), numel()}; }
std::span<const double> Tensor::values() const { return {data(), numel()}; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor is not scalar");
    return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!impl_) throw std::runtime_error("undefined tensor");
    impl_->requires_grad = v;
}

double* Tensor::grad() {
    if (!impl_) throw std::runtime_error("undefined tensor");
    if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad.data();
}

const double* Tensor::grad_if_allocated() const {
    if (!impl_ || impl_->grad.empty()) return nullptr;
    return impl_->grad.data();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
}

Tensor Tensor::clone() const {
    if (!impl_) return {};
    Tensor t;
    t.impl_ = std::make_shared<Data>();
    t.impl_->shape = impl_->shape;
    t.impl_->values = impl_->values;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    const auto& s = shape();
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace mtp
