#include "newsdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "newsdistill/errors.hpp"

namespace newsdistill {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  storage_->data.assign(shape_numel(shape), 0.0);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_to_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return storage_->shape; }
std::size_t Tensor::numel() const { return storage_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a matrix, got " + shape_to_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_to_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return storage_->data; }
std::span<double> Tensor::mutable_values() { return storage_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_to_string(shape()));
  return storage_->data[0];
}

bool Tensor::requires_grad() const { return storage_->requires_grad; }
void Tensor::set_requires_grad(bool on) { storage_->requires_grad = on; }

bool Tensor::has_grad() const { return !storage_->grad.empty(); }
std::span<const double> Tensor::grad() const { return storage_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() { std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor out(shape(), storage_->data, requires_grad());
  return out;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), storage_->grad);
}

bool Tensor::all_finite() const {
  return std::all_of(storage_->data.begin(), storage_->data.end(), [](double v) { return std::isfinite(v); });
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output, std::function<void()> rule) {
  output.set_requires_grad(true);
  entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(rule)});
}

std::span<double> grad_sink(const Tensor& t) {
  auto& s = t.storage();
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  s.grad_live = true;
  return s.grad;
}

void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  // Intermediate gradients restart empty; grad_sink zero-fills on first use.
  for (auto& e : tape.entries_) {
    auto& s = e.output.storage();
    s.grad.clear();
    s.grad_live = false;
  }
  if (!loss.requires_grad()) return;
  grad_sink(loss)[0] += 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (!it->output.storage().grad_live) continue;
    it->rule();
  }
}

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    auto& s = p.tensor.storage();
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
  }
}

std::size_t count_scalars(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

ParameterOwner owner_of(std::string_view name) {
  if (name.starts_with("teacher.")) return ParameterOwner::kTeacher;
  if (name.starts_with("student.")) return ParameterOwner::kStudent;
  if (name.find("dense.") != std::string_view::npos) return ParameterOwner::kDense;
  if (name.find("pool.") != std::string_view::npos || name.find("user.") != std::string_view::npos) {
    return ParameterOwner::kPooling;
  }
  throw ContractError("parameter '" + std::string(name) + "' has no owner partition");
}

GradientSet GradientSet::collect(const ParameterList& params) {
  GradientSet out;
  for (const auto& p : params) out.grads_[p.name] = p.tensor.grad_tensor();
  return out;
}

const Tensor& GradientSet::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractError("no gradient recorded for '" + name + "'");
  return it->second;
}

Tensor& GradientSet::at(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractError("no gradient recorded for '" + name + "'");
  return it->second;
}

GradientSet GradientSet::partition(ParameterOwner owner) const {
  GradientSet out;
  for (const auto& [name, g] : grads_) {
    if (owner_of(name) == owner) out.grads_[name] = g;
  }
  return out;
}

double GradientSet::l2_norm() const {
  double sq = 0.0;
  for (const auto& [name, g] : grads_) {
    for (double v : g.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

void GradientSet::store_into(const ParameterList& params) const {
  for (const auto& p : params) {
    auto it = grads_.find(p.name);
    if (it == grads_.end()) continue;
    if (it->second.shape() != p.tensor.shape()) {
      throw DimensionError("gradient for '" + p.name + "' has shape " + shape_to_string(it->second.shape()) +
                           ", parameter has " + shape_to_string(p.tensor.shape()));
    }
    p.tensor.storage().grad.assign(it->second.values().begin(), it->second.values().end());
  }
}

}  // namespace newsdistill
