#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace newsdistill {

using Shape = std::vector<std::size_t>;

// 1 marks a real token (or history slot), 0 marks padding.
using Mask = std::vector<std::uint8_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Set when backward has routed gradient into this tensor during the current pass.
  bool grad_live = false;
};

}  // namespace detail

// Dense row-major float64 tensor with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, which is how the
// teacher and student paths hold the *same* pooling/dense parameters. Use
// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double value(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  // Empty span when no gradient has been allocated.
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor clone() const;
  Tensor grad_tensor() const;

  bool is_same(const Tensor& other) const { return storage_ == other.storage_; }
  bool all_finite() const;

  detail::TensorStorage& storage() const { return *storage_; }

 private:
  std::shared_ptr<detail::TensorStorage> storage_;
};

// Records differentiable operations in execution order. A tape in inference
// mode records nothing and ops skip gradient bookkeeping entirely.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }

  // True when an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> rule);

  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_[i].op; }

 private:
  friend void backward(const Tensor& loss, Tape& tape);

  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> rule;
  };

  Mode mode_;
  std::vector<Entry> entries_;
};

// Reverse-mode pass from a scalar loss. Gradients of leaf tensors accumulate
// across calls (callers zero them between steps); intermediate gradients are
// reset at the start of every call, so one tape can serve several losses.
void backward(const Tensor& loss, Tape& tape);

// Gradient sink for backward rules: allocates on first use and marks the
// tensor as having received gradient in this pass.
std::span<double> grad_sink(const Tensor& t);

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

void zero_grads(const ParameterList& params);
std::size_t count_scalars(const ParameterList& params);

enum class ParameterOwner { kTeacher, kStudent, kPooling, kDense };

ParameterOwner owner_of(std::string_view name);

// Named gradients, keyed by parameter name (module path + tensor name).
class GradientSet {
 public:
  GradientSet() = default;

  // Snapshot of the current gradients of `params`; unreached parameters get zeros.
  static GradientSet collect(const ParameterList& params);

  void set(const std::string& name, Tensor grad) { grads_[name] = std::move(grad); }
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const { return grads_.size(); }
  const std::map<std::string, Tensor>& entries() const { return grads_; }

  GradientSet partition(ParameterOwner owner) const;
  double l2_norm() const;

  // Writes these gradients back into the parameter grad slots (overwrite).
  void store_into(const ParameterList& params) const;

 private:
  std::map<std::string, Tensor> grads_;
};

}  // namespace newsdistill
