#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvc {

// Dense row-major shapes, rank 1..4.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) { validate(); }

  int64_t rank() const { return static_cast<int64_t>(dims_.size()); }
  int64_t dim(int64_t i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int64_t>& dims() const { return dims_; }

  int64_t numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), int64_t{1},
                           std::multiplies<int64_t>());
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << 'x';
      os << dims_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    if (dims_.empty() || dims_.size() > 4)
      throw std::invalid_argument("Shape: rank must be in [1,4], got " +
                                  std::to_string(dims_.size()));
    for (int64_t d : dims_)
      if (d < 1)
        throw std::invalid_argument("Shape: every dim must be >= 1, got " + str());
  }

  std::vector<int64_t> dims_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Value-semantics handle onto a shared node. Copies alias the same storage;
// the autodiff tape keeps nodes alive through its recorded closures.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape.numel() != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("Tensor: shape " + shape.str() + " expects " +
                                  std::to_string(shape.numel()) + " values, got " +
                                  std::to_string(data.size()));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> data(static_cast<size_t>(shape.numel()), v);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const {
    if (node_->grad.empty())
      throw std::runtime_error("Tensor: gradient not populated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Scalar extraction; requires numel() == 1.
  T value() const {
    if (numel() != 1)
      throw std::invalid_argument("Tensor::value: tensor " + shape().str() +
                                  " is not a scalar");
    return node_->value[0];
  }

  T item(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Wengert list: ops append their backward closures during the forward pass
// while a tape is active on the current thread. The graph is rebuilt every
// forward pass; backward consumes the tape.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape* t) : prev_(active_) { active_ = t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  Scope activate() { return Scope(this); }
  static Tape* active() { return active_; }

  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse. The tape
  // is cleared afterwards; a fresh forward pass is required before the next
  // backward.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  loss.shape().str());
    if (entries_.empty())
      throw std::runtime_error(
          "backward: tape is empty (second backward without a new forward?)");
    auto node = loss.node();
    node->ensure_grad();
    node->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  static thread_local Tape* active_;
  std::vector<std::function<void()>> entries_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

}  // namespace nvc
