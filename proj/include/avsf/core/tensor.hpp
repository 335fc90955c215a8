#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace avsf {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

class Tensor;

// One reverse-mode tape entry. `backward` reads the output gradient and
// accumulates into the input tensors' grad buffers.
struct TapeNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::function<void(const std::vector<double>& out_grad)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;
};

// Shared handle to a dense row-major double tensor. Values are treated as
// immutable once an op has consumed the tensor; only grad accumulates.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->values.assign(static_cast<size_t>(numel(shape)), 0.0);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.values()) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  size_t rank() const { return impl_->shape.size(); }
  int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  std::vector<double>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
  }
  const std::vector<double>& grad_or_zeros() const {
    if (impl_->grad.empty()) const_cast<TensorImpl*>(impl_.get())->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  const std::shared_ptr<TapeNode>& node() const { return impl_->node; }
  void set_node(std::shared_ptr<TapeNode> n) { impl_->node = std::move(n); }
  TensorImpl* raw() const { return impl_.get(); }

  // Detached copy: same values, no tape history, no grad requirement.
  Tensor detach() const { return Tensor::from(shape(), values()); }

  void check_finite(const char* what) const {
    for (double v : impl_->values)
      if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value produced");
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Attach a tape node to `out` if any input participates in differentiation.
inline void tape(Tensor& out, const char* op, std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&)> backward) {
  bool needs = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) needs = true;
  if (!needs) return;
  auto node = std::make_shared<TapeNode>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.set_node(std::move(node));
  out.set_requires_grad(true);
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// tensor reachable from `loss` that requires grad; leaves keep their buffers
// so repeated calls accumulate (callers zero grads between steps).
inline void backward(Tensor loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative postorder over the tape DAG.
  std::vector<Tensor> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    Tensor t;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({loss});
  seen.insert(loss.raw());
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& node = f.t.node();
    size_t n_in = node ? node->inputs.size() : 0;
    if (f.next < n_in) {
      Tensor in = node->inputs[f.next++];
      if (in.requires_grad() && !seen.count(in.raw())) {
        seen.insert(in.raw());
        stack.push_back({in});
      }
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  loss.grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = it->node();
    if (node && node->backward) node->backward(it->grad());
  }
}

// ---------------------------------------------------------------------------
// Flat binary tensor record: "AVSF", version byte, rank byte, extents as
// u64 little-endian, then values as f64 little-endian.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "serialization assumes little-endian host");

inline void save_tensor(std::ostream& os, const Tensor& t) {
  os.write("AVSF", 4);
  unsigned char version = 1;
  unsigned char rank = static_cast<unsigned char>(t.rank());
  os.put(static_cast<char>(version));
  os.put(static_cast<char>(rank));
  for (int64_t e : t.shape()) {
    uint64_t u = static_cast<uint64_t>(e);
    os.write(reinterpret_cast<const char*>(&u), 8);
  }
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

inline Tensor load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AVSF", 4) != 0) throw std::runtime_error("tensor record: bad magic");
  int version = is.get();
  if (version != 1) throw std::runtime_error("tensor record: unsupported version " + std::to_string(version));
  int rank = is.get();
  if (rank < 0 || rank > 16) throw std::runtime_error("tensor record: bad rank");
  Shape shape(rank);
  for (int i = 0; i < rank; ++i) {
    uint64_t u = 0;
    is.read(reinterpret_cast<char*>(&u), 8);
    shape[i] = static_cast<int64_t>(u);
  }
  Tensor t = Tensor::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  if (!is) throw std::runtime_error("tensor record: truncated values");
  return t;
}

}  // namespace avsf
