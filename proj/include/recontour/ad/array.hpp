#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace recontour::ad {

// Thrown when an operation's input contract is violated (shape mismatch,
// invalid kernel size, ...).
struct contract_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}

template <typename T>
class TapeT;

// Dense n-d array of scalars. Values are shared between copies and are never
// mutated by operators; a non-null tape pointer means the array participates
// in gradient recording under the given node id.
template <typename T>
struct ArrayT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> val;
  TapeT<T>* tape = nullptr;
  int node = -1;

  ArrayT() : val(std::make_shared<std::vector<T>>()) {}

  explicit ArrayT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    val = std::make_shared<std::vector<T>>(static_cast<size_t>(count(shape)), fill);
  }

  ArrayT(std::vector<int> s, std::vector<T> data) : shape(std::move(s)) {
    check(static_cast<size_t>(count(shape)) == data.size(),
          "ArrayT: data size does not match shape");
    val = std::make_shared<std::vector<T>>(std::move(data));
  }

  static long long count(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int numel() const { return static_cast<int>(val->size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* data() { return val->data(); }
  const T* data() const { return val->data(); }

  T& operator[](int i) { return (*val)[static_cast<size_t>(i)]; }
  const T& operator[](int i) const { return (*val)[static_cast<size_t>(i)]; }

  T& at2(int i, int j) { return (*val)[static_cast<size_t>(i * dim(1) + j)]; }
  const T& at2(int i, int j) const { return (*val)[static_cast<size_t>(i * dim(1) + j)]; }

  T& at3(int i, int j, int k) {
    return (*val)[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  const T& at3(int i, int j, int k) const {
    return (*val)[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  bool attached() const { return tape != nullptr && node >= 0; }

  // Same values, no tape participation.
  ArrayT detached() const {
    ArrayT out;
    out.shape = shape;
    out.val = val;
    return out;
  }

  // Gradient accumulated by the owning tape's backward pass.
  const std::vector<T>& grad() const;
};

// Reverse-mode gradient tape. Operations append nodes in evaluation order;
// backward() walks them in reverse, which is a reverse topological order
// because an operation's parents always precede it. Accumulation order is
// fixed, so repeated backward passes over identical inputs are bit-identical.
template <typename T>
class TapeT {
 public:
  // Registers an external array (parameter, input) as a leaf on this tape.
  // The returned array shares values with `a`.
  ArrayT<T> leaf(const ArrayT<T>& a) {
    ArrayT<T> out = a.detached();
    out.tape = this;
    out.node = alloc({}, out.numel());
    return out;
  }

  int alloc(std::vector<int> parents, int out_numel) {
    nodes_.push_back(Node{std::move(parents), out_numel, nullptr, {}, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_back(int id, std::function<void(TapeT&)> fn) {
    nodes_[static_cast<size_t>(id)].back = std::move(fn);
  }

  size_t size() const { return nodes_.size(); }

  const std::vector<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  std::vector<T>& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  // Propagates from a scalar root. Only nodes reachable from the root are
  // visited; each visited node's backward fires exactly once.
  void backward(const ArrayT<T>& root) {
    check(root.tape == this && root.node >= 0, "backward: root is not on this tape");
    check(root.numel() == 1, "backward: root must be scalar");
    for (auto& n : nodes_) n.needed = false;
    std::vector<int> stack{root.node};
    nodes_[static_cast<size_t>(root.node)].needed = true;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[static_cast<size_t>(id)].parents) {
        Node& pn = nodes_[static_cast<size_t>(p)];
        if (!pn.needed) {
          pn.needed = true;
          stack.push_back(p);
        }
      }
    }
    for (auto& n : nodes_) {
      if (n.needed && n.grad.size() != static_cast<size_t>(n.numel))
        n.grad.assign(static_cast<size_t>(n.numel), T(0));
      else if (n.needed)
        std::fill(n.grad.begin(), n.grad.end(), T(0));
    }
    nodes_[static_cast<size_t>(root.node)].grad[0] = T(1);
    for (int id = root.node; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.needed && n.back) n.back(*this);
    }
  }

  void reset_grads() {
    for (auto& n : nodes_)
      std::fill(n.grad.begin(), n.grad.end(), T(0));
  }

 private:
  struct Node {
    std::vector<int> parents;
    int numel;
    std::function<void(TapeT&)> back;
    std::vector<T> grad;
    bool needed;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const std::vector<T>& ArrayT<T>::grad() const {
  check(attached(), "grad(): array is detached");
  return tape->grad(node);
}

using Array = ArrayT<float>;
using Tape = TapeT<float>;

}  // namespace recontour::ad
