#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace atnbreak {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RecordError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Record;

// N-dimensional f64 array, row-major. Values are immutable and shared between
// copies. An array produced while a Record is active carries a node id into
// that record; arrays without a node are constants.
class DiffArray {
 public:
  DiffArray();
  DiffArray(Shape shape, std::vector<double> values);

  static DiffArray zeros(Shape shape);
  static DiffArray filled(Shape shape, double value);
  static DiffArray scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_->size(); }
  std::span<const double> values() const& { return *values_; }
  // A temporary hands out a copy so that `for (double v : f().values())` is safe.
  std::vector<double> values() && { return *values_; }
  const std::shared_ptr<const std::vector<double>>& storage() const { return values_; }
  double at(std::size_t flat_index) const { return (*values_)[flat_index]; }
  double item() const;

  bool tracked() const { return record_ != nullptr; }
  std::optional<NodeId> node() const;
  Record* record() const { return record_; }

  // Same values, no node.
  DiffArray detached() const;

 private:
  friend class Record;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Record* record_ = nullptr;
  NodeId node_ = 0;
  std::uint64_t generation_ = 0;
};

// Lazily materialized gradient buffers for the inputs of one recorded op.
class GradSink {
 public:
  // Gradient accumulator for input `slot`, or nullptr when that input is constant.
  std::vector<double>* get(std::size_t slot);

 private:
  friend class Record;
  GradSink(Record& record, std::span<const std::optional<NodeId>> inputs)
      : record_(record), inputs_(inputs) {}

  Record& record_;
  std::span<const std::optional<NodeId>> inputs_;
};

using BackwardFn = std::function<void(const std::vector<double>& grad_out, GradSink& sink)>;

class GradientMap {
 public:
  // Gradient of the loss with respect to a watched array. Leaves that the loss
  // does not depend on get zeros.
  DiffArray of(const DiffArray& leaf) const;
  DiffArray of(NodeId node) const;
  bool contains(NodeId node) const { return grads_.count(node) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Record;
  std::unordered_map<NodeId, DiffArray> grads_;
};

// Tape of recorded operations. Single writer; one record per forward pass.
// Arrays that reference a record must not outlive it.
class Record {
 public:
  Record() = default;
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;

  // Registers `a` as an input leaf and returns the tracked alias.
  DiffArray watch(const DiffArray& a);

  // Reverse sweep from a scalar loss. Returns gradients for every watched leaf
  // and resets the record; arrays from the consumed pass become invalid here.
  GradientMap backward(const DiffArray& loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }
  void reset();

  // Used by operation implementations. Returns a tracked result if any input is
  // tracked, otherwise a constant.
  static DiffArray emit(Shape shape, std::vector<double> values,
                        std::span<const DiffArray* const> inputs, BackwardFn backward);

 private:
  friend class GradSink;

  struct NodeInfo {
    std::size_t size;
    Shape shape;
    bool leaf;
  };
  struct OpEntry {
    std::vector<std::optional<NodeId>> inputs;
    NodeId output;
    BackwardFn backward;
  };

  NodeId add_node(const Shape& shape, bool leaf);
  std::optional<NodeId> resolve(const DiffArray& a) const;

  std::vector<NodeInfo> nodes_;
  std::vector<OpEntry> ops_;
  std::vector<std::vector<double>>* active_grads_ = nullptr;
  std::uint64_t generation_ = 1;
};

enum class ReduceKind { sum, mean, l2norm };

// Matrix product of [m,k] x [k,n].
DiffArray matmul(const DiffArray& a, const DiffArray& b);
DiffArray transpose(const DiffArray& a);

// Elementwise binary ops accept equal shapes, or one side a single-element array.
DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray scale(const DiffArray& a, double factor);
DiffArray square(const DiffArray& a);
// Gradient at 0 is +inf; callers keep inputs strictly positive.
DiffArray sqrt(const DiffArray& a);

// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))),
// sqrt(2/pi) = 0.7978845608028654.
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;
DiffArray gelu(const DiffArray& a);

// a[..., m] + bias[m] on every trailing row.
DiffArray add_rowwise(const DiffArray& a, const DiffArray& bias);

DiffArray softmax_rows(const DiffArray& a);

inline constexpr double kLayerNormEps = 1e-5;
DiffArray layer_norm(const DiffArray& a, const DiffArray& gain, const DiffArray& bias,
                     double eps = kLayerNormEps);

// Reduces over `axes` (empty means all axes); reduced axes are dropped.
// The l2norm gradient at an exactly zero vector is defined as zero.
DiffArray reduce(const DiffArray& a, ReduceKind kind, std::vector<std::size_t> axes = {});
inline DiffArray sum(const DiffArray& a) { return reduce(a, ReduceKind::sum); }
inline DiffArray mean(const DiffArray& a) { return reduce(a, ReduceKind::mean); }
inline DiffArray l2norm(const DiffArray& a) { return reduce(a, ReduceKind::l2norm); }

DiffArray reshape(const DiffArray& a, Shape shape);
DiffArray slice_rows(const DiffArray& a, std::size_t begin, std::size_t count);
DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t count);
DiffArray concat_rows(std::span<const DiffArray> parts);
DiffArray concat_cols(std::span<const DiffArray> parts);
// Stacks equal-shape arrays along a new leading axis.
DiffArray stack(std::span<const DiffArray> parts);
// out[i] = a[indices[i]] (flat indices), reshaped to `shape`.
DiffArray gather(const DiffArray& a, std::vector<std::size_t> indices, Shape shape);

// Mean cross-entropy of logits [n, c] against integer labels.
DiffArray cross_entropy(const DiffArray& logits, std::span<const int> labels);

}  // namespace atnbreak
