#include "atnbreak/tensor.hpp"

#include <numeric>
#include <sstream>

namespace atnbreak {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DiffArray::DiffArray() : values_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

DiffArray::DiffArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != values.size()) {
    throw DimensionError("array of shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values.size()));
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

DiffArray DiffArray::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

DiffArray DiffArray::filled(Shape shape, double value) {
  std::vector<double> v(shape_size(shape), value);
  return DiffArray(std::move(shape), std::move(v));
}

DiffArray DiffArray::scalar(double value) { return DiffArray({}, {value}); }

double DiffArray::item() const {
  if (size() != 1) {
    throw DimensionError("item() on array of shape " + shape_string(shape_));
  }
  return (*values_)[0];
}

std::optional<NodeId> DiffArray::node() const {
  if (!record_) return std::nullopt;
  return node_;
}

DiffArray DiffArray::detached() const {
  DiffArray out = *this;
  out.record_ = nullptr;
  out.node_ = 0;
  out.generation_ = 0;
  return out;
}

std::vector<double>* GradSink::get(std::size_t slot) {
  const auto& id = inputs_[slot];
  if (!id) return nullptr;
  auto& buf = (*record_.active_grads_)[*id];
  if (buf.empty()) buf.assign(record_.nodes_[*id].size, 0.0);
  return &buf;
}

DiffArray GradientMap::of(const DiffArray& leaf) const {
  if (!leaf.node()) throw RecordError("gradient requested for a constant array");
  return of(*leaf.node());
}

DiffArray GradientMap::of(NodeId node) const {
  auto it = grads_.find(node);
  if (it == grads_.end()) {
    throw RecordError("node " + std::to_string(node) + " is not a watched input");
  }
  return it->second;
}

NodeId Record::add_node(const Shape& shape, bool leaf) {
  nodes_.push_back({shape_size(shape), shape, leaf});
  return nodes_.size() - 1;
}

std::optional<NodeId> Record::resolve(const DiffArray& a) const {
  if (a.record_ == nullptr) return std::nullopt;
  if (a.record_ != this || a.generation_ != generation_ || a.node_ >= nodes_.size()) {
    throw RecordError("array belongs to a different or consumed record");
  }
  return a.node_;
}

DiffArray Record::watch(const DiffArray& a) {
  if (a.record_ != nullptr) {
    throw RecordError("watch() on an array that is already tracked");
  }
  DiffArray out = a;
  out.record_ = this;
  out.node_ = add_node(a.shape(), true);
  out.generation_ = generation_;
  return out;
}

DiffArray Record::emit(Shape shape, std::vector<double> values,
                       std::span<const DiffArray* const> inputs, BackwardFn backward) {
  Record* rec = nullptr;
  for (const DiffArray* in : inputs) {
    if (in->record_ == nullptr) continue;
    if (rec != nullptr && in->record_ != rec) {
      throw RecordError("operation mixes arrays from different records");
    }
    rec = in->record_;
  }
  DiffArray out(std::move(shape), std::move(values));
  if (rec == nullptr) return out;

  OpEntry entry;
  entry.inputs.reserve(inputs.size());
  for (const DiffArray* in : inputs) entry.inputs.push_back(rec->resolve(*in));
  entry.output = rec->add_node(out.shape(), false);
  entry.backward = std::move(backward);
  out.record_ = rec;
  out.node_ = entry.output;
  out.generation_ = rec->generation_;
  rec->ops_.push_back(std::move(entry));
  return out;
}

GradientMap Record::backward(const DiffArray& loss) {
  auto id = resolve(loss);
  if (!id) throw RecordError("backward() on a constant loss");
  if (loss.size() != 1) {
    throw RecordError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[*id] = {1.0};
  active_grads_ = &grads;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const auto& g = grads[it->output];
    if (g.empty()) continue;
    GradSink sink(*this, it->inputs);
    it->backward(g, sink);
  }
  active_grads_ = nullptr;

  GradientMap result;
  for (NodeId n = 0; n < nodes_.size(); ++n) {
    if (!nodes_[n].leaf) continue;
    if (grads[n].empty()) grads[n].assign(nodes_[n].size, 0.0);
    result.grads_.emplace(n, DiffArray(nodes_[n].shape, std::move(grads[n])));
  }
  reset();
  return result;
}

void Record::reset() {
  nodes_.clear();
  ops_.clear();
  ++generation_;
}

}  // namespace atnbreak
