#pragma once

#include <functional>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/tensor.hpp"

namespace antispoof {

// Reverse-mode tape. Ops append one node as they execute, so the node list is
// topologically ordered by construction; backward() visits nodes in exact
// reverse construction order. Nodes whose output never received a gradient
// are skipped inside their own closures.
template <typename T>
class Graph {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  std::size_t node_count() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards. `loss` must be a
  // scalar (shape [1]).
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) throw ShapeError("Graph::backward: loss must be a scalar tensor");
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace antispoof
