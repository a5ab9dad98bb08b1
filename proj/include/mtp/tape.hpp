#pragma once

#include <functional>
#include <vector>

#include "mtp/tensor.hpp"

namespace mtp {

// How ReLU nodes route gradient during reverse traversal. Guided mode is the
// Guided-Backpropagation rule: pass upstream gradient only where the forward
// input and the upstream gradient are both positive.
enum class GradMode { standard, guided_relu };

enum class OpKind {
    conv3d,
    dense,
    relu,
    sigmoid,
    global_avg_pool,
    avg_pool3d,
    batch_norm,
    dropout,
    concat_channels,
    upsample,
    bce_mean,
    weighted_sum,
    mean_all,
    elementwise
};

// Reverse-mode tape. Operations append one node each in execution order, so a
// single reverse sweep visits every node exactly once with all downstream
// gradients already accumulated.
class Tape {
  public:
    struct Node {
        OpKind kind;
        std::function<void(GradMode)> backward;
    };

    void record(OpKind kind, std::function<void(GradMode)> backward) {
        nodes_.push_back({kind, std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. Gradients are
    // accumulated (+=) into every tensor reached, so parameter gradients from
    // successive tapes add up until the caller zeroes them.
    void backward(Tensor& loss, GradMode mode = GradMode::standard);

    size_t size() const { return nodes_.size(); }
    const Node& node(size_t i) const { return nodes_.at(i); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<Node> nodes_;
};

}  // namespace mtp
