#include "mtp/tape.hpp"

#include <stdexcept>

namespace mtp {

void Tape::backward(Tensor& loss, GradMode mode) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward(mode);
    }
}

}  // namespace mtp
