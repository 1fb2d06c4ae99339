#include "pdg/autodiff.hpp"

#include <ostream>

namespace pdg::ad {

void Tape::backward(const Var& output, std::vector<double>& adjoint) const {
    if (output.tape != this || output.idx < 0)
        throw ValidationError("backward: output is not a node of this tape");
    adjoint.assign(nodes_.size(), 0.0);
    adjoint[static_cast<std::size_t>(output.idx)] = 1.0;
    for (std::int32_t i = output.idx; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        const double a = adjoint[static_cast<std::size_t>(i)];
        if (a == 0.0) continue;
        if (n.pa >= 0) adjoint[static_cast<std::size_t>(n.pa)] += n.wa * a;
        if (n.pb >= 0) adjoint[static_cast<std::size_t>(n.pb)] += n.wb * a;
    }
}

std::ostream& operator<<(std::ostream& os, const Var& a) { return os << a.v; }

}  // namespace pdg::ad
