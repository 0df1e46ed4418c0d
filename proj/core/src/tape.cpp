#include "plkrf/tape.hpp"

#include "plkrf/error.hpp"

namespace plkrf {

namespace {
thread_local Tape* t_current = nullptr;
}

Tape* Tape::current() { return t_current; }

Tape::Scope::Scope(Tape& tape) : previous_(t_current) { t_current = &tape; }

Tape::Scope::~Scope() { t_current = previous_; }

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
}

void backward(Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (!loss.grad_relevant()) {
    throw ContractError("backward: loss was not produced under the tape");
  }
  loss.ensure_grad();
  loss.grad()[0] = 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    (*it)();
  }
  tape.clear();
}

}  // namespace plkrf
