#pragma once

#include <functional>
#include <vector>

#include "plkrf/tensor.hpp"

namespace plkrf {

// Reverse-mode tape. Ops record a backward closure per forward call; replaying
// the closures in reverse order propagates gradients from a scalar loss to
// every requires_grad ancestor. Tapes are per training step and cleared
// eagerly — a cleared tape holds no tensor references.
//
// Recording is confined to one thread at a time: the active tape is a
// thread-local, installed with Tape::Scope.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Active tape for this thread, or nullptr when not recording.
  static Tape* current();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear();

 private:
  friend void backward(Tensor& loss, Tape& tape);
  std::vector<std::function<void()>> nodes_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape backwards. The loss must be
// a scalar produced while `tape` was active. Consumes (clears) the tape.
void backward(Tensor& loss, Tape& tape);

}  // namespace plkrf
