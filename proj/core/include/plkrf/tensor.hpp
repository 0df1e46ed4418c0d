#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace plkrf {

// Element storage width. Arithmetic always runs in double; f32 tensors round
// their stored values through float so results carry genuine single
// precision. Gradients are kept in double regardless.
enum class Dtype : std::uint8_t { f64 = 0, f32 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major N-d array. Value type with shared storage: copies alias the
// same buffer, which is what the tape needs to thread gradients through a
// recorded graph. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dtype = Dtype::f64);
  static Tensor full(Shape shape, double value, Dtype dtype = Dtype::f64);
  static Tensor from_data(Shape shape, std::vector<double> data, Dtype dtype = Dtype::f64);
  static Tensor scalar(double value, Dtype dtype = Dtype::f64);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  Dtype dtype() const;

  double* data();
  const double* data() const;
  std::span<double> values() { return {data(), numel()}; }
  std::span<const double> values() const { return {data(), numel()}; }

  double item() const;  // requires numel() == 1
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  // True when produced by a recorded op in the current tape's lifetime.
  bool on_tape() const;
  void mark_on_tape();

  // The gradient buffer is shared state like the value buffer; handles with
  // const access may still accumulate into it during backward.
  bool has_grad() const;
  double* grad() const;
  std::span<double> grad_values() const;
  void ensure_grad() const;  // allocate zero-filled gradient buffer if missing
  void zero_grad() const;    // zero it if present
  void drop_grad() const;    // release the buffer

  // Whether backward should ever write a gradient here.
  bool grad_relevant() const { return requires_grad() || on_tape(); }

  Tensor clone() const;

  // Round stored values through float when dtype is f32. No-op for f64.
  void quantize_storage();

  // Throws NumericError naming `what` if any element is not finite.
  void check_finite(const char* what) const;

  // Identity of the underlying buffer (for caching / aliasing checks).
  const void* node_id() const { return node_.get(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    bool on_tape = false;
    Dtype dtype = Dtype::f64;
  };

  std::shared_ptr<Node> node_;
};

// Result dtype for an op: f32 only if every differentiable input is f32.
Dtype promote_dtype(Dtype a, Dtype b);

}  // namespace plkrf
