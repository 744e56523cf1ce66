#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cafm/tensor.hpp"

namespace cafm::ad {

// Handle to a value recorded on a Tape. id < 0 marks a constant (or detached)
// value that participates in forward arithmetic but receives no gradient.
struct Var {
  Tensor value;
  int id = -1;

  bool tracked() const { return id >= 0; }
};

// Returns a constant Var carrying the same value; gradients stop here.
Var detach(const Var& v);
Var constant(Tensor value);

class Tape;

// Gradients keyed by tape node id, produced by Tape::backward.
class GradMap {
 public:
  // Gradient of the loss w.r.t. v. A tracked leaf the loss never touched
  // yields zeros; asking for an untracked (constant/detached) Var throws.
  Tensor at(const Var& v) const;
  bool touched(const Var& v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse-mode tape over Tensor values. Records a node per primitive op in
// execution order (already topologically sorted); backward() sweeps the
// nodes exactly once in reverse. Tapes are cheap and rebuilt every step.
class Tape {
 public:
  // upstream gradient -> one contribution per parent, aligned with `parents`.
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

  Var leaf(Tensor value);

  // Registers a custom primitive: `value` was computed outside the tape from
  // `parents` values; `backward` supplies the local vector-Jacobian product.
  Var record(std::string op, std::span<const Var> parents, Tensor value, BackwardFn backward);

  // --- primitive ops ------------------------------------------------------
  Var add(const Var& a, const Var& b);            // same shape
  Var sub(const Var& a, const Var& b);            // same shape
  Var mul(const Var& a, const Var& b);            // elementwise, same shape
  Var matmul(const Var& a, const Var& b);         // [n,k] @ [k,m]
  Var affine(const Var& x, const Var& w, const Var& b);  // x @ w + row-broadcast b
  Var tanh(const Var& v);
  Var relu(const Var& v);
  Var exp(const Var& v);
  Var log(const Var& v);                          // entries must be positive
  Var square(const Var& v);
  Var sum(const Var& v);                          // all entries -> scalar
  Var mean(const Var& v);                         // all entries -> scalar
  Var scalar_mul(const Var& v, double c);
  Var reshape(const Var& v, std::vector<std::size_t> shape);
  Var concat(std::span<const Var> parts, int axis);            // 2-D, axis 0 or 1
  Var slice(const Var& v, int axis, std::size_t start, std::size_t len);  // 2-D
  Var broadcast_rows(const Var& row, std::size_t n_rows);      // [d] -> [n,d]
  Var broadcast_add(const Var& m, const Var& row);             // [n,d] + [d]

  // log N(u; mu, diag(sigma^2)) summed over coordinates. u is observed data
  // (never differentiated). Shapes: u/mu [d] with sigma [d] -> scalar, or
  // u/mu [B,d] with sigma [d] or [B,d] -> [B] of per-row log-densities.
  Var gaussian_log_pdf(const Tensor& u, const Var& mu, const Var& sigma);

  // Gradient of scalar `loss` w.r.t. every tracked node, one reverse sweep.
  GradMap backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(int id) const { return nodes_[id].op; }

 private:
  struct Node {
    std::string op;
    std::vector<int> parents;
    std::vector<std::size_t> out_shape;
    BackwardFn backward;
  };

  Var push(std::string op, std::vector<int> parents, Tensor value, BackwardFn backward);

  std::vector<Node> nodes_;
};

// Test hooks: deliberately corrupt one op's backward rule so gradient
// checkers can prove they catch wrong derivatives. Off by default.
enum class GradMutation {
  None,
  GaussianSigmaGradSign,  // flips the sign of d(log pdf)/d(sigma)
  TanhGradScale,          // scales tanh's backward by 1.01
  MatmulLeftGradSign      // flips the sign of matmul's left-input gradient
};
void set_grad_mutation(GradMutation m);
GradMutation grad_mutation();

}  // namespace cafm::ad
