#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/tensor.hpp"

namespace cafm {

// Axis-aligned box {lo <= x <= hi}; entries may be +-infinity for one-sided
// bounds.
struct Box {
  Tensor lo, hi;
};
Box make_box(std::vector<double> lo, std::vector<double> hi);

// Two diagonal boxes in the plane: inner <= |x_i| <= outer for both
// coordinates, with x_1 and x_2 sharing a sign. Ties in the distance go to
// the positive-quadrant box.
struct TwoBoxes {
  double inner = 1.0;
  double outer = 5.0;
};

struct L2Ball {
  std::size_t dim = 2;
  double radius = 1.0;
};

// {x : normal . x + offset = 0}. Membership allows |residual| <= tol; the
// distance is the exact Euclidean distance |residual| / ||normal||.
struct Hyperplane {
  Tensor normal;
  double offset = 0.0;
  double tol = 5e-4;
};

class OracleProcess;

// Membership outsourced to a subprocess: one comma-separated point per line
// on stdin, one '0'/'1' reply per line on stdout, flushed per batch.
// Copies share the running process. No usable distance.
struct ExternalOracle {
  std::string command;
  std::size_t dim = 2;
  double timeout_sec = 10.0;
  int max_attempts = 3;
  mutable std::shared_ptr<OracleProcess> process;  // lazily spawned
};
ExternalOracle make_external_oracle(std::string command, std::size_t dim,
                                    double timeout_sec = 10.0);

class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& msg, int attempts, std::string last_reply)
      : std::runtime_error(msg), attempts_(attempts), last_reply_(std::move(last_reply)) {}
  int attempts() const { return attempts_; }
  const std::string& last_reply() const { return last_reply_; }

 private:
  int attempts_;
  std::string last_reply_;
};

using ConstraintSet = std::variant<Box, TwoBoxes, L2Ball, Hyperplane, ExternalOracle>;

std::size_t constraint_dim(const ConstraintSet& c);
std::string constraint_name(const ConstraintSet& c);
bool distance_available(const ConstraintSet& c);

bool contains(const ConstraintSet& c, const Tensor& x);                    // x [d]
std::vector<char> contains_batch(const ConstraintSet& c, const Tensor& xs);  // xs [n,d]

// Euclidean distance to the set, 0 inside. Throws for ExternalOracle.
double set_distance(const ConstraintSet& c, const Tensor& x);
// Gradient of set_distance at x; unit norm where the distance is positive,
// zero inside the set.
Tensor set_distance_gradient(const ConstraintSet& c, const Tensor& x);
// Differentiable distance node: x [d] -> scalar, or x [B,d] -> [B].
ad::Var set_distance_var(ad::Tape& tape, const ConstraintSet& c, const ad::Var& x);

}  // namespace cafm
