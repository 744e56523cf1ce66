#include "cafm/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cafm::ad {

namespace {

GradMutation g_mutation = GradMutation::None;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const RowMat>;
using MatMapMut = Eigen::Map<RowMat>;

MatMap mat(const Tensor& t, std::size_t r, std::size_t c) {
  return MatMap(t.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// General GEMM with optional transposes; shapes refer to the stored tensors.
Tensor mm(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const std::size_t m = ta ? ac : ar;
  const std::size_t k = ta ? ar : ac;
  const std::size_t k2 = tb ? bc : br;
  const std::size_t n = tb ? br : bc;
  if (k != k2) {
    throw std::invalid_argument("matmul backward: inner dimensions differ, " + a.shape_str() +
                                (ta ? "^T" : "") + " @ " + b.shape_str() + (tb ? "^T" : ""));
  }
  Tensor out({m, n});
  MatMapMut mo(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  auto ma = mat(a, ar, ac);
  auto mb = mat(b, br, bc);
  if (!ta && !tb) mo.noalias() = ma * mb;
  else if (ta && !tb) mo.noalias() = ma.transpose() * mb;
  else if (!ta && tb) mo.noalias() = ma * mb.transpose();
  else mo.noalias() = ma.transpose() * mb.transpose();
  return out;
}

Tensor colsum(const Tensor& m) {
  Tensor out({m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m.at(i, j);
  return out;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  require(a.value.same_shape(b.value), std::string(op) + ": shape mismatch " +
                                           a.value.shape_str() + " vs " + b.value.shape_str());
}

void require_2d(const char* op, const Var& v) {
  require(v.value.ndim() == 2,
          std::string(op) + ": expects a 2-D tensor, got shape " + v.value.shape_str());
}

}  // namespace

void set_grad_mutation(GradMutation m) { g_mutation = m; }
GradMutation grad_mutation() { return g_mutation; }

Var detach(const Var& v) { return Var{v.value, -1}; }
Var constant(Tensor value) { return Var{std::move(value), -1}; }

Tensor GradMap::at(const Var& v) const {
  if (!v.tracked()) {
    throw std::invalid_argument("GradMap::at: Var is constant/detached and has no gradient");
  }
  if (static_cast<std::size_t>(v.id) >= grads_.size()) {
    throw std::invalid_argument("GradMap::at: Var id " + std::to_string(v.id) +
                                " does not belong to the tape this map came from");
  }
  const auto& slot = grads_[static_cast<std::size_t>(v.id)];
  if (!slot) return Tensor::zeros_like(v.value);
  return *slot;
}

bool GradMap::touched(const Var& v) const {
  return v.tracked() && static_cast<std::size_t>(v.id) < grads_.size() &&
         grads_[static_cast<std::size_t>(v.id)].has_value();
}

Var Tape::push(std::string op, std::vector<int> parents, Tensor value, BackwardFn backward) {
  value.ensure_finite(op);
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(op), std::move(parents), value.shape(), std::move(backward)});
  return Var{std::move(value), id};
}

Var Tape::leaf(Tensor value) { return push("leaf", {}, std::move(value), nullptr); }

Var Tape::record(std::string op, std::span<const Var> parents, Tensor value, BackwardFn backward) {
  std::vector<int> ids;
  ids.reserve(parents.size());
  for (const Var& p : parents) ids.push_back(p.id);
  return push(std::move(op), std::move(ids), std::move(value), std::move(backward));
}

Var Tape::add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return push("add", {a.id, b.id}, a.value + b.value,
              [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var Tape::sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return push("sub", {a.id, b.id}, a.value - b.value,
              [](const Tensor& g) { return std::vector<Tensor>{g, g * -1.0}; });
}

Var Tape::mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor av = a.value, bv = b.value;
  return push("mul", {a.id, b.id}, av * bv, [av, bv](const Tensor& g) {
    return std::vector<Tensor>{g * bv, g * av};
  });
}

Var Tape::matmul(const Var& a, const Var& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  require(a.value.cols() == b.value.rows(), "matmul: inner dimensions differ, " +
                                                a.value.shape_str() + " @ " + b.value.shape_str());
  Tensor av = a.value, bv = b.value;
  return push("matmul", {a.id, b.id}, cafm::matmul(av, bv), [av, bv](const Tensor& g) {
    Tensor da = mm(g, false, bv, true);
    if (grad_mutation() == GradMutation::MatmulLeftGradSign) da = da * -1.0;
    return std::vector<Tensor>{std::move(da), mm(av, true, g, false)};
  });
}

Var Tape::affine(const Var& x, const Var& w, const Var& b) {
  require_2d("affine", x);
  require_2d("affine", w);
  require(b.value.ndim() == 1, "affine: bias must be 1-D, got shape " + b.value.shape_str());
  require(x.value.cols() == w.value.rows(), "affine: input/weight mismatch " +
                                                x.value.shape_str() + " @ " + w.value.shape_str());
  require(b.value.numel() == w.value.cols(), "affine: bias size " +
                                                 std::to_string(b.value.numel()) +
                                                 " != output width " +
                                                 std::to_string(w.value.cols()));
  Tensor out = cafm::matmul(x.value, w.value);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += b.value[j];
  Tensor xv = x.value, wv = w.value;
  return push("affine", {x.id, w.id, b.id}, std::move(out), [xv, wv](const Tensor& g) {
    return std::vector<Tensor>{mm(g, false, wv, true), mm(xv, true, g, false), colsum(g)};
  });
}

Var Tape::tanh(const Var& v) {
  Tensor out = v.value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  Tensor y = out;
  return push("tanh", {v.id}, std::move(out), [y](const Tensor& g) {
    Tensor d = g;
    const double scale = grad_mutation() == GradMutation::TanhGradScale ? 1.01 : 1.0;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= scale * (1.0 - y[i] * y[i]);
    return std::vector<Tensor>{std::move(d)};
  });
}

Var Tape::relu(const Var& v) {
  Tensor out = v.value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  Tensor x = v.value;
  return push("relu", {v.id}, std::move(out), [x](const Tensor& g) {
    Tensor d = g;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = x[i] > 0.0 ? d[i] : 0.0;
    return std::vector<Tensor>{std::move(d)};
  });
}

Var Tape::exp(const Var& v) {
  Tensor out = v.value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  Tensor y = out;
  return push("exp", {v.id}, std::move(out), [y](const Tensor& g) {
    return std::vector<Tensor>{g * y};
  });
}

Var Tape::log(const Var& v) {
  Tensor out = v.value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    require(out[i] > 0.0, "log: requires strictly positive entries, got " + std::to_string(out[i]));
    out[i] = std::log(out[i]);
  }
  Tensor x = v.value;
  return push("log", {v.id}, std::move(out), [x](const Tensor& g) {
    Tensor d = g;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] /= x[i];
    return std::vector<Tensor>{std::move(d)};
  });
}

Var Tape::square(const Var& v) {
  Tensor x = v.value;
  Tensor out = x * x;
  return push("square", {v.id}, std::move(out), [x](const Tensor& g) {
    Tensor d = g;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 2.0 * x[i];
    return std::vector<Tensor>{std::move(d)};
  });
}

Var Tape::sum(const Var& v) {
  std::vector<std::size_t> in_shape = v.value.shape();
  return push("sum", {v.id}, Tensor::scalar(cafm::sum(v.value)), [in_shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(in_shape, g[0])};
  });
}

Var Tape::mean(const Var& v) {
  const double n = static_cast<double>(v.value.numel());
  require(n > 0, "mean: empty tensor");
  std::vector<std::size_t> in_shape = v.value.shape();
  return push("mean", {v.id}, Tensor::scalar(cafm::sum(v.value) / n),
              [in_shape, n](const Tensor& g) {
                return std::vector<Tensor>{Tensor::full(in_shape, g[0] / n)};
              });
}

Var Tape::scalar_mul(const Var& v, double c) {
  return push("scalar_mul", {v.id}, v.value * c, [c](const Tensor& g) {
    return std::vector<Tensor>{g * c};
  });
}

Var Tape::reshape(const Var& v, std::vector<std::size_t> shape) {
  std::vector<std::size_t> in_shape = v.value.shape();
  return push("reshape", {v.id}, v.value.reshaped(shape), [in_shape](const Tensor& g) {
    return std::vector<Tensor>{g.reshaped(in_shape)};
  });
}

Var Tape::concat(std::span<const Var> parts, int axis) {
  require(!parts.empty(), "concat: needs at least one input");
  require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  std::vector<int> ids;
  std::vector<std::size_t> sizes;  // extent of each part along `axis`
  const std::size_t fixed = axis == 0 ? parts[0].value.cols() : parts[0].value.rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.value.ndim() == 2, "concat: expects 2-D tensors, got shape " + p.value.shape_str());
    const std::size_t f = axis == 0 ? p.value.cols() : p.value.rows();
    require(f == fixed, "concat: mismatched extents along the fixed axis (" + p.value.shape_str() +
                            ")");
    ids.push_back(p.id);
    sizes.push_back(axis == 0 ? p.value.rows() : p.value.cols());
    total += sizes.back();
  }
  Tensor out = axis == 0 ? Tensor({total, fixed}) : Tensor({fixed, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& p = parts[k].value;
    if (axis == 0) {
      std::copy(p.data(), p.data() + p.numel(), out.data() + offset * fixed);
    } else {
      for (std::size_t i = 0; i < fixed; ++i)
        for (std::size_t j = 0; j < sizes[k]; ++j) out.at(i, offset + j) = p.at(i, j);
    }
    offset += sizes[k];
  }
  return push("concat", std::move(ids), std::move(out),
              [axis, sizes, fixed](const Tensor& g) {
                std::vector<Tensor> grads;
                grads.reserve(sizes.size());
                std::size_t offset = 0;
                for (std::size_t s : sizes) {
                  Tensor part = axis == 0 ? Tensor({s, fixed}) : Tensor({fixed, s});
                  if (axis == 0) {
                    std::copy(g.data() + offset * fixed, g.data() + (offset + s) * fixed,
                              part.data());
                  } else {
                    for (std::size_t i = 0; i < fixed; ++i)
                      for (std::size_t j = 0; j < s; ++j) part.at(i, j) = g.at(i, offset + j);
                  }
                  grads.push_back(std::move(part));
                  offset += s;
                }
                return grads;
              });
}

Var Tape::slice(const Var& v, int axis, std::size_t start, std::size_t len) {
  require_2d("slice", v);
  require(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? v.value.rows() : v.value.cols();
  require(start + len <= extent, "slice: range [" + std::to_string(start) + ", " +
                                     std::to_string(start + len) + ") exceeds extent " +
                                     std::to_string(extent));
  const std::size_t r = v.value.rows(), c = v.value.cols();
  Tensor out = axis == 0 ? Tensor({len, c}) : Tensor({r, len});
  if (axis == 0) {
    std::copy(v.value.data() + start * c, v.value.data() + (start + len) * c, out.data());
  } else {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < len; ++j) out.at(i, j) = v.value.at(i, start + j);
  }
  std::vector<std::size_t> in_shape = v.value.shape();
  return push("slice", {v.id}, std::move(out),
              [axis, start, len, in_shape](const Tensor& g) {
                Tensor d(in_shape);
                const std::size_t c = in_shape[1];
                if (axis == 0) {
                  std::copy(g.data(), g.data() + g.numel(), d.data() + start * c);
                } else {
                  for (std::size_t i = 0; i < in_shape[0]; ++i)
                    for (std::size_t j = 0; j < len; ++j) d.at(i, start + j) = g.at(i, j);
                }
                return std::vector<Tensor>{std::move(d)};
              });
}

Var Tape::broadcast_rows(const Var& row, std::size_t n_rows) {
  require(row.value.ndim() == 1,
          "broadcast_rows: expects a 1-D tensor, got shape " + row.value.shape_str());
  const std::size_t d = row.value.numel();
  Tensor out({n_rows, d});
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = row.value[j];
  return push("broadcast_rows", {row.id}, std::move(out), [](const Tensor& g) {
    return std::vector<Tensor>{colsum(g)};
  });
}

Var Tape::broadcast_add(const Var& m, const Var& row) {
  require_2d("broadcast_add", m);
  require(row.value.ndim() == 1,
          "broadcast_add: row must be 1-D, got shape " + row.value.shape_str());
  require(m.value.cols() == row.value.numel(),
          "broadcast_add: width mismatch " + m.value.shape_str() + " + " + row.value.shape_str());
  Tensor out = m.value;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += row.value[j];
  return push("broadcast_add", {m.id, row.id}, std::move(out), [](const Tensor& g) {
    return std::vector<Tensor>{g, colsum(g)};
  });
}

Var Tape::gaussian_log_pdf(const Tensor& u, const Var& mu, const Var& sigma) {
  require(u.same_shape(mu.value), "gaussian_log_pdf: u shape " + u.shape_str() +
                                      " != mu shape " + mu.value.shape_str());
  const bool batched = u.ndim() == 2;
  require(batched || u.ndim() == 1, "gaussian_log_pdf: u must be 1-D or 2-D, got shape " +
                                        u.shape_str());
  const std::size_t rows = batched ? u.rows() : 1;
  const std::size_t d = batched ? u.cols() : u.numel();
  const bool sigma_shared = sigma.value.ndim() == 1;
  if (sigma_shared) {
    require(sigma.value.numel() == d, "gaussian_log_pdf: sigma size " +
                                          std::to_string(sigma.value.numel()) +
                                          " != coordinate count " + std::to_string(d));
  } else {
    require(sigma.value.same_shape(u), "gaussian_log_pdf: sigma shape " +
                                           sigma.value.shape_str() + " != u shape " +
                                           u.shape_str());
  }
  for (std::size_t i = 0; i < sigma.value.numel(); ++i) {
    require(sigma.value[i] > 0.0, "gaussian_log_pdf: sigma must be strictly positive, got " +
                                      std::to_string(sigma.value[i]));
  }

  constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))
  Tensor out = batched ? Tensor({rows}) : Tensor::scalar(0.0);
  auto sig = [&](std::size_t r, std::size_t j) {
    return sigma_shared ? sigma.value[j] : sigma.value[r * d + j];
  };
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double s = sig(r, j);
      const double z = (u[r * d + j] - mu.value[r * d + j]) / s;
      acc += -kLogSqrt2Pi - std::log(s) - 0.5 * z * z;
    }
    out[r] = acc;
  }

  Tensor uc = u, mv = mu.value, sv = sigma.value;
  return push("gaussian_log_pdf", {mu.id, sigma.id}, std::move(out),
              [uc, mv, sv, rows, d, sigma_shared](const Tensor& g) {
                Tensor dmu = Tensor::zeros_like(mv);
                Tensor dsig = Tensor::zeros_like(sv);
                const double flip =
                    grad_mutation() == GradMutation::GaussianSigmaGradSign ? -1.0 : 1.0;
                for (std::size_t r = 0; r < rows; ++r) {
                  const double gr = g[rows == 1 && g.numel() == 1 ? 0 : r];
                  for (std::size_t j = 0; j < d; ++j) {
                    const double s = sigma_shared ? sv[j] : sv[r * d + j];
                    const double diff = uc[r * d + j] - mv[r * d + j];
                    dmu[r * d + j] = gr * diff / (s * s);
                    const double ds = gr * (-1.0 / s + diff * diff / (s * s * s));
                    if (sigma_shared) {
                      dsig[j] += flip * ds;
                    } else {
                      dsig[r * d + j] = flip * ds;
                    }
                  }
                }
                return std::vector<Tensor>{std::move(dmu), std::move(dsig)};
              });
}

GradMap Tape::backward(const Var& loss) const {
  if (!loss.tracked()) {
    throw std::invalid_argument("backward: loss Var is constant/detached, nothing to differentiate");
  }
  if (static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw std::invalid_argument("backward: loss Var does not belong to this tape");
  }
  if (loss.value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                loss.value.shape_str());
  }
  GradMap gm;
  gm.grads_.resize(nodes_.size());
  gm.grads_[static_cast<std::size_t>(loss.id)] =
      Tensor::full(nodes_[static_cast<std::size_t>(loss.id)].out_shape, 1.0);

  for (int i = loss.id; i >= 0; --i) {
    const auto& slot = gm.grads_[static_cast<std::size_t>(i)];
    if (!slot) continue;
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward) continue;  // leaf
    std::vector<Tensor> contribs = node.backward(*slot);
    if (contribs.size() != node.parents.size()) {
      throw std::logic_error("backward of op '" + node.op + "' returned " +
                             std::to_string(contribs.size()) + " gradients for " +
                             std::to_string(node.parents.size()) + " parents");
    }
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const int p = node.parents[k];
      if (p < 0) continue;  // constant input
      auto& pslot = gm.grads_[static_cast<std::size_t>(p)];
      if (!pslot) {
        pslot = std::move(contribs[k]);
      } else {
        if (!pslot->same_shape(contribs[k])) {
          throw std::logic_error("backward of op '" + node.op + "' produced gradient shape " +
                                 contribs[k].shape_str() + " for parent of shape " +
                                 pslot->shape_str());
        }
        *pslot = *pslot + contribs[k];
      }
    }
  }
  return gm;
}

}  // namespace cafm::ad
