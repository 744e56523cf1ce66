#include "cafm/constraints.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace cafm {

namespace {

void check_point(const ConstraintSet& c, const Tensor& x, const char* what) {
  if (x.ndim() != 1 || x.numel() != constraint_dim(c)) {
    throw std::invalid_argument(std::string(what) + ": point shape " + x.shape_str() +
                                " does not match constraint dimension " +
                                std::to_string(constraint_dim(c)));
  }
}

void check_batch(const ConstraintSet& c, const Tensor& xs, const char* what) {
  if (xs.ndim() != 2 || xs.cols() != constraint_dim(c)) {
    throw std::invalid_argument(std::string(what) + ": batch shape " + xs.shape_str() +
                                " does not match constraint dimension " +
                                std::to_string(constraint_dim(c)));
  }
}

double box_distance(const Tensor& lo, const Tensor& hi, const double* x, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double v = 0.0;
    if (x[j] < lo[j]) v = lo[j] - x[j];
    else if (x[j] > hi[j]) v = x[j] - hi[j];
    acc += v * v;
  }
  return std::sqrt(acc);
}

void box_gradient(const Tensor& lo, const Tensor& hi, const double* x, std::size_t d,
                  double* out) {
  const double dist = box_distance(lo, hi, x, d);
  if (dist == 0.0) {
    std::fill(out, out + d, 0.0);
    return;
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (x[j] < lo[j]) out[j] = (x[j] - lo[j]) / dist;
    else if (x[j] > hi[j]) out[j] = (x[j] - hi[j]) / dist;
    else out[j] = 0.0;
  }
}

// The two component boxes of TwoBoxes, positive quadrant first.
std::pair<Box, Box> two_boxes_parts(const TwoBoxes& tb) {
  return {make_box({tb.inner, tb.inner}, {tb.outer, tb.outer}),
          make_box({-tb.outer, -tb.outer}, {-tb.inner, -tb.inner})};
}

double hyperplane_residual(const Hyperplane& h, const double* x) {
  double r = h.offset;
  for (std::size_t j = 0; j < h.normal.numel(); ++j) r += h.normal[j] * x[j];
  return r;
}

}  // namespace

Box make_box(std::vector<double> lo, std::vector<double> hi) {
  if (lo.size() != hi.size() || lo.empty()) {
    throw std::invalid_argument("make_box: lo and hi must be non-empty and the same size");
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (std::isnan(lo[i]) || std::isnan(hi[i]) || lo[i] > hi[i]) {
      throw std::invalid_argument("make_box: requires lo <= hi in every coordinate");
    }
  }
  const std::size_t d = lo.size();
  return Box{Tensor({d}, std::move(lo)), Tensor({d}, std::move(hi))};
}

ExternalOracle make_external_oracle(std::string command, std::size_t dim, double timeout_sec) {
  if (dim == 0) throw std::invalid_argument("make_external_oracle: dim must be positive");
  if (command.empty()) throw std::invalid_argument("make_external_oracle: empty command");
  ExternalOracle o;
  o.command = std::move(command);
  o.dim = dim;
  o.timeout_sec = timeout_sec;
  return o;
}

std::size_t constraint_dim(const ConstraintSet& c) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) return s.lo.numel();
        else if constexpr (std::is_same_v<T, TwoBoxes>) return 2;
        else if constexpr (std::is_same_v<T, L2Ball>) return s.dim;
        else if constexpr (std::is_same_v<T, Hyperplane>) return s.normal.numel();
        else return s.dim;
      },
      c);
}

std::string constraint_name(const ConstraintSet& c) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) return "box";
        else if constexpr (std::is_same_v<T, TwoBoxes>) return "two_boxes";
        else if constexpr (std::is_same_v<T, L2Ball>) return "l2_ball";
        else if constexpr (std::is_same_v<T, Hyperplane>) return "hyperplane";
        else return "external_oracle";
      },
      c);
}

bool distance_available(const ConstraintSet& c) {
  return !std::holds_alternative<ExternalOracle>(c);
}

bool contains(const ConstraintSet& c, const Tensor& x) {
  check_point(c, x, "contains");
  if (std::holds_alternative<ExternalOracle>(c)) {
    return contains_batch(c, x.reshaped({1, x.numel()}))[0] != 0;
  }
  return std::visit(
      [&](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          for (std::size_t j = 0; j < x.numel(); ++j) {
            if (x[j] < s.lo[j] || x[j] > s.hi[j]) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, TwoBoxes>) {
          const double a1 = std::abs(x[0]), a2 = std::abs(x[1]);
          return a1 >= s.inner && a1 <= s.outer && a2 >= s.inner && a2 <= s.outer &&
                 x[0] * x[1] > 0.0;
        } else if constexpr (std::is_same_v<T, L2Ball>) {
          return norm2(x) <= s.radius;
        } else if constexpr (std::is_same_v<T, Hyperplane>) {
          return std::abs(hyperplane_residual(s, x.data())) <= s.tol;
        } else {
          return false;  // unreachable: oracle handled above
        }
      },
      c);
}

double set_distance(const ConstraintSet& c, const Tensor& x) {
  check_point(c, x, "set_distance");
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          return box_distance(s.lo, s.hi, x.data(), x.numel());
        } else if constexpr (std::is_same_v<T, TwoBoxes>) {
          auto [pos, neg] = two_boxes_parts(s);
          return std::min(box_distance(pos.lo, pos.hi, x.data(), 2),
                          box_distance(neg.lo, neg.hi, x.data(), 2));
        } else if constexpr (std::is_same_v<T, L2Ball>) {
          return std::max(0.0, norm2(x) - s.radius);
        } else if constexpr (std::is_same_v<T, Hyperplane>) {
          return std::abs(hyperplane_residual(s, x.data())) / norm2(s.normal);
        } else {
          throw std::runtime_error(
              "set_distance: distance is unavailable for an external membership oracle");
        }
      },
      c);
}

Tensor set_distance_gradient(const ConstraintSet& c, const Tensor& x) {
  check_point(c, x, "set_distance_gradient");
  const std::size_t d = x.numel();
  Tensor g({d});
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          box_gradient(s.lo, s.hi, x.data(), d, g.data());
        } else if constexpr (std::is_same_v<T, TwoBoxes>) {
          auto [pos, neg] = two_boxes_parts(s);
          const double dp = box_distance(pos.lo, pos.hi, x.data(), 2);
          const double dn = box_distance(neg.lo, neg.hi, x.data(), 2);
          if (dp <= dn) box_gradient(pos.lo, pos.hi, x.data(), 2, g.data());
          else box_gradient(neg.lo, neg.hi, x.data(), 2, g.data());
        } else if constexpr (std::is_same_v<T, L2Ball>) {
          const double r = norm2(x);
          if (r > s.radius) {
            for (std::size_t j = 0; j < d; ++j) g[j] = x[j] / r;
          }
        } else if constexpr (std::is_same_v<T, Hyperplane>) {
          const double res = hyperplane_residual(s, x.data());
          if (res != 0.0) {
            const double nn = norm2(s.normal);
            const double sign = res > 0.0 ? 1.0 : -1.0;
            for (std::size_t j = 0; j < d; ++j) g[j] = sign * s.normal[j] / nn;
          }
        } else {
          throw std::runtime_error(
              "set_distance_gradient: unavailable for an external membership oracle");
        }
      },
      c);
  return g;
}

ad::Var set_distance_var(ad::Tape& tape, const ConstraintSet& c, const ad::Var& x) {
  if (!distance_available(c)) {
    throw std::runtime_error("set_distance_var: distance is unavailable for an external oracle");
  }
  const bool batched = x.value.ndim() == 2;
  if (batched) check_batch(c, x.value, "set_distance_var");
  else check_point(c, x.value, "set_distance_var");

  const std::size_t rows = batched ? x.value.rows() : 1;
  const std::size_t d = constraint_dim(c);
  Tensor value = batched ? Tensor({rows}) : Tensor::scalar(0.0);
  Tensor grads({rows, d});
  for (std::size_t r = 0; r < rows; ++r) {
    Tensor point({d});
    std::copy(x.value.data() + r * d, x.value.data() + (r + 1) * d, point.data());
    value[r] = set_distance(c, point);
    grads.set_row(r, set_distance_gradient(c, point));
  }

  std::vector<std::size_t> in_shape = x.value.shape();
  std::vector<ad::Var> parents = {x};
  return tape.record("set_distance", parents, std::move(value),
                     [grads, rows, d, in_shape](const Tensor& g) {
                       Tensor dx(in_shape);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double gr = g[g.numel() == 1 ? 0 : r];
                         for (std::size_t j = 0; j < d; ++j) {
                           dx[r * d + j] = gr * grads.at(r, j);
                         }
                       }
                       return std::vector<Tensor>{std::move(dx)};
                     });
}

// --- external oracle subprocess ---------------------------------------------

class OracleProcess {
 public:
  explicit OracleProcess(const std::string& command) : command_(command) {}
  ~OracleProcess() { stop(); }

  OracleProcess(const OracleProcess&) = delete;
  OracleProcess& operator=(const OracleProcess&) = delete;

  void ensure_running() {
    if (pid_ > 0 && ::waitpid(pid_, nullptr, WNOHANG) == 0) return;  // still alive
    stop();
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
      throw std::runtime_error("oracle: socketpair failed: " + std::string(std::strerror(errno)));
    }
    pid_t pid = ::fork();
    if (pid < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw std::runtime_error("oracle: fork failed: " + std::string(std::strerror(errno)));
    }
    if (pid == 0) {
      ::setpgid(0, 0);  // own process group so stop() can kill sh and its children
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      std::perror("oracle exec");
      ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
    pid_ = pid;
    buf_.clear();
  }

  void stop() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    if (pid_ > 0) {
      ::kill(-pid_, SIGKILL);  // whole process group (sh plus its children)
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
    buf_.clear();
  }

  // Sends `request` and reads `n_lines` reply lines within `timeout_sec`.
  // Throws std::runtime_error on EOF/timeout/write failure.
  std::vector<std::string> roundtrip(const std::string& request, std::size_t n_lines,
                                     double timeout_sec) {
    ensure_running();
    std::size_t sent = 0;
    while (sent < request.size()) {
      ssize_t w = ::send(fd_, request.data() + sent, request.size() - sent, MSG_NOSIGNAL);
      if (w <= 0) throw std::runtime_error("oracle: write failed (pipe closed?)");
      sent += static_cast<std::size_t>(w);
    }

    std::vector<std::string> lines;
    while (lines.size() < n_lines) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        lines.push_back(buf_.substr(0, nl));
        buf_.erase(0, nl + 1);
        continue;
      }
      struct pollfd pfd {fd_, POLLIN, 0};
      int pr = ::poll(&pfd, 1, static_cast<int>(timeout_sec * 1000));
      if (pr == 0) throw std::runtime_error("oracle: timed out waiting for reply");
      if (pr < 0) throw std::runtime_error("oracle: poll failed: " + std::string(std::strerror(errno)));
      char chunk[4096];
      ssize_t r = ::read(fd_, chunk, sizeof(chunk));
      if (r <= 0) throw std::runtime_error("oracle: subprocess closed its output");
      buf_.append(chunk, static_cast<std::size_t>(r));
    }
    return lines;
  }

  const std::string& pending() const { return buf_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buf_;
};

namespace {

std::string format_oracle_request(const Tensor& xs) {
  std::string out;
  char num[64];
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    for (std::size_t j = 0; j < xs.cols(); ++j) {
      std::snprintf(num, sizeof(num), "%.17g", xs.at(i, j));
      if (j) out += ',';
      out += num;
    }
    out += '\n';
  }
  return out;
}

std::vector<char> oracle_contains_batch(const ExternalOracle& oracle, const Tensor& xs) {
  if (!oracle.process) {
    oracle.process = std::make_shared<OracleProcess>(oracle.command);
  }
  const std::string request = format_oracle_request(xs);
  std::string last_error, last_reply;
  for (int attempt = 1; attempt <= oracle.max_attempts; ++attempt) {
    try {
      std::vector<std::string> lines =
          oracle.process->roundtrip(request, xs.rows(), oracle.timeout_sec);
      std::vector<char> result(xs.rows());
      for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string t = lines[i];
        while (!t.empty() && (t.back() == '\r' || t.back() == ' ')) t.pop_back();
        if (t == "0") result[i] = 0;
        else if (t == "1") result[i] = 1;
        else throw std::runtime_error("oracle: malformed reply line '" + lines[i] + "'");
      }
      return result;
    } catch (const std::runtime_error& e) {
      last_error = e.what();
      last_reply = oracle.process->pending();
      oracle.process->stop();  // respawn on next attempt
    }
  }
  throw OracleError("external oracle '" + oracle.command + "' failed after " +
                        std::to_string(oracle.max_attempts) + " attempts: " + last_error,
                    oracle.max_attempts, last_reply);
}

}  // namespace

std::vector<char> contains_batch(const ConstraintSet& c, const Tensor& xs) {
  check_batch(c, xs, "contains_batch");
  if (const auto* oracle = std::get_if<ExternalOracle>(&c)) {
    return oracle_contains_batch(*oracle, xs);
  }
  std::vector<char> result(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    result[i] = contains(c, xs.row(i)) ? 1 : 0;
  }
  return result;
}

}  // namespace cafm
