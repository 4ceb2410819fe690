#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heavytail/errors.hpp"
#include "heavytail/tensor.hpp"

namespace heavytail {

// Reverse-mode tape over dense double tensors.
//
// Nodes are appended in forward order, so every node's parents precede it
// and a single reverse sweep visits each node exactly once. Gradients
// accumulate (+=) into node buffers; leaves created with param() flush
// their gradient into the bound external tensor at the end of backward().
// Elementwise ops broadcast scalars against tensors; any other shape
// mismatch is an error.
class Tape {
 public:
  using Id = std::size_t;

  // Constant leaf; gradients never flow into it.
  Id input(Tensor value) {
    return push_(std::move(value), false, nullptr);
  }

  // Leaf bound to an external parameter. backward() accumulates the leaf
  // gradient into external.grad. The reference must outlive the tape use.
  Id param(Tensor& external) {
    Tensor copy(external.shape, external.data);
    const Id id = push_(std::move(copy), external.requires_grad, nullptr);
    if (external.requires_grad) bindings_.emplace_back(id, &external);
    return id;
  }

  const Tensor& value(Id id) const { return nodes_.at(id).t; }

  double scalar(Id id) const { return value(id).value(); }

  std::span<const double> grad(Id id) const {
    const Tensor& t = nodes_.at(id).t;
    if (!t.grad) {
      throw Error("grad: node has no gradient buffer (not differentiable "
                  "or backward not run)");
    }
    return *t.grad;
  }

  // ---- elementwise -------------------------------------------------------

  Id add(Id a, Id b) {
    const auto [sa, sb, n, shp] = pointwise_layout_(a, b, "add");
    const Tensor& ta = t_(a);
    const Tensor& tb = t_(b);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = ta.data[sa ? 0 : i] + tb.data[sb ? 0 : i];
    }
    const Id id = nodes_.size();
    auto back = [a, b, sa, sb, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      if (double* ga = tp.gptr_(a)) {
        if (sa) {
          for (double v : g) ga[0] += v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (double* gb = tp.gptr_(b)) {
        if (sb) {
          for (double v : g) gb[0] += v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    };
    return push_(Tensor(shp, std::move(out)), req_(a) || req_(b),
                 std::move(back));
  }

  Id sub(Id a, Id b) {
    const auto [sa, sb, n, shp] = pointwise_layout_(a, b, "sub");
    const Tensor& ta = t_(a);
    const Tensor& tb = t_(b);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = ta.data[sa ? 0 : i] - tb.data[sb ? 0 : i];
    }
    const Id id = nodes_.size();
    auto back = [a, b, sa, sb, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      if (double* ga = tp.gptr_(a)) {
        if (sa) {
          for (double v : g) ga[0] += v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (double* gb = tp.gptr_(b)) {
        if (sb) {
          for (double v : g) gb[0] -= v;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      }
    };
    return push_(Tensor(shp, std::move(out)), req_(a) || req_(b),
                 std::move(back));
  }

  Id mul(Id a, Id b) {
    const auto [sa, sb, n, shp] = pointwise_layout_(a, b, "mul");
    const Tensor& ta = t_(a);
    const Tensor& tb = t_(b);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = ta.data[sa ? 0 : i] * tb.data[sb ? 0 : i];
    }
    const Id id = nodes_.size();
    auto back = [a, b, sa, sb, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      const auto& av = tp.t_(a).data;
      const auto& bv = tp.t_(b).data;
      if (double* ga = tp.gptr_(a)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[sa ? 0 : i] += g[i] * bv[sb ? 0 : i];
        }
      }
      if (double* gb = tp.gptr_(b)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[sb ? 0 : i] += g[i] * av[sa ? 0 : i];
        }
      }
    };
    return push_(Tensor(shp, std::move(out)), req_(a) || req_(b),
                 std::move(back));
  }

  // out = c * a with a compile-time constant c (no tape node for c).
  Id scalar_mul(Id a, double c) {
    const Tensor& ta = t_(a);
    std::vector<double> out(ta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * ta.data[i];
    const Id id = nodes_.size();
    auto back = [a, c, id](Tape& tp) {
      if (double* ga = tp.gptr_(a)) {
        const auto g = tp.gspan_(id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
      }
    };
    return push_(Tensor(ta.shape, std::move(out)), req_(a), std::move(back));
  }

  Id scalar_add(Id a, double c) {
    const Tensor& ta = t_(a);
    std::vector<double> out(ta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta.data[i] + c;
    const Id id = nodes_.size();
    auto back = [a, id](Tape& tp) {
      if (double* ga = tp.gptr_(a)) {
        const auto g = tp.gspan_(id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    };
    return push_(Tensor(ta.shape, std::move(out)), req_(a), std::move(back));
  }

  // max(x, 0); the subgradient at 0 is 0, so an inactive hinge contributes
  // no gradient.
  Id relu(Id a) {
    const Tensor& ta = t_(a);
    std::vector<double> out(ta.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = ta.data[i] > 0.0 ? ta.data[i] : 0.0;
    }
    const Id id = nodes_.size();
    auto back = [a, id](Tape& tp) {
      if (double* ga = tp.gptr_(a)) {
        const auto g = tp.gspan_(id);
        const auto& av = tp.t_(a).data;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (av[i] > 0.0) ga[i] += g[i];
        }
      }
    };
    return push_(Tensor(ta.shape, std::move(out)), req_(a), std::move(back));
  }

  // ---- linear algebra ----------------------------------------------------

  Id matmul(Id a, Id b) {
    const Tensor& A = t_(a);
    const Tensor& B = t_(b);
    if (!A.is_matrix() || !B.is_matrix() || A.cols() != B.rows()) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) +
                       " x " + shape_str(B.shape));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A(i, p);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B(p, j);
      }
    }
    const Id id = nodes_.size();
    auto back = [a, b, m, k, n, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      const auto& Av = tp.t_(a).data;
      const auto& Bv = tp.t_(b).data;
      if (double* ga = tp.gptr_(a)) {
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              s += g[i * n + j] * Bv[p * n + j];
            }
            ga[i * k + p] += s;
          }
        }
      }
      if (double* gb = tp.gptr_(b)) {
        // dB = A^T * dC
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = Av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
              gb[p * n + j] += av * g[i * n + j];
            }
          }
        }
      }
    };
    return push_(Tensor({m, n}, std::move(out)), req_(a) || req_(b),
                 std::move(back));
  }

  // y = W x for W [m x n], x [n].
  Id matvec(Id w, Id x) {
    const Tensor& W = t_(w);
    const Tensor& X = t_(x);
    if (!W.is_matrix() || !X.is_vector() || W.cols() != X.size()) {
      throw ShapeError("matvec: incompatible shapes " + shape_str(W.shape) +
                       " x " + shape_str(X.shape));
    }
    const std::size_t m = W.rows(), n = W.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += W(i, j) * X.data[j];
      out[i] = s;
    }
    const Id id = nodes_.size();
    auto back = [w, x, m, n, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      const auto& Wv = tp.t_(w).data;
      const auto& Xv = tp.t_(x).data;
      if (double* gw = tp.gptr_(w)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += gi * Xv[j];
        }
      }
      if (double* gx = tp.gptr_(x)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          for (std::size_t j = 0; j < n; ++j) gx[j] += gi * Wv[i * n + j];
        }
      }
    };
    return push_(Tensor({m}, std::move(out)), req_(w) || req_(x),
                 std::move(back));
  }

  Id dot(Id a, Id b) {
    const Tensor& ta = t_(a);
    const Tensor& tb = t_(b);
    if (!ta.is_vector() || !tb.is_vector() || ta.size() != tb.size()) {
      throw ShapeError("dot: incompatible shapes " + shape_str(ta.shape) +
                       " . " + shape_str(tb.shape));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta.data[i] * tb.data[i];
    const Id id = nodes_.size();
    auto back = [a, b, id](Tape& tp) {
      const double g0 = tp.gspan_(id)[0];
      const auto& av = tp.t_(a).data;
      const auto& bv = tp.t_(b).data;
      if (double* ga = tp.gptr_(a)) {
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g0 * bv[i];
      }
      if (double* gb = tp.gptr_(b)) {
        for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += g0 * av[i];
      }
    };
    return push_(Tensor::scalar(s), req_(a) || req_(b), std::move(back));
  }

  // ---- normalization and similarity ---------------------------------------

  Id l2_normalize(Id v) {
    const Tensor& tv = t_(v);
    if (!tv.is_vector()) {
      throw ShapeError("l2_normalize: expected a vector, got " +
                       shape_str(tv.shape));
    }
    double sq = 0.0;
    for (double x : tv.data) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw DegenerateInputError("l2_normalize: zero vector");
    }
    std::vector<double> out(tv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tv.data[i] / norm;
    const Id id = nodes_.size();
    // du = (g - (g.u) u) / ||v||
    auto back = [v, norm, id](Tape& tp) {
      if (double* gv = tp.gptr_(v)) {
        const auto g = tp.gspan_(id);
        const auto& u = tp.t_(id).data;
        double gu = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gu += g[i] * u[i];
        for (std::size_t i = 0; i < g.size(); ++i) {
          gv[i] += (g[i] - gu * u[i]) / norm;
        }
      }
    };
    return push_(Tensor(tv.shape, std::move(out)), req_(v), std::move(back));
  }

  Id cosine_similarity(Id a, Id b) {
    return dot(l2_normalize(a), l2_normalize(b));
  }

  // Cosine classifier scores: out_i = tau * <W_i / ||W_i||, h / ||h||>.
  // Fused so a C-class head is one node instead of a per-row subgraph.
  Id cosine_scores(Id weights, Id features, Id temperature) {
    const Tensor& W = t_(weights);
    const Tensor& h = t_(features);
    const Tensor& tau = t_(temperature);
    if (!W.is_matrix() || !h.is_vector() || W.cols() != h.size()) {
      throw ShapeError("cosine_scores: weights " + shape_str(W.shape) +
                       " vs features " + shape_str(h.shape));
    }
    if (!tau.is_scalar()) {
      throw ShapeError("cosine_scores: temperature must be a scalar, got " +
                       shape_str(tau.shape));
    }
    const std::size_t c = W.rows(), d = W.cols();
    double hsq = 0.0;
    for (double x : h.data) hsq += x * x;
    const double hnorm = std::sqrt(hsq);
    if (hnorm == 0.0) {
      throw DegenerateInputError("cosine_scores: zero feature vector");
    }
    std::vector<double> hn(d);
    for (std::size_t j = 0; j < d; ++j) hn[j] = h.data[j] / hnorm;
    std::vector<double> wn(c * d);
    std::vector<double> wnorm(c);
    std::vector<double> sim(c);
    for (std::size_t i = 0; i < c; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += W(i, j) * W(i, j);
      wnorm[i] = std::sqrt(sq);
      if (wnorm[i] == 0.0) {
        throw DegenerateInputError("cosine_scores: weight row " +
                                   std::to_string(i) + " is zero");
      }
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        wn[i * d + j] = W(i, j) / wnorm[i];
        s += wn[i * d + j] * hn[j];
      }
      sim[i] = s;
    }
    const double t0 = tau.value();
    std::vector<double> out(c);
    for (std::size_t i = 0; i < c; ++i) out[i] = t0 * sim[i];
    const Id id = nodes_.size();
    auto back = [weights, features, temperature, hn = std::move(hn),
                 wn = std::move(wn), wnorm = std::move(wnorm),
                 sim = std::move(sim), hnorm, t0, c, d, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      if (double* gt = tp.gptr_(temperature)) {
        double s = 0.0;
        for (std::size_t i = 0; i < c; ++i) s += g[i] * sim[i];
        gt[0] += s;
      }
      if (double* gh = tp.gptr_(features)) {
        // accumulate v = tau * sum_i g_i wn_i, then project off hn
        std::vector<double> v(d, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
          const double gi = t0 * g[i];
          for (std::size_t j = 0; j < d; ++j) v[j] += gi * wn[i * d + j];
        }
        double vh = 0.0;
        for (std::size_t j = 0; j < d; ++j) vh += v[j] * hn[j];
        for (std::size_t j = 0; j < d; ++j) {
          gh[j] += (v[j] - vh * hn[j]) / hnorm;
        }
      }
      if (double* gw = tp.gptr_(weights)) {
        for (std::size_t i = 0; i < c; ++i) {
          const double coef = t0 * g[i] / wnorm[i];
          for (std::size_t j = 0; j < d; ++j) {
            gw[i * d + j] += coef * (hn[j] - sim[i] * wn[i * d + j]);
          }
        }
      }
    };
    return push_(Tensor({c}, std::move(out)),
                 req_(weights) || req_(features) || req_(temperature),
                 std::move(back));
  }

  // ---- reductions and loss ------------------------------------------------

  Id sum(Id a) {
    const Tensor& ta = t_(a);
    double s = 0.0;
    for (double x : ta.data) s += x;
    const Id id = nodes_.size();
    auto back = [a, id](Tape& tp) {
      if (double* ga = tp.gptr_(a)) {
        const double g0 = tp.gspan_(id)[0];
        for (std::size_t i = 0; i < tp.t_(a).size(); ++i) ga[i] += g0;
      }
    };
    return push_(Tensor::scalar(s), req_(a), std::move(back));
  }

  Id mean(Id a) {
    const Tensor& ta = t_(a);
    if (ta.size() == 0) throw ParameterError("mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(ta.size());
    double s = 0.0;
    for (double x : ta.data) s += x;
    const Id id = nodes_.size();
    auto back = [a, inv, id](Tape& tp) {
      if (double* ga = tp.gptr_(a)) {
        const double g0 = tp.gspan_(id)[0] * inv;
        for (std::size_t i = 0; i < tp.t_(a).size(); ++i) ga[i] += g0;
      }
    };
    return push_(Tensor::scalar(s * inv), req_(a), std::move(back));
  }

  // Sum of same-shape nodes (used for batch reduction).
  Id add_n(const std::vector<Id>& ids) {
    if (ids.empty()) throw ParameterError("add_n: no terms");
    const Tensor& first = t_(ids[0]);
    std::vector<double> out(first.size(), 0.0);
    bool needs_grad = false;
    for (Id a : ids) {
      const Tensor& ta = t_(a);
      if (!same_shape(ta, first)) {
        throw ShapeError("add_n: shapes " + shape_str(first.shape) + " vs " +
                         shape_str(ta.shape));
      }
      needs_grad = needs_grad || req_(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += ta.data[i];
    }
    const Id id = nodes_.size();
    auto back = [ids, id](Tape& tp) {
      const auto g = tp.gspan_(id);
      for (Id a : ids) {
        if (double* ga = tp.gptr_(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
    };
    return push_(Tensor(first.shape, std::move(out)), needs_grad,
                 std::move(back));
  }

  Id mean_of(const std::vector<Id>& ids) {
    return scalar_mul(add_n(ids), 1.0 / static_cast<double>(ids.size()));
  }

  // Numerically stable -log softmax(logits)[target].
  Id softmax_cross_entropy(Id logits, std::size_t target) {
    const Tensor& tl = t_(logits);
    if (!tl.is_vector()) {
      throw ShapeError("softmax_cross_entropy: logits must be a vector, got " +
                       shape_str(tl.shape));
    }
    const std::size_t c = tl.size();
    if (target >= c) {
      throw IndexError("softmax_cross_entropy: target " +
                       std::to_string(target) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double x : tl.data) m = std::max(m, x);
    std::vector<double> probs(c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[j] = std::exp(tl.data[j] - m);
      z += probs[j];
    }
    const double loss = std::log(z) + m - tl.data[target];
    for (std::size_t j = 0; j < c; ++j) probs[j] /= z;
    const Id id = nodes_.size();
    auto back = [logits, target, probs = std::move(probs), id](Tape& tp) {
      if (double* gl = tp.gptr_(logits)) {
        const double g0 = tp.gspan_(id)[0];
        for (std::size_t j = 0; j < probs.size(); ++j) {
          gl[j] += g0 * (probs[j] - (j == target ? 1.0 : 0.0));
        }
      }
    };
    return push_(Tensor::scalar(loss), req_(logits), std::move(back));
  }

  // ---- backward -----------------------------------------------------------

  // Seeds d(root)/d(root) = 1, sweeps the tape once in reverse, then
  // flushes leaf gradients into their bound parameter tensors.
  void backward(Id root) {
    Node& r = nodes_.at(root);
    if (!r.t.is_scalar()) {
      throw ShapeError("backward: root is " + shape_str(r.t.shape) +
                       ", expected a scalar");
    }
    if (!r.t.requires_grad) {
      throw Error("backward: root does not depend on any differentiable leaf");
    }
    (*r.t.grad)[0] += 1.0;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.t.requires_grad) n.back(*this);
    }
    for (auto& [id, ext] : bindings_) {
      ext->ensure_grad();
      const auto& g = *nodes_[id].t.grad;
      for (std::size_t k = 0; k < g.size(); ++k) (*ext->grad)[k] += g[k];
    }
  }

  void clear() {
    nodes_.clear();
    bindings_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor t;
    std::function<void(Tape&)> back;  // null for leaves
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Id, Tensor*>> bindings_;

  Id push_(Tensor t, bool needs_grad, std::function<void(Tape&)> back) {
    t.requires_grad = needs_grad;
    if (needs_grad) t.grad.emplace(t.data.size(), 0.0);
    nodes_.push_back(Node{std::move(t), needs_grad ? std::move(back) : nullptr});
    return nodes_.size() - 1;
  }

  const Tensor& t_(Id id) const { return nodes_[id].t; }
  bool req_(Id id) const { return nodes_[id].t.requires_grad; }

  double* gptr_(Id id) {
    auto& g = nodes_[id].t.grad;
    return g ? g->data() : nullptr;
  }

  std::span<const double> gspan_(Id id) { return *nodes_[id].t.grad; }

  struct PointwiseLayout {
    bool sa;
    bool sb;
    std::size_t n;
    Shape shape;
  };

  PointwiseLayout pointwise_layout_(Id a, Id b, const char* op) const {
    const Tensor& ta = t_(a);
    const Tensor& tb = t_(b);
    const bool sa = ta.is_scalar() && !tb.is_scalar();
    const bool sb = tb.is_scalar() && !ta.is_scalar();
    if (!sa && !sb && !same_shape(ta, tb)) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(ta.shape) +
                       " and " + shape_str(tb.shape) + " do not match");
    }
    const Tensor& ref = sa ? tb : ta;
    return {sa, sb, ref.size(), ref.shape};
  }
};

// Plain SGD update over parameter tensors: w -= lr * (grad + wd * w), with
// optional momentum buffer. Parameters with no populated gradient are
// treated as having zero gradient.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

inline void sgd_step(const std::vector<Tensor*>& params, double lr,
                     double momentum = 0.0, double weight_decay = 0.0,
                     SgdState* state = nullptr) {
  if (momentum != 0.0 && state == nullptr) {
    throw ParameterError("sgd_step: momentum requires an SgdState");
  }
  if (state && state->velocity.size() != params.size()) {
    state->velocity.assign(params.size(), {});
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    if (!w.grad) continue;
    const auto& g = *w.grad;
    if (momentum != 0.0) {
      auto& v = state->velocity[p];
      if (v.size() != w.size()) v.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double ge = g[i] + weight_decay * w.data[i];
        v[i] = momentum * v[i] + ge;
        w.data[i] -= lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        w.data[i] -= lr * (g[i] + weight_decay * w.data[i]);
      }
    }
  }
}

}  // namespace heavytail
