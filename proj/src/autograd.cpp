#include "xpd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "xpd/raster.hpp"

namespace xpd::ag {

namespace {

thread_local bool g_grad_enabled = true;

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Wraps `value` in a node; records parents and the backward closure only if
// some parent needs a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (Var& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(bw);
    }
  }
  return Var(std::move(node));
}

inline Node& parent(Node& self, size_t i) { return *self.parents[i]; }

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (g.shape() != value.shape())
    throw ShapeError("accumulate: gradient shape " + shape_str(g.shape()) + " for value " + shape_str(value.shape()));
  if (!has_grad) {
    grad = g;
    has_grad = true;
  } else {
    grad.add_(g);
  }
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->has_grad) return node_->grad;
  return Tensor(node_->value.shape());
}

void backward(const Var& root) {
  if (root.value().numel() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor value) { return Var(std::move(value), false); }
Var scalar(double v) { return Var(Tensor(Shape{}, v), false); }

// --- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.axpy_(-1.0, b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    parent(self, 0).accumulate(self.grad);
    Tensor neg = self.grad;
    for (double& v : neg.values()) v = -v;
    parent(self, 1).accumulate(neg);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor g(self.grad.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * pb.value[i];
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Tensor g(self.grad.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * pa.value[i];
      pb.accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.values()) v *= s;
    parent(self, 0).accumulate(g);
  });
}

Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v += c;
  return make_result(std::move(out), {a}, [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor g = self.grad;
    const Tensor& in = parent(self, 0).value;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (in[i] <= 0.0) g[i] = 0.0;
    parent(self, 0).accumulate(g);
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = sigmoid_scalar(v);
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double s = self.value[i];
      g[i] *= s * (1.0 - s);
    }
    parent(self, 0).accumulate(g);
  });
}

Var softplus(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = softplus_scalar(v);
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor g = self.grad;
    const Tensor& in = parent(self, 0).value;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= sigmoid_scalar(in[i]);
    parent(self, 0).accumulate(g);
  });
}

// --- reductions ------------------------------------------------------------

Var sum_all(const Var& x) {
  return make_result(Tensor(Shape{}, x.value().sum()), {x}, [](Node& self) {
    parent(self, 0).accumulate(Tensor(parent(self, 0).value.shape(), self.grad[0]));
  });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(std::max<int64_t>(x.value().numel(), 1));
  return make_result(Tensor(Shape{}, x.value().sum() / n), {x}, [n](Node& self) {
    parent(self, 0).accumulate(Tensor(parent(self, 0).value.shape(), self.grad[0] / n));
  });
}

Var dot_const(const Var& x, const Tensor& weights) {
  require_same_shape(x.value(), weights, "dot_const");
  double acc = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
  return make_result(Tensor(Shape{}, acc), {x}, [weights](Node& self) {
    Tensor g = weights;
    for (double& v : g.values()) v *= self.grad[0];
    parent(self, 0).accumulate(g);
  });
}

// --- feature-block ops -----------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g) {
  Tensor out = kernels::omp::conv2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr, g);
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result(std::move(out), std::move(parents), [g, has_bias](Node& self) {
    Node& in = parent(self, 0);
    Node& w = parent(self, 1);
    if (in.requires_grad)
      in.accumulate(kernels::omp::conv2d_backward_input(self.grad, w.value, in.value.shape(), g));
    Node* b = has_bias ? &parent(self, 2) : nullptr;
    const bool need_w = w.requires_grad;
    const bool need_b = b && b->requires_grad;
    if (need_w || need_b) {
      Tensor gw(w.value.shape());
      Tensor gb = b ? Tensor(b->value.shape()) : Tensor();
      kernels::omp::conv2d_backward_params(self.grad, in.value, gw, need_b ? &gb : nullptr, g);
      if (need_w) w.accumulate(gw);
      if (need_b) b->accumulate(gb);
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require_rank(x.value(), 4, "group_norm");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups) throw ConfigError("group_norm: channels not divisible by groups");
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw ShapeError("group_norm: affine parameter size mismatch");
  const int64_t cg = c / groups;
  const int64_t m = cg * hw;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  Tensor inv_std(Shape{n, groups});
  const double* xv = x.value().data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < n; ++b)
    for (int64_t gi = 0; gi < groups; ++gi) {
      const int64_t base = (b * c + gi * cg) * hw;
      double mean = 0.0;
      for (int64_t i = 0; i < m; ++i) mean += xv[base + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (int64_t i = 0; i < m; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * groups + gi] = is;
      for (int64_t ch = 0; ch < cg; ++ch) {
        const int64_t cc = gi * cg + ch;
        const double ga = gamma.value()[cc], be = beta.value()[cc];
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = base + ch * hw + i;
          const double xh = (xv[idx] - mean) * is;
          xhat[idx] = xh;
          out[idx] = ga * xh + be;
        }
      }
    }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), groups, cg, hw, m](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       const int64_t n = self.value.dim(0), c = self.value.dim(1);
                       const Tensor& dy = self.grad;
                       if (pg.requires_grad || pb.requires_grad) {
                         Tensor dg(pg.value.shape()), db(pb.value.shape());
                         for (int64_t ch = 0; ch < c; ++ch) {
                           double sg = 0.0, sb = 0.0;
                           for (int64_t b = 0; b < n; ++b) {
                             const int64_t base = (b * c + ch) * hw;
                             for (int64_t i = 0; i < hw; ++i) {
                               sg += dy[base + i] * xhat[base + i];
                               sb += dy[base + i];
                             }
                           }
                           dg[ch] = sg;
                           db[ch] = sb;
                         }
                         pg.accumulate(dg);
                         pb.accumulate(db);
                       }
                       if (!px.requires_grad) return;
                       Tensor dx(px.value.shape());
#pragma omp parallel for collapse(2) schedule(static)
                       for (int64_t b = 0; b < n; ++b)
                         for (int64_t gi = 0; gi < groups; ++gi) {
                           const int64_t base = (b * c + gi * cg) * hw;
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (int64_t ch = 0; ch < cg; ++ch) {
                             const double ga = pg.value[gi * cg + ch];
                             for (int64_t i = 0; i < hw; ++i) {
                               const int64_t idx = base + ch * hw + i;
                               const double d = dy[idx] * ga;
                               mean_d += d;
                               mean_dx += d * xhat[idx];
                             }
                           }
                           mean_d /= static_cast<double>(m);
                           mean_dx /= static_cast<double>(m);
                           const double is = inv_std[b * groups + gi];
                           for (int64_t ch = 0; ch < cg; ++ch) {
                             const double ga = pg.value[gi * cg + ch];
                             for (int64_t i = 0; i < hw; ++i) {
                               const int64_t idx = base + ch * hw + i;
                               dx[idx] = is * (dy[idx] * ga - mean_d - xhat[idx] * mean_dx);
                             }
                           }
                         }
                       px.accumulate(dx);
                     });
}

Var upsample_nearest(const Var& x, int factor) {
  require_rank(x.value(), 4, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor < 1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  Tensor out(Shape{n, c, oh, ow});
  const double* in = x.value().data();
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] = in[(p * h + y / factor) * w + xx / factor];
  return make_result(std::move(out), {x}, [factor, h, w](Node& self) {
    Node& px = parent(self, 0);
    Tensor g(px.value.shape());
    const int64_t planes = g.dim(0) * g.dim(1), oh = h * factor, ow = w * factor;
    for (int64_t p = 0; p < planes; ++p)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx)
          g[(p * h + y / factor) * w + xx / factor] += self.grad[(p * oh + y) * ow + xx];
    px.accumulate(g);
  });
}

namespace {

struct LinearTap {
  int64_t i0, i1;
  double w0, w1;
};

// Half-pixel source coordinates, clamped at the low edge (align_corners = false).
std::vector<LinearTap> bilinear_taps(int64_t in, int64_t out, int factor) {
  std::vector<LinearTap> taps(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(src), in - 1);
    const int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
    const double l1 = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
  require_rank(x.value(), 4, "upsample_bilinear");
  if (factor < 1) throw ConfigError("upsample_bilinear: factor < 1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  auto ty = bilinear_taps(h, oh, factor);
  auto tx = bilinear_taps(w, ow, factor);
  Tensor out(Shape{n, c, oh, ow});
  const double* in = x.value().data();
  for (int64_t p = 0; p < n * c; ++p) {
    const double* ip = in + p * h * w;
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx) {
        const LinearTap& a = ty[y];
        const LinearTap& b = tx[xx];
        out[(p * oh + y) * ow + xx] = a.w0 * (b.w0 * ip[a.i0 * w + b.i0] + b.w1 * ip[a.i0 * w + b.i1]) +
                                      a.w1 * (b.w0 * ip[a.i1 * w + b.i0] + b.w1 * ip[a.i1 * w + b.i1]);
      }
  }
  return make_result(std::move(out), {x}, [ty = std::move(ty), tx = std::move(tx), h, w](Node& self) {
    Node& px = parent(self, 0);
    Tensor g(px.value.shape());
    const int64_t planes = g.dim(0) * g.dim(1);
    const int64_t oh = static_cast<int64_t>(ty.size()), ow = static_cast<int64_t>(tx.size());
    for (int64_t p = 0; p < planes; ++p) {
      double* gp = g.data() + p * h * w;
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          const double go = self.grad[(p * oh + y) * ow + xx];
          const LinearTap& a = ty[y];
          const LinearTap& b = tx[xx];
          gp[a.i0 * w + b.i0] += go * a.w0 * b.w0;
          gp[a.i0 * w + b.i1] += go * a.w0 * b.w1;
          gp[a.i1 * w + b.i0] += go * a.w1 * b.w0;
          gp[a.i1 * w + b.i1] += go * a.w1 * b.w1;
        }
    }
    px.accumulate(g);
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  require_rank(parts[0].value(), 4, "concat_channels");
  int64_t total_c = 0;
  std::vector<int64_t> chans;
  for (const Var& p : parts) {
    require_rank(p.value(), 4, "concat_channels");
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3])
      throw ShapeError("concat_channels: incompatible shapes " + shape_str(s0) + " vs " + shape_str(p.shape()));
    chans.push_back(p.dim(1));
    total_c += p.dim(1);
  }
  const int64_t n = s0[0], hw = s0[2] * s0[3];
  Tensor out(Shape{n, total_c, s0[2], s0[3]});
  int64_t off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    for (int64_t b = 0; b < n; ++b)
      std::copy_n(parts[k].value().data() + b * chans[k] * hw, chans[k] * hw,
                  out.data() + (b * total_c + off) * hw);
    off += chans[k];
  }
  return make_result(std::move(out), parts, [chans, total_c, n, hw](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < chans.size(); ++k) {
      Node& p = parent(self, k);
      if (p.requires_grad) {
        Tensor g(p.value.shape());
        for (int64_t b = 0; b < n; ++b)
          std::copy_n(self.grad.data() + (b * total_c + off) * hw, chans[k] * hw, g.data() + b * chans[k] * hw);
        p.accumulate(g);
      }
      off += chans[k];
    }
  });
}

Var append_coords(const Var& x) {
  require_rank(x.value(), 4, "append_coords");
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor coords(Shape{n, 2, h, w});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        coords.at(b, 0, y, xx) = w > 1 ? -1.0 + 2.0 * static_cast<double>(xx) / static_cast<double>(w - 1) : 0.0;
        coords.at(b, 1, y, xx) = h > 1 ? -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
      }
  return concat_channels({x, constant(std::move(coords))});
}

Var dynamic_masks(const Var& kernels, const Var& features, const std::vector<CellRef>& cells) {
  require_rank(kernels.value(), 4, "dynamic_masks kernels");
  require_rank(features.value(), 4, "dynamic_masks features");
  const int64_t e = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (kernels.dim(1) != e || kernels.dim(0) != features.dim(0))
    throw ShapeError("dynamic_masks: kernel/feature mismatch " + shape_str(kernels.shape()) + " vs " +
                     shape_str(features.shape()));
  const int64_t k = static_cast<int64_t>(cells.size());
  for (const CellRef& cr : cells)
    if (cr.batch < 0 || cr.batch >= kernels.dim(0) || cr.row < 0 || cr.row >= kernels.dim(2) || cr.col < 0 ||
        cr.col >= kernels.dim(3))
      throw ShapeError("dynamic_masks: cell out of range");
  Tensor out(Shape{k, h, w});
  const Tensor& kv = kernels.value();
  const Tensor& fv = features.value();
  for (int64_t i = 0; i < k; ++i) {
    const CellRef& cr = cells[static_cast<size_t>(i)];
    double* op = out.data() + i * h * w;
    for (int64_t ch = 0; ch < e; ++ch) {
      const double coef = kv.at(cr.batch, ch, cr.row, cr.col);
      const double* fp = fv.data() + (cr.batch * e + ch) * h * w;
      for (int64_t p = 0; p < h * w; ++p) op[p] += coef * fp[p];
    }
  }
  return make_result(std::move(out), {kernels, features}, [cells, e, h, w](Node& self) {
    Node& pk = parent(self, 0);
    Node& pf = parent(self, 1);
    Tensor gk = pk.requires_grad ? Tensor(pk.value.shape()) : Tensor();
    Tensor gf = pf.requires_grad ? Tensor(pf.value.shape()) : Tensor();
    for (size_t i = 0; i < cells.size(); ++i) {
      const CellRef& cr = cells[i];
      const double* go = self.grad.data() + static_cast<int64_t>(i) * h * w;
      for (int64_t ch = 0; ch < e; ++ch) {
        const double* fp = pf.value.data() + (cr.batch * e + ch) * h * w;
        if (pk.requires_grad) {
          double acc = 0.0;
          for (int64_t p = 0; p < h * w; ++p) acc += go[p] * fp[p];
          gk.at(cr.batch, ch, cr.row, cr.col) += acc;
        }
        if (pf.requires_grad) {
          const double coef = pk.value.at(cr.batch, ch, cr.row, cr.col);
          double* gp = gf.data() + (cr.batch * e + ch) * h * w;
          for (int64_t p = 0; p < h * w; ++p) gp[p] += coef * go[p];
        }
      }
    }
    if (pk.requires_grad) pk.accumulate(gk);
    if (pf.requires_grad) pf.accumulate(gf);
  });
}

// --- losses ----------------------------------------------------------------

Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma, double normalizer) {
  require_same_shape(logits.value(), targets, "focal_loss");
  if (normalizer <= 0.0) throw ConfigError("focal_loss: normalizer must be positive");
  const Tensor& x = logits.value();
  double total = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double p = sigmoid_scalar(x[i]);
    if (targets[i] > 0.5)
      total += alpha * std::pow(1.0 - p, gamma) * softplus_scalar(-x[i]);
    else
      total += (1.0 - alpha) * std::pow(p, gamma) * softplus_scalar(x[i]);
  }
  return make_result(Tensor(Shape{}, total / normalizer), {logits}, [targets, alpha, gamma, normalizer](Node& self) {
    Node& px = parent(self, 0);
    Tensor g(px.value.shape());
    const double s = self.grad[0] / normalizer;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double xi = px.value[i];
      const double p = sigmoid_scalar(xi);
      double d;
      if (targets[i] > 0.5) {
        const double q = 1.0 - p;
        d = alpha * (-gamma * std::pow(q, gamma) * p * softplus_scalar(-xi) - std::pow(q, gamma + 1.0));
      } else {
        d = (1.0 - alpha) * (gamma * std::pow(p, gamma) * (1.0 - p) * softplus_scalar(xi) + std::pow(p, gamma + 1.0));
      }
      g[i] = s * d;
    }
    px.accumulate(g);
  });
}

Var dice_loss(const Var& probs, const Tensor& targets) {
  require_same_shape(probs.value(), targets, "dice_loss");
  require_rank(targets, 3, "dice_loss");
  const int64_t k = targets.dim(0), m = targets.dim(1) * targets.dim(2);
  if (k == 0) return scalar(0.0);
  const Tensor& p = probs.value();
  std::vector<double> a(static_cast<size_t>(k)), den(static_cast<size_t>(k));
  double total = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    double pq = 0.0, pp = 0.0, qq = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      const double pv = p[i * m + j], qv = targets[i * m + j];
      pq += pv * qv;
      pp += pv * pv;
      qq += qv * qv;
    }
    a[i] = pq;
    den[i] = pp + qq;
    total += den[i] > 0.0 ? 1.0 - 2.0 * pq / den[i] : 0.0;
  }
  return make_result(Tensor(Shape{}, total / k), {probs}, [targets, a, den, k, m](Node& self) {
    Node& pp = parent(self, 0);
    Tensor g(pp.value.shape());
    const double s = self.grad[0] / k;
    for (int64_t i = 0; i < k; ++i) {
      if (den[i] <= 0.0) continue;
      const double d2 = den[i] * den[i];
      for (int64_t j = 0; j < m; ++j) {
        const double pv = pp.value[i * m + j], qv = targets[i * m + j];
        g[i * m + j] = -s * (2.0 * qv * den[i] - 4.0 * a[i] * pv) / d2;
      }
    }
    pp.accumulate(g);
  });
}

Var rmse_loss(const Var& pred, const Tensor& gt, const Tensor& valid) {
  require_same_shape(pred.value(), gt, "rmse_loss");
  require_same_shape(gt, valid, "rmse_loss valid");
  double ss = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (valid[i] > 0.5) {
      const double d = pred.value()[i] - gt[i];
      ss += d * d;
      ++count;
    }
  const double r = count ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
  return make_result(Tensor(Shape{}, r), {pred}, [gt, valid, r, count](Node& self) {
    Node& pp = parent(self, 0);
    Tensor g(pp.value.shape());
    if (count && r > 0.0) {
      const double s = self.grad[0] / (static_cast<double>(count) * r);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (valid[i] > 0.5) g[i] = s * (pp.value[i] - gt[i]);
    }
    pp.accumulate(g);
  });
}

Var laplacian_boundary(const Var& masks) {
  require_rank(masks.value(), 3, "laplacian_boundary");
  const int64_t k = masks.dim(0);
  const int rows = static_cast<int>(masks.dim(1)), cols = static_cast<int>(masks.dim(2));
  const int64_t m = static_cast<int64_t>(rows) * cols;
  Tensor response(masks.shape());
  for (int64_t i = 0; i < k; ++i)
    raster::laplacian_plane(masks.value().data() + i * m, rows, cols, response.data() + i * m);
  Tensor out(masks.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::abs(response[i]), 1.0);
  return make_result(std::move(out), {masks}, [response = std::move(response), k, rows, cols, m](Node& self) {
    Node& pm = parent(self, 0);
    Tensor gl(self.grad.shape());
    for (int64_t i = 0; i < gl.numel(); ++i) {
      const double l = response[i];
      const double slope = std::abs(l) < 1.0 ? (l > 0.0 ? 1.0 : (l < 0.0 ? -1.0 : 0.0)) : 0.0;
      gl[i] = self.grad[i] * slope;
    }
    Tensor g(pm.value.shape());
    for (int64_t i = 0; i < k; ++i) raster::laplacian_plane_adjoint(gl.data() + i * m, rows, cols, g.data() + i * m);
    pm.accumulate(g);
  });
}

Var weighted_boundary_mse(const Var& pr_boundary, const Tensor& gt_boundary, const Tensor& weights,
                          bool squared_weights) {
  require_same_shape(pr_boundary.value(), gt_boundary, "weighted_boundary_mse");
  require_same_shape(gt_boundary, weights, "weighted_boundary_mse weights");
  require_rank(gt_boundary, 3, "weighted_boundary_mse");
  const int64_t k = gt_boundary.dim(0);
  if (k == 0) return scalar(0.0);
  const double n = static_cast<double>(gt_boundary.numel());
  Tensor coef = weights;
  if (squared_weights)
    for (double& v : coef.values()) v *= v;
  double total = 0.0;
  for (int64_t i = 0; i < gt_boundary.numel(); ++i) {
    const double d = gt_boundary[i] - pr_boundary.value()[i];
    total += coef[i] * d * d;
  }
  return make_result(Tensor(Shape{}, total / n), {pr_boundary}, [gt_boundary, coef = std::move(coef), n](Node& self) {
    Node& pb = parent(self, 0);
    Tensor g(pb.value.shape());
    const double s = self.grad[0] / n;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = -2.0 * s * coef[i] * (gt_boundary[i] - pb.value[i]);
    pb.accumulate(g);
  });
}

}  // namespace xpd::ag
