#include "dynroute/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "dynroute/errors.hpp"
#include "dynroute/madds_counter.hpp"

namespace dynroute::ops {
namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a,
                              const Shape& b = {}) {
  std::string msg = op + ": incompatible shape " + shape_to_string(a);
  if (!b.empty()) msg += " vs " + shape_to_string(b);
  throw ConfigError(msg);
}

Tape& same_tape(const char* op, Var x, Var y) {
  if (x.tape == nullptr || x.tape != y.tape) {
    throw UsageError(std::string(op) + ": operands are on different tapes");
  }
  return *x.tape;
}

void require_rank(const char* op, Var x, int rank) {
  if (x.value().rank() != rank) shape_error(op, x.shape());
}

void require_stride(const char* op, int stride) {
  if (stride != 1 && stride != 2) {
    throw ConfigError(std::string(op) + ": stride must be 1 or 2, got " +
                      std::to_string(stride));
  }
}

template <class Fwd, class Deriv>
Var unary(Var x, Fwd f, Deriv dydx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const int xid = x.id;
  return x.tape->record(std::move(out), {xid}, [xid, dydx](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xin = t.value(xid);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(xin[i], y[i]);
  });
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var x, Var y) {
  Tape& tape = same_tape("add", x, y);
  if (x.shape() != y.shape()) shape_error("add", x.shape(), y.shape());
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
  return tape.record(std::move(out), {x.id, y.id},
                     [xi = x.id, yi = y.id](Tape& t, int self) {
                       const Tensor& g = t.grad(self);
                       for (int in : {xi, yi}) {
                         if (!t.requires_grad(in)) continue;
                         Tensor& gi = t.grad(in);
                         for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                       }
                     });
}

Var sub(Var x, Var y) {
  Tape& tape = same_tape("sub", x, y);
  if (x.shape() != y.shape()) shape_error("sub", x.shape(), y.shape());
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= yv[i];
  return tape.record(std::move(out), {x.id, y.id},
                     [xi = x.id, yi = y.id](Tape& t, int self) {
                       const Tensor& g = t.grad(self);
                       if (t.requires_grad(xi)) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (t.requires_grad(yi)) {
                         Tensor& gy = t.grad(yi);
                         for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i];
                       }
                     });
}

Var mul(Var x, Var y) {
  Tape& tape = same_tape("mul", x, y);
  if (x.shape() != y.shape()) shape_error("mul", x.shape(), y.shape());
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[i];
  return tape.record(std::move(out), {x.id, y.id},
                     [xi = x.id, yi = y.id](Tape& t, int self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& xv = t.value(xi);
                       const Tensor& yv = t.value(yi);
                       if (t.requires_grad(xi)) {
                         Tensor& gx = t.grad(xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
                       }
                       if (t.requires_grad(yi)) {
                         Tensor& gy = t.grad(yi);
                         for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * xv[i];
                       }
                     });
}

Var scale(Var x, double k) {
  return unary(x, [k](double v) { return k * v; },
               [k](double, double) { return k; });
}

Var add_scalar(Var x, double k) {
  return unary(x, [k](double v) { return v + k; },
               [](double, double) { return 1.0; });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var mul_const(Var x, const Tensor& c) {
  if (x.shape() != c.shape()) shape_error("mul_const", x.shape(), c.shape());
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c[i];
  return x.tape->record(std::move(out), {x.id},
                        [xi = x.id, c](Tape& t, int self) {
                          const Tensor& g = t.grad(self);
                          Tensor& gx = t.grad(xi);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c[i];
                        });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo > hi");
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x.id}, [xi = x.id](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var max_over_vector(Var v) {
  require_rank("max_over_vector", v, 1);
  const Tensor& vv = v.value();
  if (vv.size() == 0) shape_error("max_over_vector", vv.shape());
  std::size_t arg = 0;
  for (std::size_t i = 1; i < vv.size(); ++i) {
    if (vv[i] > vv[arg]) arg = i;
  }
  return v.tape->record(Tensor::scalar(vv[arg]), {v.id},
                        [vi = v.id, arg](Tape& t, int self) {
                          t.grad(vi)[arg] += t.grad(self)[0];
                        });
}

Var rowwise_max(Var m) {
  require_rank("rowwise_max", m, 2);
  const Tensor& mv = m.value();
  const int rows = mv.dim(0);
  const int cols = mv.dim(1);
  if (cols == 0) shape_error("rowwise_max", mv.shape());
  Tensor out(Shape{rows});
  std::vector<int> args(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    int arg = 0;
    for (int c = 1; c < cols; ++c) {
      if (mv[static_cast<std::size_t>(r * cols + c)] >
          mv[static_cast<std::size_t>(r * cols + arg)]) {
        arg = c;
      }
    }
    args[static_cast<std::size_t>(r)] = arg;
    out[static_cast<std::size_t>(r)] = mv[static_cast<std::size_t>(r * cols + arg)];
  }
  return m.tape->record(std::move(out), {m.id},
                        [mi = m.id, args, cols](Tape& t, int self) {
                          const Tensor& g = t.grad(self);
                          Tensor& gm = t.grad(mi);
                          for (std::size_t r = 0; r < args.size(); ++r) {
                            gm[r * static_cast<std::size_t>(cols) +
                               static_cast<std::size_t>(args[r])] += g[r];
                          }
                        });
}

Var cosine_similarity(Var u, Var v) {
  Tape& tape = same_tape("cosine_similarity", u, v);
  require_rank("cosine_similarity", u, 1);
  if (u.shape() != v.shape()) shape_error("cosine_similarity", u.shape(), v.shape());
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    dot += uv[i] * vv[i];
    nu2 += uv[i] * uv[i];
    nv2 += vv[i] * vv[i];
  }
  if (nu2 == 0.0 || nv2 == 0.0) {
    return tape.record(Tensor::scalar(0.0), {u.id, v.id}, [](Tape&, int) {});
  }
  const double nu = std::sqrt(nu2);
  const double nv = std::sqrt(nv2);
  const double cos = dot / (nu * nv);
  return tape.record(
      Tensor::scalar(cos), {u.id, v.id},
      [ui = u.id, vi = v.id, nu, nv, cos](Tape& t, int self) {
        const double g = t.grad(self)[0];
        const Tensor& uv = t.value(ui);
        const Tensor& vv = t.value(vi);
        if (t.requires_grad(ui)) {
          Tensor& gu = t.grad(ui);
          for (std::size_t i = 0; i < gu.size(); ++i) {
            gu[i] += g * (vv[i] / (nu * nv) - cos * uv[i] / (nu * nu));
          }
        }
        if (t.requires_grad(vi)) {
          Tensor& gv = t.grad(vi);
          for (std::size_t i = 0; i < gv.size(); ++i) {
            gv[i] += g * (uv[i] / (nu * nv) - cos * vv[i] / (nv * nv));
          }
        }
      });
}

Var conv2d_1x1(Var x, Var w, int stride) {
  Tape& tape = same_tape("conv2d_1x1", x, w);
  require_stride("conv2d_1x1", stride);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 2 || wv.dim(1) != xv.dim(1)) {
    shape_error("conv2d_1x1", xv.shape(), wv.shape());
  }
  const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int cout = wv.dim(0);
  const int ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
  Tensor out(Shape{batch, cout, ho, wo});
  std::int64_t macs = 0;
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < cout; ++o) {
      for (int c = 0; c < cin; ++c) {
        const double k = wv[static_cast<std::size_t>(o * cin + c)];
        for (int i = 0; i < ho; ++i) {
          for (int j = 0; j < wo; ++j) {
            out.at(b, o, i, j) += k * xv.at(b, c, i * stride, j * stride);
            ++macs;
          }
        }
      }
    }
  }
  madds::add(macs);
  return tape.record(
      std::move(out), {x.id, w.id},
      [xi = x.id, wi = w.id, stride](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& wv = t.value(wi);
        const int batch = g.dim(0), cout = g.dim(1), ho = g.dim(2), wo = g.dim(3);
        const int cin = xv.dim(1);
        const bool need_x = t.requires_grad(xi);
        const bool need_w = t.requires_grad(wi);
        Tensor* gx = need_x ? &t.grad(xi) : nullptr;
        Tensor* gw = need_w ? &t.grad(wi) : nullptr;
        for (int b = 0; b < batch; ++b) {
          for (int o = 0; o < cout; ++o) {
            for (int c = 0; c < cin; ++c) {
              const std::size_t widx = static_cast<std::size_t>(o * cin + c);
              const double k = wv[widx];
              double acc = 0.0;
              for (int i = 0; i < ho; ++i) {
                for (int j = 0; j < wo; ++j) {
                  const double go = g.at(b, o, i, j);
                  if (gx) gx->at(b, c, i * stride, j * stride) += k * go;
                  acc += go * xv.at(b, c, i * stride, j * stride);
                }
              }
              if (gw) (*gw)[widx] += acc;
            }
          }
        }
      });
}

Var depthwise_conv3x3(Var x, Var w, int stride) {
  Tape& tape = same_tape("depthwise_conv3x3", x, w);
  require_stride("depthwise_conv3x3", stride);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 3 || wv.dim(0) != xv.dim(1) ||
      wv.dim(1) != 3 || wv.dim(2) != 3) {
    shape_error("depthwise_conv3x3", xv.shape(), wv.shape());
  }
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
  Tensor out(Shape{batch, ch, ho, wo});
  std::int64_t macs = 0;
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (int u = 0; u < 3; ++u) {
            for (int v = 0; v < 3; ++v) {
              const int yy = i * stride + u - 1;
              const int xx = j * stride + v - 1;
              // Padding taps multiply a zero and are counted like any other.
              const double in = (yy >= 0 && yy < h && xx >= 0 && xx < wd)
                                    ? xv.at(b, c, yy, xx)
                                    : 0.0;
              acc += wv[static_cast<std::size_t>((c * 3 + u) * 3 + v)] * in;
              ++macs;
            }
          }
          out.at(b, c, i, j) = acc;
        }
      }
    }
  }
  madds::add(macs);
  return tape.record(
      std::move(out), {x.id, w.id},
      [xi = x.id, wi = w.id, stride](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& wv = t.value(wi);
        const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
        const int ho = g.dim(2), wo = g.dim(3);
        Tensor* gx = t.requires_grad(xi) ? &t.grad(xi) : nullptr;
        Tensor* gw = t.requires_grad(wi) ? &t.grad(wi) : nullptr;
        for (int b = 0; b < batch; ++b) {
          for (int c = 0; c < ch; ++c) {
            for (int i = 0; i < ho; ++i) {
              for (int j = 0; j < wo; ++j) {
                const double go = g.at(b, c, i, j);
                for (int u = 0; u < 3; ++u) {
                  for (int v = 0; v < 3; ++v) {
                    const int yy = i * stride + u - 1;
                    const int xx = j * stride + v - 1;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                    const std::size_t widx = static_cast<std::size_t>((c * 3 + u) * 3 + v);
                    if (gx) gx->at(b, c, yy, xx) += wv[widx] * go;
                    if (gw) (*gw)[widx] += xv.at(b, c, yy, xx) * go;
                  }
                }
              }
            }
          }
        }
      });
}

Var depthwise_separable_conv3x3(Var x, Var w_dw, Var w_pw, int stride) {
  return conv2d_1x1(depthwise_conv3x3(x, w_dw, stride), w_pw, 1);
}

Var add_channel_bias(Var x, Var b) {
  Tape& tape = same_tape("add_channel_bias", x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    shape_error("add_channel_bias", xv.shape(), bv.shape());
  }
  Tensor out = xv;
  const int batch = xv.dim(0), ch = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2) * xv.dim(3));
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * ch + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) out[base + k] += bv[static_cast<std::size_t>(c)];
    }
  }
  return tape.record(
      std::move(out), {x.id, b.id},
      [xi = x.id, bi = b.id, batch, ch, plane](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(xi)) {
          Tensor& gx = t.grad(xi);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(bi)) {
          Tensor& gb = t.grad(bi);
          for (int n = 0; n < batch; ++n) {
            for (int c = 0; c < ch; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * ch + c) * plane;
              double acc = 0.0;
              for (std::size_t k = 0; k < plane; ++k) acc += g[base + k];
              gb[static_cast<std::size_t>(c)] += acc;
            }
          }
        }
      });
}

Var group_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = same_tape("group_norm", x, gamma);
  same_tape("group_norm", x, beta);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (xv.rank() != 4 || gv.shape() != Shape{xv.dim(1)} || bv.shape() != Shape{xv.dim(1)}) {
    shape_error("group_norm", xv.shape(), gv.shape());
  }
  const int batch = xv.dim(0), ch = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2) * xv.dim(3));
  const std::size_t per_sample = plane * static_cast<std::size_t>(ch);
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(batch));
  Tensor out(xv.shape());
  for (int n = 0; n < batch; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * per_sample;
    double mean = 0.0;
    for (std::size_t k = 0; k < per_sample; ++k) mean += xv[base + k];
    mean /= static_cast<double>(per_sample);
    double var = 0.0;
    for (std::size_t k = 0; k < per_sample; ++k) var += (xv[base + k] - mean) * (xv[base + k] - mean);
    var /= static_cast<double>(per_sample);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(n)] = is;
    for (int c = 0; c < ch; ++c) {
      const std::size_t cb = base + static_cast<std::size_t>(c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        xhat[cb + k] = (xv[cb + k] - mean) * is;
        out[cb + k] = gv[static_cast<std::size_t>(c)] * xhat[cb + k] + bv[static_cast<std::size_t>(c)];
      }
    }
  }
  return tape.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std),
       batch, ch, plane, per_sample](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor gamma_v = t.value(gi);
        if (t.requires_grad(gi) || t.requires_grad(bi)) {
          std::vector<double> dg(static_cast<std::size_t>(ch), 0.0), db(static_cast<std::size_t>(ch), 0.0);
          for (int n = 0; n < batch; ++n) {
            for (int c = 0; c < ch; ++c) {
              const std::size_t cb = static_cast<std::size_t>(n) * per_sample + static_cast<std::size_t>(c) * plane;
              for (std::size_t k = 0; k < plane; ++k) {
                dg[static_cast<std::size_t>(c)] += g[cb + k] * xhat[cb + k];
                db[static_cast<std::size_t>(c)] += g[cb + k];
              }
            }
          }
          if (t.requires_grad(gi)) {
            Tensor& gg = t.grad(gi);
            for (int c = 0; c < ch; ++c) gg[static_cast<std::size_t>(c)] += dg[static_cast<std::size_t>(c)];
          }
          if (t.requires_grad(bi)) {
            Tensor& gb = t.grad(bi);
            for (int c = 0; c < ch; ++c) gb[static_cast<std::size_t>(c)] += db[static_cast<std::size_t>(c)];
          }
        }
        if (!t.requires_grad(xi)) return;
        Tensor& gx = t.grad(xi);
        const double inv_n = 1.0 / static_cast<double>(per_sample);
        for (int n = 0; n < batch; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * per_sample;
          double mean_d = 0.0, mean_dx = 0.0;
          for (int c = 0; c < ch; ++c) {
            const std::size_t cb = base + static_cast<std::size_t>(c) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              const double d = g[cb + k] * gamma_v[static_cast<std::size_t>(c)];
              mean_d += d;
              mean_dx += d * xhat[cb + k];
            }
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          const double is = inv_std[static_cast<std::size_t>(n)];
          for (int c = 0; c < ch; ++c) {
            const std::size_t cb = base + static_cast<std::size_t>(c) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              const double d = g[cb + k] * gamma_v[static_cast<std::size_t>(c)];
              gx[cb + k] += is * (d - mean_d - xhat[cb + k] * mean_dx);
            }
          }
        }
      });
}

Var avg_pool_to(Var x, int out_h, int out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || out_h <= 0 || out_w <= 0) {
    shape_error("avg_pool_to", xv.shape(), Shape{out_h, out_w});
  }
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  auto lo = [](int i, int in, int out) { return (i * in) / out; };
  auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
  Tensor out(Shape{batch, ch, out_h, out_w});
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
          const int y0 = lo(i, h, out_h), y1 = hi(i, h, out_h);
          const int x0 = lo(j, wd, out_w), x1 = hi(j, wd, out_w);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            for (int xx = x0; xx < x1; ++xx) acc += xv.at(b, c, y, xx);
          }
          out.at(b, c, i, j) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return x.tape->record(
      std::move(out), {x.id}, [xi = x.id, lo, hi](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad(xi);
        const int batch = gx.dim(0), ch = gx.dim(1), h = gx.dim(2), wd = gx.dim(3);
        const int out_h = g.dim(2), out_w = g.dim(3);
        for (int b = 0; b < batch; ++b) {
          for (int c = 0; c < ch; ++c) {
            for (int i = 0; i < out_h; ++i) {
              for (int j = 0; j < out_w; ++j) {
                const int y0 = lo(i, h, out_h), y1 = hi(i, h, out_h);
                const int x0 = lo(j, wd, out_w), x1 = hi(j, wd, out_w);
                const double share =
                    g.at(b, c, i, j) / static_cast<double>((y1 - y0) * (x1 - x0));
                for (int y = y0; y < y1; ++y) {
                  for (int xx = x0; xx < x1; ++xx) gx.at(b, c, y, xx) += share;
                }
              }
            }
          }
        }
      });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) shape_error("global_avg_pool", xv.shape());
  const int batch = xv.dim(0), ch = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2) * xv.dim(3));
  Tensor out(Shape{batch, ch});
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch * ch); ++bc) {
    double acc = 0.0;
    for (std::size_t k = 0; k < plane; ++k) acc += xv[bc * plane + k];
    out[bc] = acc / static_cast<double>(plane);
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, plane](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t bc = 0; bc < g.size(); ++bc) {
      const double share = g[bc] / static_cast<double>(plane);
      for (std::size_t k = 0; k < plane; ++k) gx[bc * plane + k] += share;
    }
  });
}

Var fully_connected(Var x, Var w, Var b) {
  Tape& tape = same_tape("fully_connected", x, w);
  same_tape("fully_connected", x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
      wv.dim(1) != xv.dim(1) || bv.dim(0) != wv.dim(0)) {
    shape_error("fully_connected", xv.shape(), wv.shape());
  }
  const int batch = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  Tensor out(Shape{batch, outd});
  std::int64_t macs = 0;
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < outd; ++o) {
      double acc = bv[static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) {
        acc += wv[static_cast<std::size_t>(o * in + i)] * xv[static_cast<std::size_t>(n * in + i)];
        ++macs;
      }
      out[static_cast<std::size_t>(n * outd + o)] = acc;
    }
  }
  madds::add(macs);
  return tape.record(
      std::move(out), {x.id, w.id, b.id},
      [xi = x.id, wi = w.id, bi = b.id, batch, in, outd](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& wv = t.value(wi);
        Tensor* gx = t.requires_grad(xi) ? &t.grad(xi) : nullptr;
        Tensor* gw = t.requires_grad(wi) ? &t.grad(wi) : nullptr;
        Tensor* gb = t.requires_grad(bi) ? &t.grad(bi) : nullptr;
        for (int n = 0; n < batch; ++n) {
          for (int o = 0; o < outd; ++o) {
            const double go = g[static_cast<std::size_t>(n * outd + o)];
            if (gb) (*gb)[static_cast<std::size_t>(o)] += go;
            for (int i = 0; i < in; ++i) {
              const std::size_t wid = static_cast<std::size_t>(o * in + i);
              const std::size_t xid = static_cast<std::size_t>(n * in + i);
              if (gx) (*gx)[xid] += wv[wid] * go;
              if (gw) (*gw)[wid] += xv[xid] * go;
            }
          }
        }
      });
}

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

// Source taps for one output coordinate of a 2x align_corners=false resize.
Tap upsample_tap(int dst, int in_size) {
  double src = (dst + 0.5) / 2.0 - 0.5;
  if (src < 0) src = 0;
  int i0 = static_cast<int>(std::floor(src));
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  const double frac = src - i0;
  return Tap{i0, i1, 1.0 - frac, frac};
}

}  // namespace

Var bilinear_upsample_2x(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) shape_error("bilinear_upsample_2x", xv.shape());
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  Tensor out(Shape{batch, ch, 2 * h, 2 * wd});
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      for (int i = 0; i < 2 * h; ++i) {
        const Tap ty = upsample_tap(i, h);
        for (int j = 0; j < 2 * wd; ++j) {
          const Tap tx = upsample_tap(j, wd);
          out.at(b, c, i, j) = ty.w0 * (tx.w0 * xv.at(b, c, ty.i0, tx.i0) +
                                        tx.w1 * xv.at(b, c, ty.i0, tx.i1)) +
                               ty.w1 * (tx.w0 * xv.at(b, c, ty.i1, tx.i0) +
                                        tx.w1 * xv.at(b, c, ty.i1, tx.i1));
        }
      }
    }
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    const int batch = gx.dim(0), ch = gx.dim(1), h = gx.dim(2), wd = gx.dim(3);
    for (int b = 0; b < batch; ++b) {
      for (int c = 0; c < ch; ++c) {
        for (int i = 0; i < 2 * h; ++i) {
          const Tap ty = upsample_tap(i, h);
          for (int j = 0; j < 2 * wd; ++j) {
            const Tap tx = upsample_tap(j, wd);
            const double go = g.at(b, c, i, j);
            gx.at(b, c, ty.i0, tx.i0) += go * ty.w0 * tx.w0;
            gx.at(b, c, ty.i0, tx.i1) += go * ty.w0 * tx.w1;
            gx.at(b, c, ty.i1, tx.i0) += go * ty.w1 * tx.w0;
            gx.at(b, c, ty.i1, tx.i1) += go * ty.w1 * tx.w1;
          }
        }
      }
    }
  });
}

Var scale_per_sample(Var x, Var g) {
  Tape& tape = same_tape("scale_per_sample", x, g);
  const Tensor& xv = x.value();
  const Tensor& gv = g.value();
  if (xv.rank() < 1 || gv.rank() != 1 || gv.dim(0) != xv.dim(0)) {
    shape_error("scale_per_sample", xv.shape(), gv.shape());
  }
  const int batch = xv.dim(0);
  const std::size_t stride = batch ? xv.size() / static_cast<std::size_t>(batch) : 0;
  Tensor out(xv.shape());
  for (int b = 0; b < batch; ++b) {
    const double k = gv[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < stride; ++i) {
      out[b * stride + i] = k * xv[b * stride + i];
    }
  }
  return tape.record(
      std::move(out), {x.id, g.id},
      [xi = x.id, gi = g.id, batch, stride](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        const Tensor& xv = t.value(xi);
        const Tensor& gv = t.value(gi);
        Tensor* gx = t.requires_grad(xi) ? &t.grad(xi) : nullptr;
        Tensor* gg = t.requires_grad(gi) ? &t.grad(gi) : nullptr;
        for (int b = 0; b < batch; ++b) {
          const double k = gv[static_cast<std::size_t>(b)];
          double acc = 0.0;
          for (std::size_t i = 0; i < stride; ++i) {
            const std::size_t idx = b * stride + i;
            if (gx) (*gx)[idx] += k * go[idx];
            acc += go[idx] * xv[idx];
          }
          if (gg) (*gg)[static_cast<std::size_t>(b)] += acc;
        }
      });
}

Var column(Var m, int k) {
  require_rank("column", m, 2);
  const Tensor& mv = m.value();
  const int rows = mv.dim(0), cols = mv.dim(1);
  if (k < 0 || k >= cols) shape_error("column", mv.shape(), Shape{k});
  Tensor out(Shape{rows});
  for (int r = 0; r < rows; ++r) {
    out[static_cast<std::size_t>(r)] = mv[static_cast<std::size_t>(r * cols + k)];
  }
  return m.tape->record(std::move(out), {m.id}, [mi = m.id, k, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gm = t.grad(mi);
    for (std::size_t r = 0; r < g.size(); ++r) {
      gm[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(k)] += g[r];
    }
  });
}

Var row(Var m, int i) {
  require_rank("row", m, 2);
  const Tensor& mv = m.value();
  const int rows = mv.dim(0), cols = mv.dim(1);
  if (i < 0 || i >= rows) shape_error("row", mv.shape(), Shape{i});
  const auto first = mv.data().begin() + static_cast<std::ptrdiff_t>(i) * cols;
  Tensor out(Shape{cols}, std::vector<double>(first, first + cols));
  return m.tape->record(std::move(out), {m.id}, [mi = m.id, i, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gm = t.grad(mi);
    const std::size_t base = static_cast<std::size_t>(i) * static_cast<std::size_t>(cols);
    for (std::size_t c = 0; c < g.size(); ++c) gm[base + c] += g[c];
  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_columns: no inputs");
  Tape* tape = parts.front().tape;
  const int rows = parts.front().value().rank() == 2 ? parts.front().value().dim(0) : -1;
  std::vector<int> ids;
  std::vector<int> widths;
  int total = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) throw UsageError("concat_columns: operands are on different tapes");
    if (p.value().rank() != 2 || p.value().dim(0) != rows) {
      shape_error("concat_columns", parts.front().shape(), p.shape());
    }
    ids.push_back(p.id);
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  Tensor out(Shape{rows, total});
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < widths[k]; ++c) {
        out[static_cast<std::size_t>(r * total + offset + c)] =
            pv[static_cast<std::size_t>(r * widths[k] + c)];
      }
    }
    offset += widths[k];
  }
  return tape->record(std::move(out), ids, [ids, widths, rows, total](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    int offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& gp = t.grad(ids[k]);
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < widths[k]; ++c) {
            gp[static_cast<std::size_t>(r * widths[k] + c)] +=
                g[static_cast<std::size_t>(r * total + offset + c)];
          }
        }
      }
      offset += widths[k];
    }
  });
}

Var matvec_const(Var m, std::span<const double> c) {
  require_rank("matvec_const", m, 2);
  const Tensor& mv = m.value();
  const int rows = mv.dim(0), cols = mv.dim(1);
  if (static_cast<std::size_t>(cols) != c.size()) {
    shape_error("matvec_const", mv.shape(), Shape{static_cast<int>(c.size())});
  }
  std::vector<double> coeff(c.begin(), c.end());
  Tensor out(Shape{rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int k = 0; k < cols; ++k) acc += mv[static_cast<std::size_t>(r * cols + k)] * coeff[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(r)] = acc;
  }
  return m.tape->record(std::move(out), {m.id},
                        [mi = m.id, coeff, cols](Tape& t, int self) {
                          const Tensor& g = t.grad(self);
                          Tensor& gm = t.grad(mi);
                          for (std::size_t r = 0; r < g.size(); ++r) {
                            for (int k = 0; k < cols; ++k) {
                              gm[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(k)] +=
                                  g[r] * coeff[static_cast<std::size_t>(k)];
                            }
                          }
                        });
}

Var sigmoid_focal_loss_sum(Var logits, const Tensor& targets, double alpha,
                           double gamma) {
  if (logits.shape() != targets.shape()) {
    shape_error("sigmoid_focal_loss_sum", logits.shape(), targets.shape());
  }
  const Tensor& xv = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    const double p = sigmoid(x);
    if (targets[i] > 0.5) {
      total += alpha * std::pow(1.0 - p, gamma) * softplus(-x);
    } else {
      total += (1.0 - alpha) * std::pow(p, gamma) * softplus(x);
    }
  }
  return logits.tape->record(
      Tensor::scalar(total), {logits.id},
      [xi = logits.id, targets, alpha, gamma](Tape& t, int self) {
        const double g = t.grad(self)[0];
        const Tensor& xv = t.value(xi);
        Tensor& gx = t.grad(xi);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const double x = xv[i];
          const double p = sigmoid(x);
          const double q = 1.0 - p;
          double d;
          if (targets[i] > 0.5) {
            // log p = -softplus(-x)
            d = alpha * std::pow(q, gamma) * (gamma * p * -softplus(-x) - q);
          } else {
            d = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * q * -softplus(x));
          }
          gx[i] += g * d;
        }
      });
}

Var iou_loss_sum(Var pred, const Tensor& target, const Tensor& mask) {
  const Tensor& pv = pred.value();
  if (pv.rank() != 4 || pv.dim(1) != 4 || target.shape() != pv.shape()) {
    shape_error("iou_loss_sum", pv.shape(), target.shape());
  }
  const int batch = pv.dim(0), h = pv.dim(2), w = pv.dim(3);
  if (mask.shape() != Shape{batch, h, w}) shape_error("iou_loss_sum", pv.shape(), mask.shape());

  struct Geometry {
    double inter, uni, wi, hi;
  };
  auto geometry = [](const double* p, const double* q) {
    // p, q: l, t, r, b
    const double area_p = (p[0] + p[2]) * (p[1] + p[3]);
    const double area_q = (q[0] + q[2]) * (q[1] + q[3]);
    const double wi = std::min(p[0], q[0]) + std::min(p[2], q[2]);
    const double hi = std::min(p[1], q[1]) + std::min(p[3], q[3]);
    const double inter = wi * hi;
    return Geometry{inter, area_p + area_q - inter, wi, hi};
  };
  auto gather = [h, w](const Tensor& t, int b, int y, int x, double* out) {
    for (int k = 0; k < 4; ++k) out[k] = t.at(b, k, y, x);
  };

  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (mask[static_cast<std::size_t>((b * h + y) * w + x)] < 0.5) continue;
        double p[4], q[4];
        gather(pv, b, y, x, p);
        gather(target, b, y, x, q);
        const Geometry gm = geometry(p, q);
        total += std::log(gm.uni) - std::log(gm.inter);
      }
    }
  }
  return pred.tape->record(
      Tensor::scalar(total), {pred.id},
      [pi = pred.id, target, mask, geometry, gather](Tape& t, int self) {
        const double g = t.grad(self)[0];
        const Tensor& pv = t.value(pi);
        Tensor& gp = t.grad(pi);
        const int batch = pv.dim(0), h = pv.dim(2), w = pv.dim(3);
        for (int b = 0; b < batch; ++b) {
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              if (mask[static_cast<std::size_t>((b * h + y) * w + x)] < 0.5) continue;
              double p[4], q[4];
              gather(pv, b, y, x, p);
              gather(target, b, y, x, q);
              const Geometry gm = geometry(p, q);
              for (int k = 0; k < 4; ++k) {
                // k in {0, 2} spans the width, {1, 3} the height.
                const bool horizontal = (k % 2 == 0);
                const double other_side = horizontal ? (p[1] + p[3]) : (p[0] + p[2]);
                const double other_inter = horizontal ? gm.hi : gm.wi;
                const double d_inter = (p[k] <= q[k]) ? other_inter : 0.0;
                const double d_union = other_side - d_inter;
                gp.at(b, k, y, x) += g * (d_union / gm.uni - d_inter / gm.inter);
              }
            }
          }
        }
      });
}

}  // namespace dynroute::ops
