#include "eface/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "eface/errors.hpp"

namespace eface {

namespace {

struct ConvDims {
  int cin, h, w, kh, kw, stride, ph, pw, ho, wo;
  int k() const { return cin * kh * kw; }
  int p() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

void im2col(const double* img, const ConvDims& d, double* col) {
  for (int c = 0; c < d.cin; ++c) {
    const double* src = img + static_cast<std::size_t>(c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + i * d.kw + j) * d.p();
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride - d.ph + i;
          double* dst = row + static_cast<std::size_t>(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(dst, d.wo, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride - d.pw + j;
            dst[ox] = (ix >= 0 && ix < d.w) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, double* img) {
  for (int c = 0; c < d.cin; ++c) {
    double* dst = img + static_cast<std::size_t>(c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const double* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + i * d.kw + j) * d.p();
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride - d.ph + i;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * d.wo;
          double* line = dst + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride - d.pw + j;
            if (ix >= 0 && ix < d.w) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

Var conv2d(const Var& x, Parameter& weight, Parameter* bias, ConvGeometry geom) {
  const Shape& xs = x->shape();
  const Shape& ws = weight.value.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv '" + weight.name + "' expects " + std::to_string(ws.c) + " input channels, got " +
                     std::to_string(xs.c));
  }
  ConvDims d{xs.c, xs.h, xs.w, ws.h, ws.w, geom.stride, geom.pad_h, geom.pad_w, 0, 0};
  d.ho = (xs.h + 2 * d.ph - d.kh) / d.stride + 1;
  d.wo = (xs.w + 2 * d.pw - d.kw) / d.stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw ShapeError("conv '" + weight.name + "' input too small: " + xs.str());
  const int cout = ws.n;
  Tensor out(Shape{xs.n, cout, d.ho, d.wo});
  std::vector<double> col(d.pointwise() ? 0 : static_cast<std::size_t>(d.k()) * d.p());
  for (int n = 0; n < xs.n; ++n) {
    const double* colp = x->value.sample(n);
    if (!d.pointwise()) {
      im2col(x->value.sample(n), d, col.data());
      colp = col.data();
    }
    double* o = out.sample(n);
    if (bias != nullptr) {
      for (int c = 0; c < cout; ++c) std::fill_n(o + static_cast<std::size_t>(c) * d.p(), d.p(), bias->value[c]);
    }
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, d.p(), d.k(), 1.0, weight.value.data(), d.k(), colp,
                d.p(), bias != nullptr ? 1.0 : 0.0, o, d.p());
  }
  Parameter* w = &weight;
  return make_op(std::move(out), {x}, true, [d, w, bias, cout](Node& self) {
    const Var& in = self.inputs[0];
    const int batch = in->shape().n;
    std::vector<double> col(d.pointwise() ? 0 : static_cast<std::size_t>(d.k()) * d.p());
    std::vector<double> dcol(static_cast<std::size_t>(d.k()) * d.p());
    for (int n = 0; n < batch; ++n) {
      const double* go = self.grad.sample(n);
      const double* colp = in->value.sample(n);
      if (!d.pointwise()) {
        im2col(in->value.sample(n), d, col.data());
        colp = col.data();
      }
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, d.k(), d.p(), 1.0, go, d.p(), colp, d.p(), 1.0,
                  w->grad.data(), d.k());
      if (bias != nullptr) {
        for (int c = 0; c < cout; ++c) {
          const double* g = go + static_cast<std::size_t>(c) * d.p();
          double s = 0.0;
          for (int i = 0; i < d.p(); ++i) s += g[i];
          bias->grad[c] += s;
        }
      }
      if (in->requires_grad) {
        double* gx = in->grad_buffer().sample(n);
        if (d.pointwise()) {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d.k(), d.p(), cout, 1.0, w->value.data(), d.k(), go,
                      d.p(), 1.0, gx, d.p());
        } else {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d.k(), d.p(), cout, 1.0, w->value.data(), d.k(), go,
                      d.p(), 0.0, dcol.data(), d.p());
          col2im(dcol.data(), d, gx);
        }
      }
    }
  });
}

Var group_norm(const Var& x, Parameter& gamma, Parameter& beta, int groups, double eps) {
  const Shape s = x->shape();
  if (groups <= 0 || s.c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(s.c) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  }
  const int per = s.c / groups;
  const std::size_t count = static_cast<std::size_t>(per) * s.plane();
  auto xhat = std::make_shared<Tensor>(s);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n) * groups);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const double* src = x->value.plane(n, g * per);
      double mean = 0.0;
      for (std::size_t i = 0; i < count; ++i) mean += src[i];
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t i = 0; i < count; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(n) * groups + g] = is;
      double* xh = xhat->plane(n, g * per);
      for (std::size_t i = 0; i < count; ++i) xh[i] = (src[i] - mean) * is;
      for (int c = g * per; c < (g + 1) * per; ++c) {
        const double* xc = xhat->plane(n, c);
        double* o = out.plane(n, c);
        const double ga = gamma.value[c];
        const double be = beta.value[c];
        for (std::size_t i = 0; i < s.plane(); ++i) o[i] = xc[i] * ga + be;
      }
    }
  }
  Parameter* gp = &gamma;
  Parameter* bp = &beta;
  return make_op(std::move(out), {x}, true, [s, groups, per, count, xhat, inv_std, gp, bp](Node& self) {
    const Var& in = self.inputs[0];
    std::vector<double> dxhat(count);
    for (int n = 0; n < s.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (int c = g * per; c < (g + 1) * per; ++c) {
          const double* go = self.grad.plane(n, c);
          const double* xh = xhat->plane(n, c);
          double dg = 0.0;
          double db = 0.0;
          const double ga = gp->value[c];
          double* dh = dxhat.data() + static_cast<std::size_t>(c - g * per) * s.plane();
          for (std::size_t i = 0; i < s.plane(); ++i) {
            dg += go[i] * xh[i];
            db += go[i];
            dh[i] = go[i] * ga;
            sum_d += dh[i];
            sum_dx += dh[i] * xh[i];
          }
          gp->grad[c] += dg;
          bp->grad[c] += db;
        }
        if (!in->requires_grad) continue;
        const double m_d = sum_d / static_cast<double>(count);
        const double m_dx = sum_dx / static_cast<double>(count);
        const double is = (*inv_std)[static_cast<std::size_t>(n) * groups + g];
        double* gx = in->grad_buffer().plane(n, g * per);
        const double* xh = xhat->plane(n, g * per);
        for (std::size_t i = 0; i < count; ++i) gx[i] += is * (dxhat[i] - m_d - xh[i] * m_dx);
      }
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  return make_op(std::move(out), {x}, false, [](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var silu(const Var& x) {
  Tensor out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] / (1.0 + std::exp(-x->value[i]));
  return make_op(std::move(out), {x}, false, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double sg = 1.0 / (1.0 + std::exp(-xv[i]));
      gx[i] += self.grad[i] * sg * (1.0 + xv[i] * (1.0 - sg));
    }
  });
}

Var add(const Var& a, const Var& b) { return add_scaled(a, b, 1.0); }

Var add_scaled(const Var& a, const Var& b, double lambda) {
  require_same_shape(a->shape(), b->shape(), "add");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + lambda * b->value[i];
  return make_op(std::move(out), {a, b}, false, [lambda](Node& self) {
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += lambda * self.grad[i];
    }
  });
}

Var mul_broadcast(const Var& x, const Var& gate) {
  const Shape s = x->shape();
  const Shape gs = gate->shape();
  const bool per_pixel = gs.n == s.n && gs.c == 1 && gs.h == s.h && gs.w == s.w;
  const bool per_channel = gs.n == s.n && gs.c == s.c && gs.h == 1 && gs.w == 1;
  if (!per_pixel && !per_channel) throw ShapeError("mul_broadcast: gate " + gs.str() + " does not fit " + s.str());
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* xv = x->value.plane(n, c);
      double* o = out.plane(n, c);
      if (per_pixel) {
        const double* g = gate->value.plane(n, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) o[i] = xv[i] * g[i];
      } else {
        const double g = gate->value.at(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) o[i] = xv[i] * g;
      }
    }
  }
  return make_op(std::move(out), {x, gate}, false, [s, per_pixel](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& gin = self.inputs[1];
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        const double* xv = xin->value.plane(n, c);
        if (per_pixel) {
          const double* g = gin->value.plane(n, 0);
          if (xin->requires_grad) {
            double* gx = xin->grad_buffer().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += go[i] * g[i];
          }
          if (gin->requires_grad) {
            double* gg = gin->grad_buffer().plane(n, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) gg[i] += go[i] * xv[i];
          }
        } else {
          const double g = gin->value.at(n, c, 0, 0);
          if (xin->requires_grad) {
            double* gx = xin->grad_buffer().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += go[i] * g;
          }
          if (gin->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < s.plane(); ++i) acc += go[i] * xv[i];
            gin->grad_buffer().at(n, c, 0, 0) += acc;
          }
        }
      }
    }
  });
}

Var max_pool2(const Var& x) {
  const Shape s = x->shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("max_pool2 needs even extents, got " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(os.numel());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x->value.plane(n, c);
      double* o = out.plane(n, c);
      std::uint32_t* am = argmax->data() + (static_cast<std::size_t>(n) * s.c + c) * os.plane();
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx) {
          std::uint32_t best = static_cast<std::uint32_t>(2 * y * s.w + 2 * xx);
          for (std::uint32_t cand : {best + 1, best + static_cast<std::uint32_t>(s.w),
                                     best + static_cast<std::uint32_t>(s.w) + 1}) {
            if (src[cand] > src[best]) best = cand;
          }
          o[y * os.w + xx] = src[best];
          am[y * os.w + xx] = best;
        }
      }
    }
  }
  return make_op(std::move(out), {x}, false, [s, os, argmax](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        double* g = gx.plane(n, c);
        const std::uint32_t* am = argmax->data() + (static_cast<std::size_t>(n) * s.c + c) * os.plane();
        for (std::size_t i = 0; i < os.plane(); ++i) g[am[i]] += go[i];
      }
    }
  });
}

Var upsample2(const Var& x) {
  const Shape s = x->shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x->value.plane(n, c);
      double* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx) o[y * os.w + xx] = src[(y / 2) * s.w + xx / 2];
      }
    }
  }
  return make_op(std::move(out), {x}, false, [s, os](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        double* g = gx.plane(n, c);
        for (int y = 0; y < os.h; ++y) {
          for (int xx = 0; xx < os.w; ++xx) g[(y / 2) * s.w + xx / 2] += go[y * os.w + xx];
        }
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts[0]->shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p->shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) throw ShapeError("concat_channels: mismatched " + ps.str());
    s.c += ps.c;
  }
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    int off = 0;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->shape().c) * s.plane();
      std::copy_n(p->value.sample(n), len, out.plane(n, off));
      off += p->shape().c;
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(inputs), false, [s](Node& self) {
    for (int n = 0; n < s.n; ++n) {
      int off = 0;
      for (const auto& p : self.inputs) {
        const std::size_t len = static_cast<std::size_t>(p->shape().c) * s.plane();
        if (p->requires_grad) {
          const double* go = self.grad.plane(n, off);
          double* g = p->grad_buffer().sample(n);
          for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
        }
        off += p->shape().c;
      }
    }
  });
}

Var channel_stats(const Var& x) {
  const Shape s = x->shape();
  Tensor out(Shape{s.n, 2, s.h, s.w});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.n) * s.plane());
  for (int n = 0; n < s.n; ++n) {
    double* mean = out.plane(n, 0);
    double* mx = out.plane(n, 1);
    int* am = argmax->data() + static_cast<std::size_t>(n) * s.plane();
    std::fill_n(mx, s.plane(), -std::numeric_limits<double>::infinity());
    for (int c = 0; c < s.c; ++c) {
      const double* src = x->value.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        mean[i] += src[i];
        if (src[i] > mx[i]) {
          mx[i] = src[i];
          am[i] = c;
        }
      }
    }
    for (std::size_t i = 0; i < s.plane(); ++i) mean[i] /= s.c;
  }
  return make_op(std::move(out), {x}, false, [s, argmax](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* gmean = self.grad.plane(n, 0);
      const double* gmax = self.grad.plane(n, 1);
      const int* am = argmax->data() + static_cast<std::size_t>(n) * s.plane();
      for (int c = 0; c < s.c; ++c) {
        double* g = gx.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) g[i] += gmean[i] / s.c;
      }
      for (std::size_t i = 0; i < s.plane(); ++i) gx.plane(n, am[i])[i] += gmax[i];
    }
  });
}

Var global_stats(const Var& x) {
  const Shape s = x->shape();
  Tensor out(Shape{s.n, 2 * s.c, 1, 1});
  auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(s.n) * s.c);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x->value.plane(n, c);
      double sum = 0.0;
      std::size_t best = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum += src[i];
        if (src[i] > src[best]) best = i;
      }
      out.at(n, c, 0, 0) = sum / static_cast<double>(s.plane());
      out.at(n, s.c + c, 0, 0) = src[best];
      (*argmax)[static_cast<std::size_t>(n) * s.c + c] = best;
    }
  }
  return make_op(std::move(out), {x}, false, [s, argmax](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        double* g = gx.plane(n, c);
        const double gm = self.grad.at(n, c, 0, 0) / static_cast<double>(s.plane());
        for (std::size_t i = 0; i < s.plane(); ++i) g[i] += gm;
        g[(*argmax)[static_cast<std::size_t>(n) * s.c + c]] += self.grad.at(n, s.c + c, 0, 0);
      }
    }
  });
}

std::vector<double> normalized_fusion_weights(std::span<const double> raw, double eps) {
  double denom = eps;
  for (double w : raw) denom += std::max(w, 0.0);
  std::vector<double> out;
  out.reserve(raw.size());
  for (double w : raw) out.push_back(std::max(w, 0.0) / denom);
  return out;
}

Var weighted_sum(std::span<const Var> inputs, Parameter& raw_weights, double eps) {
  const std::size_t k = inputs.size();
  if (k == 0 || raw_weights.value.size() != k) {
    throw ShapeError("weighted_sum: " + std::to_string(k) + " inputs for " + std::to_string(raw_weights.value.size()) +
                     " weights of '" + raw_weights.name + "'");
  }
  const Shape s = inputs[0]->shape();
  for (const auto& in : inputs) require_same_shape(s, in->shape(), "weighted_sum");
  const auto norm = normalized_fusion_weights(raw_weights.value.values(), eps);
  double denom = eps;
  for (double w : raw_weights.value.values()) denom += std::max(w, 0.0);
  Tensor out(s);
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& xv = inputs[j]->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += norm[j] * xv[i];
  }
  Parameter* rw = &raw_weights;
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return make_op(std::move(out), std::move(ins), true, [norm, denom, rw, k](Node& self) {
    for (std::size_t j = 0; j < k; ++j) {
      const Var& in = self.inputs[j];
      if (rw->value[j] > 0.0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * (in->value[i] - self.value[i]);
        rw->grad[j] += acc / denom;
      }
      if (in->requires_grad) {
        Tensor& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += norm[j] * self.grad[i];
      }
    }
  });
}

}  // namespace eface
