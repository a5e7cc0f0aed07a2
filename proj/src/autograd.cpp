#include "usnas/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "usnas/common.hpp"

namespace usnas::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

struct ConvDims {
  long n, c, h, w, c_out, k, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, long c_out, long k, int stride, int pad,
                   const char* opname) {
  if (x.rank() != 4)
    throw ValidationError(std::string(opname) + ": input must be NCHW, got " +
                          x.shape_str());
  ConvDims d;
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.c_out = c_out;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - k) / stride + 1;
  d.wo = (d.w + 2 * pad - k) / stride + 1;
  if (d.ho < 1 || d.wo < 1)
    throw ValidationError(std::string(opname) + ": spatial underflow on " +
                          x.shape_str());
  return d;
}

// Gathers one sample's receptive fields into a [C*k*k, Ho*Wo] matrix.
void im2col(const double* x, const ConvDims& d, Eigen::MatrixXd& cols) {
  cols.resize(d.c * d.k * d.k, d.ho * d.wo);
  for (long oh = 0; oh < d.ho; ++oh) {
    for (long ow = 0; ow < d.wo; ++ow) {
      const long col = oh * d.wo + ow;
      double* out = cols.data() + col * cols.rows();
      long row = 0;
      for (long c = 0; c < d.c; ++c) {
        const double* xc = x + c * d.h * d.w;
        for (long i = 0; i < d.k; ++i) {
          const long hh = oh * d.stride - d.pad + i;
          for (long j = 0; j < d.k; ++j, ++row) {
            const long ww = ow * d.stride - d.pad + j;
            out[row] = (hh >= 0 && hh < d.h && ww >= 0 && ww < d.w)
                           ? xc[hh * d.w + ww]
                           : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const Eigen::MatrixXd& cols, const ConvDims& d, double* dx) {
  for (long oh = 0; oh < d.ho; ++oh) {
    for (long ow = 0; ow < d.wo; ++ow) {
      const long col = oh * d.wo + ow;
      const double* in = cols.data() + col * cols.rows();
      long row = 0;
      for (long c = 0; c < d.c; ++c) {
        double* xc = dx + c * d.h * d.w;
        for (long i = 0; i < d.k; ++i) {
          const long hh = oh * d.stride - d.pad + i;
          for (long j = 0; j < d.k; ++j, ++row) {
            const long ww = ow * d.stride - d.pad + j;
            if (hh >= 0 && hh < d.h && ww >= 0 && ww < d.w)
              xc[hh * d.w + ww] += in[row];
          }
        }
      }
    }
  }
}

}  // namespace

Graph::Ref Graph::push(Tensor value, bool needs_grad) {
  Entry e;
  e.value = std::move(value);
  e.needs_grad = needs_grad;
  entries_.push_back(std::move(e));
  return static_cast<Ref>(entries_.size() - 1);
}

Tensor& Graph::grad_buf(Ref r) {
  Entry& e = entries_[static_cast<size_t>(r)];
  if (!e.grad_ready) {
    e.grad = Tensor(e.value.shape());
    e.grad_ready = true;
  }
  return e.grad;
}

Graph::Ref Graph::constant(Tensor v) { return push(std::move(v), false); }

Graph::Ref Graph::param(Parameter& p) {
  Ref r = push(p.value, true);
  entries_[static_cast<size_t>(r)].bound = &p;
  entries_[static_cast<size_t>(r)].backprop = [r](Graph& g) {
    Entry& e = g.entries_[static_cast<size_t>(r)];
    for (long i = 0; i < e.grad.numel(); ++i) e.bound->grad[i] += e.grad[i];
  };
  return r;
}

Graph::Ref Graph::add(Ref a, Ref b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw ValidationError("add: shape mismatch " + va.shape_str() + " vs " +
                          vb.shape_str());
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
  Ref r = push(std::move(out), needs(a) || needs(b));
  entries_[static_cast<size_t>(r)].backprop = [r, a, b](Graph& g) {
    const Tensor& go = g.grad(r);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buf(a);
      for (long i = 0; i < go.numel(); ++i) ga[i] += go[i];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buf(b);
      for (long i = 0; i < go.numel(); ++i) gb[i] += go[i];
    }
  };
  return r;
}

Graph::Ref Graph::sub(Ref a, Ref b) { return add(a, scale(b, -1.0)); }

Graph::Ref Graph::mul(Ref a, Ref b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw ValidationError("mul: shape mismatch " + va.shape_str() + " vs " +
                          vb.shape_str());
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
  Ref r = push(std::move(out), needs(a) || needs(b));
  entries_[static_cast<size_t>(r)].backprop = [r, a, b](Graph& g) {
    const Tensor& go = g.grad(r);
    if (g.needs(a)) {
      Tensor& ga = g.grad_buf(a);
      const Tensor& vb = g.value(b);
      for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb[i];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_buf(b);
      const Tensor& va = g.value(a);
      for (long i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
    }
  };
  return r;
}

Graph::Ref Graph::scale(Ref a, double c) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = va[i] * c;
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a, c](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * c;
  };
  return r;
}

Graph::Ref Graph::relu(Ref a) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = va[i] > 0 ? va[i] : 0.0;
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    const Tensor& va = g.value(a);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < go.numel(); ++i)
      if (va[i] > 0) ga[i] += go[i];
  };
  return r;
}

Graph::Ref Graph::tanh_op(Ref a) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(va[i]);
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    const Tensor& vo = g.value(r);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * (1.0 - vo[i] * vo[i]);
  };
  return r;
}

Graph::Ref Graph::sigmoid(Ref a) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    const Tensor& vo = g.value(r);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < go.numel(); ++i)
      ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
  };
  return r;
}

Graph::Ref Graph::exp_op(Ref a) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = std::exp(va[i]);
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    const Tensor& vo = g.value(r);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * vo[i];
  };
  return r;
}

Graph::Ref Graph::matmul(Ref a, Ref b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
    throw ValidationError("matmul: incompatible shapes " + va.shape_str() +
                          " x " + vb.shape_str());
  const long n = va.dim(0), m = va.dim(1), p = vb.dim(1);
  Tensor out(std::vector<long>{n, p});
  MapMat(out.data(), n, p) =
      MapConst(va.data(), n, m) * MapConst(vb.data(), m, p);
  Ref r = push(std::move(out), needs(a) || needs(b));
  entries_[static_cast<size_t>(r)].backprop = [r, a, b, n, m, p](Graph& g) {
    MapConst go(g.grad(r).data(), n, p);
    if (g.needs(a)) {
      MapMat(g.grad_buf(a).data(), n, m) +=
          go * MapConst(g.value(b).data(), m, p).transpose();
    }
    if (g.needs(b)) {
      MapMat(g.grad_buf(b).data(), m, p) +=
          MapConst(g.value(a).data(), n, m).transpose() * go;
    }
  };
  return r;
}

Graph::Ref Graph::block(Ref a, long r0, long rows, long c0, long cols) {
  const Tensor& va = value(a);
  if (va.rank() != 2 || r0 + rows > va.dim(0) || c0 + cols > va.dim(1))
    throw ValidationError("block: out of range on " + va.shape_str());
  const long width = va.dim(1);
  Tensor out(std::vector<long>{rows, cols});
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      out[i * cols + j] = va[(r0 + i) * width + c0 + j];
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a, r0, rows, c0, cols,
                                               width](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j)
        ga[(r0 + i) * width + c0 + j] += go[i * cols + j];
  };
  return r;
}

Graph::Ref Graph::sum(Ref a) {
  const Tensor& va = value(a);
  double s = 0;
  for (long i = 0; i < va.numel(); ++i) s += va[i];
  Ref r = push(Tensor::scalar(s), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a](Graph& g) {
    if (!g.needs(a)) return;
    const double go = g.grad(r)[0];
    Tensor& ga = g.grad_buf(a);
    for (long i = 0; i < ga.numel(); ++i) ga[i] += go;
  };
  return r;
}

Graph::Ref Graph::pick(Ref a, long flat_index) {
  const Tensor& va = value(a);
  if (flat_index < 0 || flat_index >= va.numel())
    throw ValidationError("pick: index out of range");
  Ref r = push(Tensor::scalar(va[flat_index]), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a, flat_index](Graph& g) {
    if (!g.needs(a)) return;
    g.grad_buf(a)[flat_index] += g.grad(r)[0];
  };
  return r;
}

Graph::Ref Graph::conv2d(Ref x, Ref w, Ref bias, int stride, int pad) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  if (vw.rank() != 4 || vw.dim(1) != vx.dim(1) || vw.dim(2) != vw.dim(3))
    throw ValidationError("conv2d: weight " + vw.shape_str() +
                          " incompatible with input " + vx.shape_str());
  const ConvDims d =
      conv_dims(vx, vw.dim(0), vw.dim(2), stride, pad, "conv2d");

  Tensor out(std::vector<long>{d.n, d.c_out, d.ho, d.wo});
  Eigen::MatrixXd cols;
  MapConst wmat(vw.data(), d.c_out, d.c * d.k * d.k);
  for (long n = 0; n < d.n; ++n) {
    im2col(vx.data() + n * d.c * d.h * d.w, d, cols);
    MapMat(out.data() + n * d.c_out * d.ho * d.wo, d.c_out, d.ho * d.wo) =
        wmat * cols;
  }
  if (bias != kNone) {
    const Tensor& vb = value(bias);
    for (long n = 0; n < d.n; ++n)
      for (long c = 0; c < d.c_out; ++c) {
        double* o = out.data() + (n * d.c_out + c) * d.ho * d.wo;
        for (long i = 0; i < d.ho * d.wo; ++i) o[i] += vb[c];
      }
  }
  Ref r = push(std::move(out), needs(x) || needs(w) || needs(bias));
  entries_[static_cast<size_t>(r)].backprop = [r, x, w, bias, d](Graph& g) {
    const Tensor& go = g.grad(r);
    const Tensor& vx = g.value(x);
    const Tensor& vw = g.value(w);
    Eigen::MatrixXd cols;
    for (long n = 0; n < d.n; ++n) {
      MapConst gmat(go.data() + n * d.c_out * d.ho * d.wo, d.c_out,
                    d.ho * d.wo);
      if (g.needs(w)) {
        im2col(vx.data() + n * d.c * d.h * d.w, d, cols);
        MapMat(g.grad_buf(w).data(), d.c_out, d.c * d.k * d.k) +=
            gmat * cols.transpose();
      }
      if (g.needs(x)) {
        Eigen::MatrixXd dcols =
            MapConst(vw.data(), d.c_out, d.c * d.k * d.k).transpose() * gmat;
        col2im_add(dcols, d, g.grad_buf(x).data() + n * d.c * d.h * d.w);
      }
    }
    if (bias != kNone && g.needs(bias)) {
      Tensor& gb = g.grad_buf(bias);
      for (long n = 0; n < d.n; ++n)
        for (long c = 0; c < d.c_out; ++c) {
          const double* o = go.data() + (n * d.c_out + c) * d.ho * d.wo;
          double s = 0;
          for (long i = 0; i < d.ho * d.wo; ++i) s += o[i];
          gb[c] += s;
        }
    }
  };
  return r;
}

Graph::Ref Graph::depthwise_conv2d(Ref x, Ref w, Ref bias, int stride,
                                   int pad) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  if (vw.rank() != 3 || vw.dim(0) != vx.dim(1) || vw.dim(1) != vw.dim(2))
    throw ValidationError("depthwise_conv2d: weight " + vw.shape_str() +
                          " incompatible with input " + vx.shape_str());
  const ConvDims d =
      conv_dims(vx, vx.dim(1), vw.dim(1), stride, pad, "depthwise_conv2d");

  Tensor out(std::vector<long>{d.n, d.c, d.ho, d.wo});
  for (long n = 0; n < d.n; ++n) {
    for (long c = 0; c < d.c; ++c) {
      const double* xc = vx.data() + (n * d.c + c) * d.h * d.w;
      const double* wc = vw.data() + c * d.k * d.k;
      double* oc = out.data() + (n * d.c + c) * d.ho * d.wo;
      const double b = bias != kNone ? value(bias)[c] : 0.0;
      for (long oh = 0; oh < d.ho; ++oh) {
        for (long ow = 0; ow < d.wo; ++ow) {
          double acc = b;
          for (long i = 0; i < d.k; ++i) {
            const long hh = oh * d.stride - d.pad + i;
            if (hh < 0 || hh >= d.h) continue;
            for (long j = 0; j < d.k; ++j) {
              const long ww = ow * d.stride - d.pad + j;
              if (ww < 0 || ww >= d.w) continue;
              acc += xc[hh * d.w + ww] * wc[i * d.k + j];
            }
          }
          oc[oh * d.wo + ow] = acc;
        }
      }
    }
  }
  Ref r = push(std::move(out),
               needs(x) || needs(w) || (bias != kNone && needs(bias)));
  entries_[static_cast<size_t>(r)].backprop = [r, x, w, bias, d](Graph& g) {
    const Tensor& go = g.grad(r);
    const Tensor& vx = g.value(x);
    const Tensor& vw = g.value(w);
    const bool nx = g.needs(x), nw = g.needs(w),
               nb = bias != kNone && g.needs(bias);
    for (long n = 0; n < d.n; ++n) {
      for (long c = 0; c < d.c; ++c) {
        const double* xc = vx.data() + (n * d.c + c) * d.h * d.w;
        const double* wc = vw.data() + c * d.k * d.k;
        const double* gc = go.data() + (n * d.c + c) * d.ho * d.wo;
        double* dxc = nx ? g.grad_buf(x).data() + (n * d.c + c) * d.h * d.w
                         : nullptr;
        double* dwc = nw ? g.grad_buf(w).data() + c * d.k * d.k : nullptr;
        double bsum = 0;
        for (long oh = 0; oh < d.ho; ++oh) {
          for (long ow = 0; ow < d.wo; ++ow) {
            const double gv = gc[oh * d.wo + ow];
            bsum += gv;
            for (long i = 0; i < d.k; ++i) {
              const long hh = oh * d.stride - d.pad + i;
              if (hh < 0 || hh >= d.h) continue;
              for (long j = 0; j < d.k; ++j) {
                const long ww = ow * d.stride - d.pad + j;
                if (ww < 0 || ww >= d.w) continue;
                if (nw) dwc[i * d.k + j] += gv * xc[hh * d.w + ww];
                if (nx) dxc[hh * d.w + ww] += gv * wc[i * d.k + j];
              }
            }
          }
        }
        if (nb) g.grad_buf(bias)[c] += bsum;
      }
    }
  };
  return r;
}

Graph::Ref Graph::batchnorm2d(Ref x, Ref gamma, Ref beta, BnStats* stats,
                              BnMode mode, double momentum, double eps) {
  const Tensor& vx = value(x);
  if (vx.rank() != 4)
    throw ValidationError("batchnorm2d: input must be NCHW");
  const long n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const long m = n * h * w;
  const Tensor& vg = value(gamma);
  const Tensor& vb = value(beta);
  if (vg.numel() != c || vb.numel() != c)
    throw ValidationError("batchnorm2d: affine shape mismatch");

  std::vector<double> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (mode == BnMode::kRunning) {
    if (!stats) throw ValidationError("batchnorm2d: running mode needs stats");
    for (long ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = stats->mean[ch];
      inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(stats->var[ch] + eps);
    }
  } else {
    for (long ch = 0; ch < c; ++ch) {
      double s = 0, s2 = 0;
      for (long i = 0; i < n; ++i) {
        const double* p = vx.data() + (i * c + ch) * h * w;
        for (long j = 0; j < h * w; ++j) {
          s += p[j];
          s2 += p[j] * p[j];
        }
      }
      const double mu = s / static_cast<double>(m);
      const double var = std::max(0.0, s2 / static_cast<double>(m) - mu * mu);
      mean[static_cast<size_t>(ch)] = mu;
      inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
      if (mode == BnMode::kTrain && stats) {
        const double unbiased =
            m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                  : var;
        stats->mean[ch] = (1.0 - momentum) * stats->mean[ch] + momentum * mu;
        stats->var[ch] = (1.0 - momentum) * stats->var[ch] + momentum * unbiased;
      }
    }
  }

  // Normalized activations are kept for the backward pass.
  auto xhat = std::make_shared<Tensor>(vx.shape());
  Tensor out(vx.shape());
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      const double* p = vx.data() + (i * c + ch) * h * w;
      double* xh = xhat->data() + (i * c + ch) * h * w;
      double* o = out.data() + (i * c + ch) * h * w;
      const double mu = mean[static_cast<size_t>(ch)];
      const double is = inv_std[static_cast<size_t>(ch)];
      const double gm = vg[ch], bt = vb[ch];
      for (long j = 0; j < h * w; ++j) {
        xh[j] = (p[j] - mu) * is;
        o[j] = gm * xh[j] + bt;
      }
    }

  Ref r = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  const bool batch_grad = mode != BnMode::kRunning;
  entries_[static_cast<size_t>(r)].backprop = [r, x, gamma, beta, xhat, inv_std,
                                               n, c, h, w, m,
                                               batch_grad](Graph& g) {
    const Tensor& go = g.grad(r);
    const Tensor& vg = g.value(gamma);
    for (long ch = 0; ch < c; ++ch) {
      double s1 = 0, s2 = 0;
      for (long i = 0; i < n; ++i) {
        const double* gp = go.data() + (i * c + ch) * h * w;
        const double* xh = xhat->data() + (i * c + ch) * h * w;
        for (long j = 0; j < h * w; ++j) {
          s1 += gp[j];
          s2 += gp[j] * xh[j];
        }
      }
      if (g.needs(beta)) g.grad_buf(beta)[ch] += s1;
      if (g.needs(gamma)) g.grad_buf(gamma)[ch] += s2;
      if (g.needs(x)) {
        Tensor& gx = g.grad_buf(x);
        const double k = vg[ch] * inv_std[static_cast<size_t>(ch)];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (long i = 0; i < n; ++i) {
          const double* gp = go.data() + (i * c + ch) * h * w;
          const double* xh = xhat->data() + (i * c + ch) * h * w;
          double* dx = gx.data() + (i * c + ch) * h * w;
          for (long j = 0; j < h * w; ++j) {
            if (batch_grad)
              dx[j] += k * (gp[j] - s1 * inv_m - xh[j] * s2 * inv_m);
            else
              dx[j] += k * gp[j];
          }
        }
      }
    }
  };
  return r;
}

Graph::Ref Graph::avg_pool2d(Ref x, int kernel, int stride, int pad) {
  const Tensor& vx = value(x);
  const ConvDims d = conv_dims(vx, vx.dim(1), kernel, stride, pad, "avg_pool2d");
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  Tensor out(std::vector<long>{d.n, d.c, d.ho, d.wo});
  for (long n = 0; n < d.n; ++n)
    for (long c = 0; c < d.c; ++c) {
      const double* xc = vx.data() + (n * d.c + c) * d.h * d.w;
      double* oc = out.data() + (n * d.c + c) * d.ho * d.wo;
      for (long oh = 0; oh < d.ho; ++oh)
        for (long ow = 0; ow < d.wo; ++ow) {
          double acc = 0;
          for (long i = 0; i < d.k; ++i) {
            const long hh = oh * d.stride - d.pad + i;
            if (hh < 0 || hh >= d.h) continue;
            for (long j = 0; j < d.k; ++j) {
              const long ww = ow * d.stride - d.pad + j;
              if (ww < 0 || ww >= d.w) continue;
              acc += xc[hh * d.w + ww];
            }
          }
          oc[oh * d.wo + ow] = acc * inv;
        }
    }
  Ref r = push(std::move(out), needs(x));
  entries_[static_cast<size_t>(r)].backprop = [r, x, d, inv](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(r);
    Tensor& gx = g.grad_buf(x);
    for (long n = 0; n < d.n; ++n)
      for (long c = 0; c < d.c; ++c) {
        double* dxc = gx.data() + (n * d.c + c) * d.h * d.w;
        const double* gc = go.data() + (n * d.c + c) * d.ho * d.wo;
        for (long oh = 0; oh < d.ho; ++oh)
          for (long ow = 0; ow < d.wo; ++ow) {
            const double gv = gc[oh * d.wo + ow] * inv;
            for (long i = 0; i < d.k; ++i) {
              const long hh = oh * d.stride - d.pad + i;
              if (hh < 0 || hh >= d.h) continue;
              for (long j = 0; j < d.k; ++j) {
                const long ww = ow * d.stride - d.pad + j;
                if (ww < 0 || ww >= d.w) continue;
                dxc[hh * d.w + ww] += gv;
              }
            }
          }
      }
  };
  return r;
}

Graph::Ref Graph::max_pool2d(Ref x, int kernel, int stride, int pad) {
  const Tensor& vx = value(x);
  const ConvDims d = conv_dims(vx, vx.dim(1), kernel, stride, pad, "max_pool2d");
  Tensor out(std::vector<long>{d.n, d.c, d.ho, d.wo});
  auto argmax = std::make_shared<std::vector<long>>(
      static_cast<size_t>(out.numel()));
  long idx = 0;
  for (long n = 0; n < d.n; ++n)
    for (long c = 0; c < d.c; ++c) {
      const double* xc = vx.data() + (n * d.c + c) * d.h * d.w;
      const long base = (n * d.c + c) * d.h * d.w;
      for (long oh = 0; oh < d.ho; ++oh)
        for (long ow = 0; ow < d.wo; ++ow, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          long best_at = -1;
          for (long i = 0; i < d.k; ++i) {
            const long hh = oh * d.stride - d.pad + i;
            if (hh < 0 || hh >= d.h) continue;
            for (long j = 0; j < d.k; ++j) {
              const long ww = ow * d.stride - d.pad + j;
              if (ww < 0 || ww >= d.w) continue;
              const double v = xc[hh * d.w + ww];
              if (v > best) {
                best = v;
                best_at = base + hh * d.w + ww;
              }
            }
          }
          out[idx] = best;
          (*argmax)[static_cast<size_t>(idx)] = best_at;
        }
    }
  Ref r = push(std::move(out), needs(x));
  entries_[static_cast<size_t>(r)].backprop = [r, x, argmax](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(r);
    Tensor& gx = g.grad_buf(x);
    for (long i = 0; i < go.numel(); ++i)
      gx[(*argmax)[static_cast<size_t>(i)]] += go[i];
  };
  return r;
}

Graph::Ref Graph::adaptive_avg_pool2d(Ref x, int out_hw) {
  const Tensor& vx = value(x);
  if (vx.rank() != 4)
    throw ValidationError("adaptive_avg_pool2d: input must be NCHW");
  const long n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
  const long t = out_hw;
  Tensor out(std::vector<long>{n, c, t, t});
  auto win = [](long i, long size, long target) {
    const long lo = i * size / target;
    const long hi = ((i + 1) * size + target - 1) / target;
    return std::pair<long, long>{lo, hi};
  };
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      const double* xc = vx.data() + (i * c + ch) * h * w;
      double* oc = out.data() + (i * c + ch) * t * t;
      for (long oh = 0; oh < t; ++oh) {
        auto [h0, h1] = win(oh, h, t);
        for (long ow = 0; ow < t; ++ow) {
          auto [w0, w1] = win(ow, w, t);
          double acc = 0;
          for (long hh = h0; hh < h1; ++hh)
            for (long ww = w0; ww < w1; ++ww) acc += xc[hh * w + ww];
          oc[oh * t + ow] = acc / static_cast<double>((h1 - h0) * (w1 - w0));
        }
      }
    }
  Ref r = push(std::move(out), needs(x));
  entries_[static_cast<size_t>(r)].backprop = [r, x, n, c, h, w, t,
                                               win](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(r);
    Tensor& gx = g.grad_buf(x);
    for (long i = 0; i < n; ++i)
      for (long ch = 0; ch < c; ++ch) {
        double* dxc = gx.data() + (i * c + ch) * h * w;
        const double* gc = go.data() + (i * c + ch) * t * t;
        for (long oh = 0; oh < t; ++oh) {
          auto [h0, h1] = win(oh, h, t);
          for (long ow = 0; ow < t; ++ow) {
            auto [w0, w1] = win(ow, w, t);
            const double gv = gc[oh * t + ow] /
                              static_cast<double>((h1 - h0) * (w1 - w0));
            for (long hh = h0; hh < h1; ++hh)
              for (long ww = w0; ww < w1; ++ww) dxc[hh * w + ww] += gv;
          }
        }
      }
  };
  return r;
}

Graph::Ref Graph::global_avg_pool(Ref x) {
  const Tensor& vx = value(x);
  if (vx.rank() != 4)
    throw ValidationError("global_avg_pool: input must be NCHW");
  const long n = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
  Tensor out(std::vector<long>{n, c});
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      const double* p = vx.data() + (i * c + ch) * hw;
      double s = 0;
      for (long j = 0; j < hw; ++j) s += p[j];
      out[i * c + ch] = s / static_cast<double>(hw);
    }
  Ref r = push(std::move(out), needs(x));
  entries_[static_cast<size_t>(r)].backprop = [r, x, n, c, hw](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(r);
    Tensor& gx = g.grad_buf(x);
    for (long i = 0; i < n; ++i)
      for (long ch = 0; ch < c; ++ch) {
        const double gv = go[i * c + ch] / static_cast<double>(hw);
        double* p = gx.data() + (i * c + ch) * hw;
        for (long j = 0; j < hw; ++j) p[j] += gv;
      }
  };
  return r;
}

Graph::Ref Graph::concat_channels(const std::vector<Ref>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: empty input list");
  const Tensor& first = value(xs[0]);
  if (first.rank() != 4)
    throw ValidationError("concat_channels: inputs must be NCHW");
  const long n = first.dim(0), h = first.dim(2), w = first.dim(3);
  long c_total = 0;
  bool any_grad = false;
  for (Ref x : xs) {
    const Tensor& v = value(x);
    if (v.dim(0) != n || v.dim(2) != h || v.dim(3) != w)
      throw ValidationError("concat_channels: mismatched shapes");
    c_total += v.dim(1);
    any_grad = any_grad || needs(x);
  }
  Tensor out(std::vector<long>{n, c_total, h, w});
  long offset = 0;
  for (Ref x : xs) {
    const Tensor& v = value(x);
    const long ci = v.dim(1);
    for (long i = 0; i < n; ++i)
      std::copy(v.data() + i * ci * h * w, v.data() + (i + 1) * ci * h * w,
                out.data() + (i * c_total + offset) * h * w);
    offset += ci;
  }
  Ref r = push(std::move(out), any_grad);
  std::vector<Ref> inputs = xs;
  entries_[static_cast<size_t>(r)].backprop = [r, inputs, n, c_total, h,
                                               w](Graph& g) {
    const Tensor& go = g.grad(r);
    long offset = 0;
    for (Ref x : inputs) {
      const long ci = g.value(x).dim(1);
      if (g.needs(x)) {
        Tensor& gx = g.grad_buf(x);
        for (long i = 0; i < n; ++i) {
          const double* src = go.data() + (i * c_total + offset) * h * w;
          double* dst = gx.data() + i * ci * h * w;
          for (long j = 0; j < ci * h * w; ++j) dst[j] += src[j];
        }
      }
      offset += ci;
    }
  };
  return r;
}

Graph::Ref Graph::flatten(Ref x) {
  const Tensor& vx = value(x);
  const long n = vx.dim(0);
  const long f = vx.numel() / n;
  Tensor out(std::vector<long>{n, f});
  std::copy(vx.data(), vx.data() + vx.numel(), out.data());
  Ref r = push(std::move(out), needs(x));
  entries_[static_cast<size_t>(r)].backprop = [r, x](Graph& g) {
    if (!g.needs(x)) return;
    const Tensor& go = g.grad(r);
    Tensor& gx = g.grad_buf(x);
    for (long i = 0; i < go.numel(); ++i) gx[i] += go[i];
  };
  return r;
}

Graph::Ref Graph::linear(Ref x, Ref w, Ref bias) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(1))
    throw ValidationError("linear: incompatible shapes " + vx.shape_str() +
                          " and " + vw.shape_str());
  const long n = vx.dim(0), f = vx.dim(1), o = vw.dim(0);
  Tensor out(std::vector<long>{n, o});
  MapMat(out.data(), n, o) =
      MapConst(vx.data(), n, f) * MapConst(vw.data(), o, f).transpose();
  if (bias != kNone) {
    const Tensor& vb = value(bias);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < o; ++j) out[i * o + j] += vb[j];
  }
  Ref r = push(std::move(out),
               needs(x) || needs(w) || (bias != kNone && needs(bias)));
  entries_[static_cast<size_t>(r)].backprop = [r, x, w, bias, n, f, o](Graph& g) {
    MapConst go(g.grad(r).data(), n, o);
    if (g.needs(x))
      MapMat(g.grad_buf(x).data(), n, f) +=
          go * MapConst(g.value(w).data(), o, f);
    if (g.needs(w))
      MapMat(g.grad_buf(w).data(), o, f) +=
          go.transpose() * MapConst(g.value(x).data(), n, f);
    if (bias != kNone && g.needs(bias)) {
      Tensor& gb = g.grad_buf(bias);
      for (long i = 0; i < n; ++i)
        for (long j = 0; j < o; ++j) gb[j] += go(i, j);
    }
  };
  return r;
}

Graph::Ref Graph::softmax_cross_entropy(Ref logits, std::vector<int> labels) {
  const Tensor& vz = value(logits);
  if (vz.rank() != 2 || vz.dim(0) != static_cast<long>(labels.size()))
    throw ValidationError("softmax_cross_entropy: logits " + vz.shape_str() +
                          " do not match " + std::to_string(labels.size()) +
                          " labels");
  const long n = vz.dim(0), k = vz.dim(1);
  auto probs = std::make_shared<Tensor>(vz.shape());
  double loss = 0;
  for (long i = 0; i < n; ++i) {
    const double* z = vz.data() + i * k;
    double zmax = z[0];
    for (long j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0;
    for (long j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(denom);
    for (long j = 0; j < k; ++j)
      (*probs)[i * k + j] = std::exp(z[j] - lse);
    loss += lse - z[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(n);
  Ref r = push(Tensor::scalar(loss), needs(logits));
  entries_[static_cast<size_t>(r)].backprop = [r, logits, probs,
                                               labels = std::move(labels), n,
                                               k](Graph& g) {
    if (!g.needs(logits)) return;
    const double go = g.grad(r)[0];
    Tensor& gz = g.grad_buf(logits);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < k; ++j) {
        double v = (*probs)[i * k + j];
        if (j == labels[static_cast<size_t>(i)]) v -= 1.0;
        gz[i * k + j] += go * v * inv_n;
      }
    }
  };
  return r;
}

Graph::Ref Graph::log_softmax_prefix(Ref a, long valid) {
  const Tensor& va = value(a);
  if (va.rank() != 2 || va.dim(0) != 1 || valid < 1 || valid > va.dim(1))
    throw ValidationError("log_softmax_prefix: bad arguments for " +
                          va.shape_str());
  double zmax = va[0];
  for (long j = 1; j < valid; ++j) zmax = std::max(zmax, va[j]);
  double denom = 0;
  for (long j = 0; j < valid; ++j) denom += std::exp(va[j] - zmax);
  const double lse = zmax + std::log(denom);
  Tensor out(std::vector<long>{1, valid});
  for (long j = 0; j < valid; ++j) out[j] = va[j] - lse;
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(valid));
  for (long j = 0; j < valid; ++j)
    (*probs)[static_cast<size_t>(j)] = std::exp(out[j]);
  Ref r = push(std::move(out), needs(a));
  entries_[static_cast<size_t>(r)].backprop = [r, a, probs, valid](Graph& g) {
    if (!g.needs(a)) return;
    const Tensor& go = g.grad(r);
    Tensor& ga = g.grad_buf(a);
    double gsum = 0;
    for (long j = 0; j < valid; ++j) gsum += go[j];
    for (long j = 0; j < valid; ++j)
      ga[j] += go[j] - (*probs)[static_cast<size_t>(j)] * gsum;
  };
  return r;
}

std::vector<Parameter*> Graph::bound_parameters() const {
  std::vector<Parameter*> out;
  for (const Entry& e : entries_) {
    if (e.bound && std::find(out.begin(), out.end(), e.bound) == out.end())
      out.push_back(e.bound);
  }
  return out;
}

void Graph::backward(Ref loss) {
  if (value(loss).numel() != 1)
    throw ValidationError("backward: loss must be scalar");
  grad_buf(loss)[0] = 1.0;
  for (long i = loss; i >= 0; --i) {
    Entry& e = entries_[static_cast<size_t>(i)];
    if (e.grad_ready && e.needs_grad && e.backprop) e.backprop(*this);
  }
}

}  // namespace usnas::nn
