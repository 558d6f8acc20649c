#include "kernels.hpp"

#include <Eigen/Dense>

#include <cassert>
#include <cstring>

namespace ews::kernels {

using MatMap = Eigen::Map<
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

namespace {

// Scratch buffers grow monotonically and are reused across calls.
thread_local std::vector<float> g_col, g_packed_w, g_packed_out, g_dcol,
    g_packed_dw;

float* scratch(std::vector<float>& buf, std::size_t n) {
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// col is [sel_in*k*k, N*OH*OW], columns ordered (n, oh, ow).
void im2col(const Tensor& in, const ConvShape& cs,
            const std::vector<int>& sel_in, float* col, int oh, int ow) {
  const int n_imgs = in.dim(0), in_h = in.dim(2), in_w = in.dim(3);
  const int k = cs.ksize;
  const std::size_t cols = static_cast<std::size_t>(n_imgs) * oh * ow;
  for (std::size_t s = 0; s < sel_in.size(); ++s) {
    const int c = sel_in[s];
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* row = col + ((s * k + kh) * k + kw) * cols;
        for (int n = 0; n < n_imgs; ++n) {
          const float* src = &in.at(n, c, 0, 0);
          float* dst = row + static_cast<std::size_t>(n) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const int ih = y * cs.stride - cs.pad + kh;
            if (ih < 0 || ih >= in_h) {
              std::memset(dst + static_cast<std::size_t>(y) * ow, 0,
                          sizeof(float) * static_cast<std::size_t>(ow));
              continue;
            }
            const float* srow = src + static_cast<std::size_t>(ih) * in_w;
            float* drow = dst + static_cast<std::size_t>(y) * ow;
            for (int x = 0; x < ow; ++x) {
              const int iw = x * cs.stride - cs.pad + kw;
              drow[x] = (iw < 0 || iw >= in_w) ? 0.0f : srow[iw];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of dcol (same layout as im2col output) back into din.
void col2im_add(const float* dcol, const ConvShape& cs,
                const std::vector<int>& sel_in, Tensor& din, int oh, int ow) {
  const int n_imgs = din.dim(0), in_h = din.dim(2), in_w = din.dim(3);
  const int k = cs.ksize;
  const std::size_t cols = static_cast<std::size_t>(n_imgs) * oh * ow;
  for (std::size_t s = 0; s < sel_in.size(); ++s) {
    const int c = sel_in[s];
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const float* row = dcol + ((s * k + kh) * k + kw) * cols;
        for (int n = 0; n < n_imgs; ++n) {
          float* dst = &din.at(n, c, 0, 0);
          const float* src = row + static_cast<std::size_t>(n) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const int ih = y * cs.stride - cs.pad + kh;
            if (ih < 0 || ih >= in_h) continue;
            float* drow = dst + static_cast<std::size_t>(ih) * in_w;
            const float* srow = src + static_cast<std::size_t>(y) * ow;
            for (int x = 0; x < ow; ++x) {
              const int iw = x * cs.stride - cs.pad + kw;
              if (iw >= 0 && iw < in_w) drow[iw] += srow[x];
            }
          }
        }
      }
    }
  }
}

// Weight rows for sel_out, columns restricted to sel_in kernel positions.
void pack_weight(const Tensor& weight, int k, const std::vector<int>& sel_in,
                 const std::vector<int>& sel_out, float* packed) {
  const int in_c = weight.dim(1);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  const std::size_t row_len = sel_in.size() * kk;
  for (std::size_t r = 0; r < sel_out.size(); ++r) {
    const float* wrow =
        weight.data() + static_cast<std::size_t>(sel_out[r]) * in_c * kk;
    for (std::size_t s = 0; s < sel_in.size(); ++s) {
      std::memcpy(packed + r * row_len + s * kk,
                  wrow + static_cast<std::size_t>(sel_in[s]) * kk,
                  sizeof(float) * kk);
    }
  }
}

}  // namespace

void conv_forward(const Tensor& in, const Tensor& weight, const ConvShape& cs,
                  const std::vector<int>& sel_in,
                  const std::vector<int>& sel_out, Tensor& out) {
  const int n_imgs = in.dim(0);
  const int oh = cs.out_h(in.dim(2)), ow = cs.out_w(in.dim(3));
  assert(out.dim(2) == oh && out.dim(3) == ow);
  const std::size_t cols = static_cast<std::size_t>(n_imgs) * oh * ow;
  const std::size_t rows =
      sel_in.size() * static_cast<std::size_t>(cs.ksize) * cs.ksize;

  float* col = scratch(g_col, rows * cols);
  im2col(in, cs, sel_in, col, oh, ow);
  float* wp = scratch(g_packed_w, sel_out.size() * rows);
  pack_weight(weight, cs.ksize, sel_in, sel_out, wp);
  float* op = scratch(g_packed_out, sel_out.size() * cols);

  MatMap o(op, static_cast<Eigen::Index>(sel_out.size()),
           static_cast<Eigen::Index>(cols));
  ConstMatMap w(wp, static_cast<Eigen::Index>(sel_out.size()),
                static_cast<Eigen::Index>(rows));
  ConstMatMap c(col, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
  o.noalias() = w * c;

  const std::size_t img_sz = static_cast<std::size_t>(oh) * ow;
  for (std::size_t r = 0; r < sel_out.size(); ++r)
    for (int n = 0; n < n_imgs; ++n)
      std::memcpy(&out.at(n, sel_out[r], 0, 0),
                  op + r * cols + static_cast<std::size_t>(n) * img_sz,
                  sizeof(float) * img_sz);
}

void conv_backward(const Tensor& in, const Tensor& weight, const ConvShape& cs,
                   const std::vector<int>& sel_in,
                   const std::vector<int>& sel_out, const Tensor& dout,
                   Tensor* dweight, Tensor* din) {
  const int n_imgs = in.dim(0);
  const int oh = cs.out_h(in.dim(2)), ow = cs.out_w(in.dim(3));
  const std::size_t cols = static_cast<std::size_t>(n_imgs) * oh * ow;
  const std::size_t kk = static_cast<std::size_t>(cs.ksize) * cs.ksize;
  const std::size_t rows = sel_in.size() * kk;
  const std::size_t img_sz = static_cast<std::size_t>(oh) * ow;

  // Gather dout rows for the selected output channels.
  float* doutp = scratch(g_packed_out, sel_out.size() * cols);
  for (std::size_t r = 0; r < sel_out.size(); ++r)
    for (int n = 0; n < n_imgs; ++n)
      std::memcpy(doutp + r * cols + static_cast<std::size_t>(n) * img_sz,
                  &dout.at(n, sel_out[r], 0, 0), sizeof(float) * img_sz);
  ConstMatMap dyp(doutp, static_cast<Eigen::Index>(sel_out.size()),
                 static_cast<Eigen::Index>(cols));

  if (dweight) {
    float* col = scratch(g_col, rows * cols);
    im2col(in, cs, sel_in, col, oh, ow);
    ConstMatMap c(col, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
    float* dwp = scratch(g_packed_dw, sel_out.size() * rows);
    MatMap dw(dwp, static_cast<Eigen::Index>(sel_out.size()),
              static_cast<Eigen::Index>(rows));
    dw.noalias() = dyp * c.transpose();
    const int in_c = weight.dim(1);
    for (std::size_t r = 0; r < sel_out.size(); ++r) {
      float* wrow =
          dweight->data() + static_cast<std::size_t>(sel_out[r]) * in_c * kk;
      for (std::size_t s = 0; s < sel_in.size(); ++s) {
        float* dst = wrow + static_cast<std::size_t>(sel_in[s]) * kk;
        const float* src = dwp + r * rows + s * kk;
        for (std::size_t i = 0; i < kk; ++i) dst[i] += src[i];
      }
    }
  }

  if (din) {
    float* wp = scratch(g_packed_w, sel_out.size() * rows);
    pack_weight(weight, cs.ksize, sel_in, sel_out, wp);
    ConstMatMap w(wp, static_cast<Eigen::Index>(sel_out.size()),
                  static_cast<Eigen::Index>(rows));
    float* dcol = scratch(g_dcol, rows * cols);
    MatMap dc(dcol, static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
    dc.noalias() = w.transpose() * dyp;
    col2im_add(dcol, cs, sel_in, *din, oh, ow);
  }
}

void bn_forward_train(const Tensor& x, const std::vector<int>& sel,
                      const float* gamma, const float* beta, float eps,
                      bool relu, Tensor& out, std::vector<float>& mean,
                      std::vector<float>& invstd) {
  const int n_imgs = x.dim(0), c_total = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double cnt = static_cast<double>(n_imgs) * h * w;
  mean.assign(static_cast<std::size_t>(c_total), 0.0f);
  invstd.assign(static_cast<std::size_t>(c_total), 0.0f);
  for (int c : sel) {
    double s = 0.0, s2 = 0.0;
    for (int n = 0; n < n_imgs; ++n) {
      const float* p = &x.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        s += p[i];
        s2 += static_cast<double>(p[i]) * p[i];
      }
    }
    const float m = static_cast<float>(s / cnt);
    const float var = static_cast<float>(s2 / cnt - (s / cnt) * (s / cnt));
    const float is = 1.0f / std::sqrt(std::max(var, 0.0f) + eps);
    mean[static_cast<std::size_t>(c)] = m;
    invstd[static_cast<std::size_t>(c)] = is;
    const float g = gamma[c] * is, b = beta[c] - gamma[c] * is * m;
    for (int n = 0; n < n_imgs; ++n) {
      const float* p = &x.at(n, c, 0, 0);
      float* q = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        float v = g * p[i] + b;
        q[i] = relu ? std::max(v, 0.0f) : v;
      }
    }
  }
}

void bn_forward_eval(const Tensor& x, const std::vector<int>& sel,
                     const float* gamma, const float* beta,
                     const float* run_mean, const float* run_var, float eps,
                     bool relu, Tensor& out) {
  const int n_imgs = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c : sel) {
    const float is = 1.0f / std::sqrt(run_var[c] + eps);
    const float g = gamma[c] * is, b = beta[c] - gamma[c] * is * run_mean[c];
    for (int n = 0; n < n_imgs; ++n) {
      const float* p = &x.at(n, c, 0, 0);
      float* q = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        float v = g * p[i] + b;
        q[i] = relu ? std::max(v, 0.0f) : v;
      }
    }
  }
}

void bn_backward(const Tensor& x, const Tensor& out, const Tensor& dout,
                 const std::vector<int>& sel, const float* gamma,
                 const std::vector<float>& mean,
                 const std::vector<float>& invstd, bool relu, bool train,
                 float* dgamma, float* dbeta, Tensor* dx) {
  const int n_imgs = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double cnt = static_cast<double>(n_imgs) * h * w;
  for (int c : sel) {
    const float m = mean[static_cast<std::size_t>(c)];
    const float is = invstd[static_cast<std::size_t>(c)];
    double s1 = 0.0, s2 = 0.0;
    for (int n = 0; n < n_imgs; ++n) {
      const float* px = &x.at(n, c, 0, 0);
      const float* po = &out.at(n, c, 0, 0);
      const float* pd = &dout.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        float dy = pd[i];
        if (relu && po[i] <= 0.0f) dy = 0.0f;
        s1 += dy;
        s2 += static_cast<double>(dy) * ((px[i] - m) * is);
      }
    }
    dgamma[c] += static_cast<float>(s2);
    dbeta[c] += static_cast<float>(s1);
    if (!dx) continue;
    const float g = gamma[c];
    const float k1 = train ? static_cast<float>(s1 / cnt) : 0.0f;
    const float k2 = train ? static_cast<float>(s2 / cnt) : 0.0f;
    for (int n = 0; n < n_imgs; ++n) {
      const float* px = &x.at(n, c, 0, 0);
      const float* po = &out.at(n, c, 0, 0);
      const float* pd = &dout.at(n, c, 0, 0);
      float* pq = &dx->at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        float dy = pd[i];
        if (relu && po[i] <= 0.0f) dy = 0.0f;
        const float xh = (px[i] - m) * is;
        pq[i] += g * is * (dy - k1 - xh * k2);
      }
    }
  }
}

void global_avg_pool(const Tensor& in, Tensor& out) {
  const int n_imgs = in.dim(0), c_total = in.dim(1);
  const std::size_t plane =
      static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  out.reshape({n_imgs, c_total});
  for (int n = 0; n < n_imgs; ++n)
    for (int c = 0; c < c_total; ++c) {
      const float* p = &in.at(n, c, 0, 0);
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[static_cast<std::size_t>(n) * c_total + c] =
          static_cast<float>(s / static_cast<double>(plane));
    }
}

void global_avg_pool_backward(const Tensor& dout, int h, int w, Tensor& din) {
  const int n_imgs = din.dim(0), c_total = din.dim(1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float scale = 1.0f / static_cast<float>(plane);
  for (int n = 0; n < n_imgs; ++n)
    for (int c = 0; c < c_total; ++c) {
      const float g =
          dout[static_cast<std::size_t>(n) * c_total + c] * scale;
      float* p = &din.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) p[i] += g;
    }
}

void linear_forward(const Tensor& pooled, const Tensor& weight,
                    const Tensor& bias, Tensor& logits) {
  const int n_imgs = pooled.dim(0), c_total = pooled.dim(1);
  const int classes = weight.dim(0);
  logits.reshape({n_imgs, classes});
  ConstMatMap x(pooled.data(), n_imgs, c_total);
  ConstMatMap w(weight.data(), classes, c_total);
  MatMap y(logits.data(), n_imgs, classes);
  y.noalias() = x * w.transpose();
  for (int n = 0; n < n_imgs; ++n)
    for (int k = 0; k < classes; ++k)
      logits[static_cast<std::size_t>(n) * classes + k] += bias[k];
}

void linear_backward(const Tensor& pooled, const Tensor& weight,
                     const Tensor& dlogits, Tensor* dweight, Tensor* dbias,
                     Tensor* dpooled) {
  const int n_imgs = pooled.dim(0), c_total = pooled.dim(1);
  const int classes = weight.dim(0);
  ConstMatMap x(pooled.data(), n_imgs, c_total);
  ConstMatMap w(weight.data(), classes, c_total);
  ConstMatMap dy(dlogits.data(), n_imgs, classes);
  if (dweight) {
    MatMap dw(dweight->data(), classes, c_total);
    dw.noalias() += dy.transpose() * x;
  }
  if (dbias)
    for (int n = 0; n < n_imgs; ++n)
      for (int k = 0; k < classes; ++k)
        (*dbias)[k] += dlogits[static_cast<std::size_t>(n) * classes + k];
  if (dpooled) {
    MatMap dxm(dpooled->data(), n_imgs, c_total);
    dxm.noalias() += dy * w;
  }
}

}  // namespace ews::kernels
