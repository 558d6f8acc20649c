#pragma once

// Internal layer kernels. Convolutions take explicit input/output channel
// selections so that subnet forwards/backwards only pay for the channels
// they keep; the full network passes the identity selection.

#include <vector>

#include "ews/tensor.hpp"

namespace ews::kernels {

struct ConvShape {
  int ksize, stride, pad;
  int out_h(int in_h) const { return (in_h + 2 * pad - ksize) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad - ksize) / stride + 1; }
};

// out must be preshaped [N, out_c_total, OH, OW]; rows outside sel_out are
// left untouched (callers pass a zeroed tensor).
void conv_forward(const Tensor& in, const Tensor& weight, const ConvShape& cs,
                  const std::vector<int>& sel_in,
                  const std::vector<int>& sel_out, Tensor& out);

// Accumulates into dweight (when non-null) and din (when non-null; only the
// sel_in channels receive gradient).
void conv_backward(const Tensor& in, const Tensor& weight, const ConvShape& cs,
                   const std::vector<int>& sel_in,
                   const std::vector<int>& sel_out, const Tensor& dout,
                   Tensor* dweight, Tensor* din);

// Batch statistics over the selected channels of x; deselected channels of
// `out` are left untouched. mean/invstd are full-length (C) vectors.
void bn_forward_train(const Tensor& x, const std::vector<int>& sel,
                      const float* gamma, const float* beta, float eps,
                      bool relu, Tensor& out, std::vector<float>& mean,
                      std::vector<float>& invstd);

void bn_forward_eval(const Tensor& x, const std::vector<int>& sel,
                     const float* gamma, const float* beta,
                     const float* run_mean, const float* run_var, float eps,
                     bool relu, Tensor& out);

// Backward through (bn [+ relu]). `out` is the unit output (post-relu when
// relu was applied), `x` the conv output, mean/invstd the statistics used in
// forward. train selects the batch-stat (vs frozen-stat) gradient. dgamma /
// dbeta / dx accumulate; dx may be null.
void bn_backward(const Tensor& x, const Tensor& out, const Tensor& dout,
                 const std::vector<int>& sel, const float* gamma,
                 const std::vector<float>& mean,
                 const std::vector<float>& invstd, bool relu, bool train,
                 float* dgamma, float* dbeta, Tensor* dx);

// Global average pool [N,C,H,W] -> [N,C] and its backward.
void global_avg_pool(const Tensor& in, Tensor& out);
void global_avg_pool_backward(const Tensor& dout, int h, int w, Tensor& din);

// logits = pooled * W^T + b, W is [classes, C].
void linear_forward(const Tensor& pooled, const Tensor& weight,
                    const Tensor& bias, Tensor& logits);
void linear_backward(const Tensor& pooled, const Tensor& weight,
                     const Tensor& dlogits, Tensor* dweight, Tensor* dbias,
                     Tensor* dpooled);

}  // namespace ews::kernels
