#pragma once

#include <cmath>
#include <vector>

#include "ews/tensor.hpp"

namespace ews {

// Scalar-generic softmax/loss kernels. The float entry points below wrap
// them; tests instantiate the double versions for finite-difference oracles.
namespace detail {

template <typename T>
void log_softmax(const T* logits, int n, T* out) {
  T m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
  T lse = m + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

// Mean of -log softmax(logits)[label]; optional gradient w.r.t. logits.
template <typename T>
T cross_entropy_rows(const T* logits, const int* labels, int rows, int cols,
                     T* dlogits = nullptr) {
  std::vector<T> ls(static_cast<std::size_t>(cols));
  T total = 0;
  for (int r = 0; r < rows; ++r) {
    const T* row = logits + static_cast<std::size_t>(r) * cols;
    log_softmax(row, cols, ls.data());
    total -= ls[static_cast<std::size_t>(labels[r])];
    if (dlogits) {
      T* drow = dlogits + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c)
        drow[c] = std::exp(ls[static_cast<std::size_t>(c)]) / rows;
      drow[labels[r]] -= T(1) / rows;
    }
  }
  return total / rows;
}

// Mean KL(softmax(teacher) || softmax(student)); the teacher is a constant
// target, the optional gradient is w.r.t. the student logits only.
template <typename T>
T kl_divergence_rows(const T* teacher, const T* student, int rows, int cols,
                     T* dstudent = nullptr) {
  std::vector<T> lp(static_cast<std::size_t>(cols)),
      lq(static_cast<std::size_t>(cols));
  T total = 0;
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    log_softmax(teacher + off, cols, lp.data());
    log_softmax(student + off, cols, lq.data());
    T row_kl = 0, sum_p = 0;
    for (int c = 0; c < cols; ++c) {
      T p = std::exp(lp[static_cast<std::size_t>(c)]);
      row_kl += p * (lp[static_cast<std::size_t>(c)] -
                     lq[static_cast<std::size_t>(c)]);
      sum_p += p;
      if (dstudent)
        dstudent[off + static_cast<std::size_t>(c)] =
            (std::exp(lq[static_cast<std::size_t>(c)]) - p) / rows;
    }
    (void)sum_p;
    total += row_kl;
  }
  return total / rows;
}

}  // namespace detail

// pre: labels in [0, num_classes). Returns the batch-mean CE; when dlogits
// is non-null it is resized and filled with the gradient.
float cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                    Tensor* dlogits = nullptr);

float kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                    Tensor* dstudent = nullptr);

// Fraction of argmax(logits) == label; argmax ties break to the lowest index.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

int argmax_row(const Tensor& logits, int row);

}  // namespace ews
