#include "ews/losses.hpp"

#include <stdexcept>

namespace ews {

float cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                    Tensor* dlogits) {
  const int rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<int>(labels.size()) != rows)
    throw std::invalid_argument("label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= cols)
      throw std::invalid_argument("label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(cols) + ")");
  if (dlogits) dlogits->reshape({rows, cols});
  return detail::cross_entropy_rows(logits.data(), labels.data(), rows, cols,
                                    dlogits ? dlogits->data() : nullptr);
}

float kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                    Tensor* dstudent) {
  if (!teacher_logits.same_shape(student_logits))
    throw std::invalid_argument("teacher/student logit shapes differ");
  const int rows = teacher_logits.dim(0), cols = teacher_logits.dim(1);
  if (dstudent) dstudent->reshape({rows, cols});
  return detail::kl_divergence_rows(teacher_logits.data(),
                                    student_logits.data(), rows, cols,
                                    dstudent ? dstudent->data() : nullptr);
}

int argmax_row(const Tensor& logits, int row) {
  const int cols = logits.dim(1);
  const float* p = logits.data() + static_cast<std::size_t>(row) * cols;
  int best = 0;
  for (int c = 1; c < cols; ++c)
    if (p[c] > p[best]) best = c;  // ties keep the lowest index
  return best;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int rows = logits.dim(0);
  int correct = 0;
  for (int r = 0; r < rows; ++r)
    if (argmax_row(logits, r) == labels[static_cast<std::size_t>(r)]) ++correct;
  return rows == 0 ? 0.0 : static_cast<double>(correct) / rows;
}

}  // namespace ews
