#pragma once

#include "spangrad/linalg.hpp"

namespace spangrad {

// Masked score entries take this value instead of -inf so that block
// arithmetic on masked matrices stays finite.
inline constexpr double kMaskValue = -1e9;

// exp(x) rounds to zero below this.
inline constexpr double kExpUnderflow = -745.2;

// Sets entries above the diagonal (j > i) to kMaskValue.
Matrix apply_causal_mask(const Matrix& scores);

// Row-wise softmax. A row whose largest entry is at or below kMaskValue is
// fully masked and raises DegenerateRow.
Matrix softmax_rows(const Matrix& scores);

// Gradient of L w.r.t. the logits given the softmax output and dL/dA:
// A .* (dA - rowsum(A .* dA)).
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

}  // namespace spangrad
