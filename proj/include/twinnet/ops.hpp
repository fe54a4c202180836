#pragma once

#include <span>
#include <utility>

#include "twinnet/tape.hpp"

// Differentiable tensor operations. Every op computes its result eagerly,
// validates the output for non-finite values (fail fast, op named), and, when
// any input is tape-tracked, records the adjoint rule. Ops on constants
// return constants, so evaluation code runs gradient-free by simply not
// watching parameters.
namespace twinnet::ad {

// Test hook: when nonzero, every tanh-derivative adjoint (standalone op and
// the fused cell candidates) is scaled by this factor, deliberately
// corrupting gradients (negative control for grad checks).
void set_corrupt_tanh_backward(double factor);
double corrupt_tanh_backward();

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <class T>
Tensor<T> tanh(const Tensor<T>& x);

template <class T>
Tensor<T> sum(const Tensor<T>& x);

// Values pass through; adjoints do not. Result is a constant sharing storage.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x);

// x[B×I]·w[I×O] + b[O] broadcast over rows.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// x[B×I]·wx[I×G] + h[B×H]·wh[H×G] + b[G]; the fused gate pre-activation.
template <class T>
Tensor<T> gates_linear(const Tensor<T>& x, const Tensor<T>& wx,
                       const Tensor<T>& h, const Tensor<T>& wh,
                       const Tensor<T>& b);

// preact[B×4H] packed [i|f|g|o]; returns (h', c').
template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& preact,
                                          const Tensor<T>& c_prev);

// px = x·Wx + bx, ph = h·Wh + bh, both [B×3H] packed [r|z|n]; returns h'.
template <class T>
Tensor<T> gru_cell(const Tensor<T>& px, const Tensor<T>& ph,
                   const Tensor<T>& h_prev);

template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int32_t> ids);

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

// Σ over rows with mask[r] != 0 of −log softmax(logits[r])[targets[r]].
// Max-subtraction stabilized; returns a scalar.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int32_t> targets,
                                const std::vector<T>& mask);

// logits [B×1] (or [B]); targets in {0,1}. Softplus-stabilized.
template <class T>
Tensor<T> bernoulli_cross_entropy(const Tensor<T>& logits,
                                  std::span<const int32_t> targets,
                                  const std::vector<T>& mask);

// Σ_masked ‖a_r − b_r‖₂. The gradient at a_r == b_r is zero (subgradient).
// Mask entries act as per-row weights, so 0/1 masks and 1/T weights both work.
template <class T>
Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b,
                      const std::vector<T>& mask);

// Per-row Euclidean norms, [B×d] → [B]; zero subgradient at zero rows.
template <class T>
Tensor<T> row_norms(const Tensor<T>& x);

template <class T>
Tensor<T> masked_sum(const Tensor<T>& x, const std::vector<T>& mask);

}  // namespace twinnet::ad
