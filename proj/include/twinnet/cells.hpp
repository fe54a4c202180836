#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twinnet/data.hpp"
#include "twinnet/ops.hpp"

namespace twinnet::rnn {

enum class CellKind { kLstm, kGru };
enum class HeadKind { kSoftmax, kBernoulli };
enum class Direction { kForward, kBackward };
enum class InitScheme { kUniformScaled, kOrthogonalRecurrent };

CellKind parse_cell_kind(const std::string& s);
InitScheme parse_init_scheme(const std::string& s);

// Gate packing: LSTM [i|f|g|o] (4·hidden), GRU [r|z|n] (3·hidden).
template <class T>
struct CellParams {
  CellKind kind = CellKind::kLstm;
  int64_t input_size = 0, hidden = 0;
  Tensor<T> w_ih;     // input_size × gates·hidden
  Tensor<T> w_hh;     // hidden × gates·hidden
  Tensor<T> bias_ih;  // gates·hidden
  Tensor<T> bias_hh;  // gates·hidden; GRU only (undefined for LSTM)
};

template <class T>
struct OutputHead {
  HeadKind kind = HeadKind::kSoftmax;
  int64_t classes = 0;  // K for softmax, 1 for Bernoulli pixels
  Tensor<T> w;          // hidden × classes
  Tensor<T> b;          // classes
};

template <class T>
struct RnnStack {
  Direction dir = Direction::kForward;
  int64_t vocab_size = 0, embed_dim = 0;
  int64_t cond_dim = 0, cond_proj_dim = 0;  // proj 0 → raw conditioning
  Tensor<T> embedding;                      // vocab_size × embed_dim
  Tensor<T> cond_proj_w, cond_proj_b;       // defined iff cond_proj_dim > 0
  std::vector<CellParams<T>> layers;
};

// Top-layer states aligned so index t−1 holds the state that predicts x_t,
// in both directions; plus per-layer last states for stateful continuation.
template <class T>
struct HiddenTrace {
  std::vector<Tensor<T>> top;                               // T × [B×H]
  std::vector<std::pair<Tensor<T>, Tensor<T>>> final_state;  // per layer (h, c)
};

template <class T>
struct RunResult {
  HiddenTrace<T> trace;
  std::vector<std::vector<T>> step_nll;  // T × B, per-row −log p
  Tensor<T> nll_sum;                     // scalar Σ over masked positions
};

struct RunOptions {
  double dropout = 0.0;  // per-layer output dropout, active when train
  uint64_t dropout_seed = 0;
  bool train = false;
};

struct StackSpec {
  CellKind cell = CellKind::kLstm;
  int64_t layers = 1, hidden = 0, embed_dim = 0, vocab_size = 0;
  int64_t cond_dim = 0, cond_proj_dim = 0;
  InitScheme init = InitScheme::kUniformScaled;
};

// Deterministic for a fixed seed. Uniform-scaled weights use bounds
// ±1/√fan-in; the LSTM forget-gate bias is +1 exactly.
template <class T>
RnnStack<T> init_stack(const StackSpec& spec, Direction dir, uint64_t seed);
template <class T>
OutputHead<T> init_head(HeadKind kind, int64_t hidden, int64_t classes,
                        uint64_t seed);

// Single cell applications (composed from the tape ops).
template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const CellParams<T>& p,
                                          const Tensor<T>& x, const Tensor<T>& h,
                                          const Tensor<T>& c);
template <class T>
Tensor<T> gru_step(const CellParams<T>& p, const Tensor<T>& x,
                   const Tensor<T>& h);

// Teacher-forced pass over a batch. Step t consumes the embedding of x_{t−1}
// (learned start symbol at t = 1) and predicts x_t. Masked steps contribute
// zero NLL and leave all states unchanged.
template <class T>
RunResult<T> run_forward(const RnnStack<T>& stack, const OutputHead<T>& head,
                         const data::SequenceBatch& batch,
                         const RunOptions& opts = {});

// Mirror image: iterates t = T..1, consuming x_{t+1} (learned end symbol at
// t = T) and predicting x_t; trailing padding never influences real steps.
template <class T>
RunResult<T> run_backward(const RnnStack<T>& stack, const OutputHead<T>& head,
                          const data::SequenceBatch& batch,
                          const RunOptions& opts = {});

// Ancestral sampling from the forward model only; temperature 0 is greedy
// argmax. Deterministic for a fixed seed.
template <class T>
std::vector<std::vector<int32_t>> sample(const RnnStack<T>& stack,
                                         const OutputHead<T>& head,
                                         int64_t count, int64_t length,
                                         uint64_t seed, double temperature,
                                         const std::vector<double>& cond = {});

// Same parameters with the start/end embedding rows swapped; run_backward on
// s matches run_forward of the mirrored stack on reverse(s).
template <class T>
RnnStack<T> mirror_stack(const RnnStack<T>& stack);

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
std::vector<ParamRef<T>> stack_params(RnnStack<T>& stack,
                                      const std::string& prefix);
template <class T>
std::vector<ParamRef<T>> head_params(OutputHead<T>& head,
                                     const std::string& prefix);

}  // namespace twinnet::rnn
