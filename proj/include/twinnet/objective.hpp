#pragma once

#include "twinnet/model.hpp"

namespace twinnet::twin {

enum class BackwardMode {
  kTwin,
  kGaussianNoise,
  kZerosAr,
  kStabilizingNorm,
  kBaseline,
};
BackwardMode parse_backward_mode(const std::string& s);
std::string backward_mode_name(BackwardMode m);

struct ObjectiveConfig {
  double alpha = 1.5;
  BackwardMode mode = BackwardMode::kTwin;
  double noise_sigma = 1.0;
  // Divide each sequence's penalty contribution by its length.
  bool normalize_penalty_by_length = false;
  double dropout = 0.0;
};

// All scalars are per-sequence means over the batch. total is the
// minimization objective: nll_f + nll_b + alpha·penalty.
template <class T>
struct LossBreakdown {
  double forward_nll = 0.0;
  double backward_nll = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  std::vector<double> step_penalty;  // per step, batch mean
  Tensor<T> total_node;              // scalar tape node for backward()
};

// Σ_t masked per-row ‖g(h_t^f) − h_t^b‖₂. The backward trace enters through
// stop_gradient, so no adjoint reaches backward-net parameters; g's own
// parameters do receive gradient. Returns the un-normalized sum node and the
// per-step raw sums.
template <class T>
std::pair<Tensor<T>, std::vector<double>> twin_penalty(
    const std::vector<Tensor<T>>& hf, const std::vector<Tensor<T>>& hb,
    const AffineMap<T>& g, const data::SequenceBatch& batch,
    bool normalize_by_length = false);

// Mode dispatch over the Table-1 regularizers; see ObjectiveConfig. step_seed
// fixes the Gaussian-noise draw (and dropout masks), keeping the objective a
// pure function of (model, batch, config, seed). When watched_out is given it
// receives the tape-registered copy of the model, whose leaves carry the
// gradients after backward().
template <class T>
LossBreakdown<T> compute_objective(Tape<T>& tape, TwinModel<T>& model,
                                   const data::SequenceBatch& batch,
                                   const ObjectiveConfig& cfg,
                                   uint64_t step_seed = 0, bool train = false,
                                   TwinModel<T>* watched_out = nullptr);

struct PartitionCheck {
  bool penalty_grad_zero_on_backward = false;  // (a), exact
  bool backward_nll_grad_zero_on_forward = false;  // (b), exact
  bool penalty_grad_nonzero_on_forward = false;    // (c)
  double max_abs_a = 0.0;  // largest |∂(α·penalty)/∂θ_b| observed
  double max_abs_b = 0.0;  // largest |∂NLL_b/∂θ_f| observed
  double max_abs_c = 0.0;  // largest |∂(α·penalty)/∂θ_f| observed
  bool passed() const {
    return penalty_grad_zero_on_backward && backward_nll_grad_zero_on_forward &&
           penalty_grad_nonzero_on_forward;
  }
};

// Verifies the stop-gradient contract on a concrete (model, batch): the
// penalty deposits nothing on backward-side parameters, the backward NLL
// deposits nothing on forward-side parameters, and the penalty does reach
// the forward side.
template <class T>
PartitionCheck gradient_partition_check(TwinModel<T>& model,
                                        const data::SequenceBatch& batch,
                                        const ObjectiveConfig& cfg,
                                        uint64_t step_seed = 0);

}  // namespace twinnet::twin
