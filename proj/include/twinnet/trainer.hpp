#pragma once

#include <functional>
#include <limits>

#include "twinnet/objective.hpp"

namespace twinnet::train {

enum class Optimizer { kAdam, kAdaDelta };
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  twin::ObjectiveConfig objective;
  Optimizer optimizer = Optimizer::kAdam;
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double rho = 0.95, adadelta_eps = 1e-6;
  double clip_norm = 5.0;
  int64_t batch_size = 20;
  int64_t epochs = 0;
  std::vector<int64_t> decay_epochs = {5, 10, 15};
  double decay_factor = 0.5;
  uint64_t seed = 1;
  int64_t patience = 0;   // 0 disables early stopping
  int64_t max_steps = 0;  // 0 = no step cap
  std::string resume_checkpoint;
  std::string out_dir;  // when set: metrics.csv + checkpoint.twnc
};

template <class T>
struct OptState {
  int64_t t = 0;                       // adam timestep
  std::vector<std::vector<T>> m, v;    // adam moments / adadelta accumulators
};

struct MetricsRow {
  int64_t epoch = 0, step = 0;
  double nll_f = 0, nll_b = 0, penalty = 0;
  double valid_nll = std::numeric_limits<double>::quiet_NaN();
  double lr = 0, seconds = 0;
};

// CSV with the fixed header epoch,step,nll_f,nll_b,penalty,valid_nll,lr,seconds.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

template <class T>
struct TrainResult {
  twin::TwinModel<T> best_model;  // parameters at the best valid metric
  twin::TwinModel<T> last_model;
  std::vector<MetricsRow> rows;
  std::vector<double> step_penalty;  // per optimizer step, batch mean
  std::vector<double> step_nll_f;
  double best_valid = std::numeric_limits<double>::quiet_NaN();
  int64_t best_epoch = -1;
  int64_t steps = 0;
  bool aborted_nan = false;
};

// Training data, optionally re-binarized per epoch (stochastic MNIST mode).
class DataSource {
 public:
  explicit DataSource(data::TokenDataset fixed);
  DataSource(data::MnistImages raw, data::BinarizeMode mode, bool attach_labels,
             int64_t offset, int64_t count, uint64_t seed);
  const data::TokenDataset& epoch_dataset(int64_t epoch);
  const data::TokenDataset& any() { return epoch_dataset(1); }

 private:
  data::TokenDataset fixed_;
  bool stochastic_ = false;
  data::MnistImages raw_;
  data::BinarizeMode mode_ = data::BinarizeMode::kThreshold;
  bool attach_labels_ = false;
  int64_t offset_ = 0, count_ = -1;
  uint64_t seed_ = 0;
  int64_t cached_epoch_ = -1;
};

// If the global L2 norm exceeds max_norm, scales all gradients by
// max_norm/norm; returns the observed pre-clip norm.
template <class T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm);

// Standard bias-corrected Adam over a parameter group, in place.
template <class T>
void adam_step(std::vector<rnn::ParamRef<T>>& params,
               const std::vector<std::vector<T>>& grads, OptState<T>& state,
               double lr, double beta1, double beta2, double eps);

template <class T>
void adadelta_step(std::vector<rnn::ParamRef<T>>& params,
                   const std::vector<std::vector<T>>& grads, OptState<T>& state,
                   double rho, double eps);

// Piecewise-constant decay: each boundary in decay_epochs that the (1-based)
// epoch has passed multiplies the base rate by decay_factor.
double lr_schedule(int64_t epoch, double base_lr,
                   const std::vector<int64_t>& decay_epochs, double factor);

// Mean per-sequence forward NLL over a dataset; reads only forward-side
// parameters and builds no gradient graph.
template <class T>
double evaluate(const twin::TwinModel<T>& model, const data::TokenDataset& ds,
                int64_t batch_size);

double nats_to_bits_per_dim(double nats, int64_t dim);

// Full §-style training protocol: seeded per-epoch shuffles, per-step
// objective → backward → per-network clip → optimizer step; per-epoch valid
// NLL (forward net only), early stopping on the best valid metric, per-epoch
// checkpointing. Deterministic for a fixed config and seed.
template <class T>
TrainResult<T> train(const twin::TwinModel<T>& model, DataSource& train_src,
                     const data::TokenDataset* valid_set, const TrainConfig& cfg);

// ---- Checkpoint files (model + optimizer + counters, bitwise round-trip) ----

template <class T>
struct Snapshot {
  twin::TwinModel<T> model;
  twin::TwinModel<T> best_model;
  OptState<T> opt;
  int64_t epoch = 0, step = 0;
  double best_valid = std::numeric_limits<double>::quiet_NaN();
  int64_t best_epoch = -1;
  uint64_t seed = 0;
};

template <class T>
void save_checkpoint(const std::string& path, Snapshot<T>& snap);
template <class T>
Snapshot<T> load_checkpoint(const std::string& path);
// Precision tag stored in the file: "f32" or "f64".
std::string checkpoint_precision(const std::string& path);

}  // namespace twinnet::train
