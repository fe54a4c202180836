#include "twinnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "twinnet/rng.hpp"

namespace twinnet::train {

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "adadelta") return Optimizer::kAdaDelta;
  throw InvalidArgument(str_cat("unknown optimizer '", s, "'"));
}

DataSource::DataSource(data::TokenDataset fixed) : fixed_(std::move(fixed)) {}

DataSource::DataSource(data::MnistImages raw, data::BinarizeMode mode,
                       bool attach_labels, int64_t offset, int64_t count,
                       uint64_t seed)
    : stochastic_(mode == data::BinarizeMode::kStochastic),
      raw_(std::move(raw)),
      mode_(mode),
      attach_labels_(attach_labels),
      offset_(offset),
      count_(count),
      seed_(seed) {
  if (!stochastic_)
    fixed_ = data::binarize(raw_, mode_, seed_, attach_labels_, offset_, count_);
}

const data::TokenDataset& DataSource::epoch_dataset(int64_t epoch) {
  if (!stochastic_) return fixed_;
  if (cached_epoch_ != epoch) {
    fixed_ = data::binarize(raw_, mode_,
                            derive_seed(seed_, "epoch-binarize",
                                        static_cast<uint64_t>(epoch)),
                            attach_labels_, offset_, count_);
    cached_epoch_ = epoch;
  }
  return fixed_;
}

template <class T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
  if (max_norm <= 0) throw InvalidArgument("clip: max_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (T& v : g) v *= s;
  }
  return norm;
}

template <class T>
void adam_step(std::vector<rnn::ParamRef<T>>& params,
               const std::vector<std::vector<T>>& grads, OptState<T>& state,
               double lr, double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(p.tensor->values->size(), T(0));
      state.v.emplace_back(p.tensor->values->size(), T(0));
    }
  }
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw InvalidArgument("adam: parameter/gradient/state count mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& values = *params[p].tensor->values;
    if (grads[p].size() != values.size())
      throw InvalidArgument(str_cat("adam: gradient size mismatch for ",
                                    params[p].name));
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < values.size(); ++i) {
      const T g = grads[p][i];
      m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1.0 - beta1) * g;
      v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1.0 - beta2) * g * g;
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      values[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <class T>
void adadelta_step(std::vector<rnn::ParamRef<T>>& params,
                   const std::vector<std::vector<T>>& grads, OptState<T>& state,
                   double rho, double eps) {
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(p.tensor->values->size(), T(0));  // E[g²]
      state.v.emplace_back(p.tensor->values->size(), T(0));  // E[Δx²]
    }
  }
  ++state.t;
  for (size_t p = 0; p < params.size(); ++p) {
    auto& values = *params[p].tensor->values;
    auto& eg = state.m[p];
    auto& ex = state.v[p];
    for (size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(grads[p][i]);
      double eg2 = rho * static_cast<double>(eg[i]) + (1.0 - rho) * g * g;
      const double dx =
          -std::sqrt((static_cast<double>(ex[i]) + eps) / (eg2 + eps)) * g;
      ex[i] = static_cast<T>(rho * static_cast<double>(ex[i]) +
                             (1.0 - rho) * dx * dx);
      eg[i] = static_cast<T>(eg2);
      values[i] += static_cast<T>(dx);
    }
  }
}

double lr_schedule(int64_t epoch, double base_lr,
                   const std::vector<int64_t>& decay_epochs, double factor) {
  double lr = base_lr;
  for (int64_t d : decay_epochs)
    if (epoch > d) lr *= factor;
  return lr;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,step,nll_f,nll_b,penalty,valid_nll,lr,seconds\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(r.epoch), static_cast<long long>(r.step),
                  r.nll_f, r.nll_b, r.penalty, r.valid_nll, r.lr, r.seconds);
    out += buf;
  }
  return out;
}

template <class T>
double evaluate(const twin::TwinModel<T>& model, const data::TokenDataset& ds,
                int64_t batch_size) {
  if (ds.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  // Unshuffled batches: evaluation order does not matter for the mean.
  double total = 0.0;
  int64_t n = 0;
  data::TokenDataset const& d = ds;
  for (int64_t at = 0; at < d.size(); at += batch_size) {
    data::SequenceBatch b;
    const int64_t take = std::min(batch_size, d.size() - at);
    b.batch = take;
    int64_t max_len = 0;
    for (int64_t i = 0; i < take; ++i)
      max_len = std::max(max_len,
                         static_cast<int64_t>(d.sequences[at + i].size()));
    b.max_len = max_len;
    b.tokens.assign(static_cast<size_t>(take * max_len), data::kPadId);
    b.mask.assign(static_cast<size_t>(take * max_len), 0);
    b.lengths.resize(static_cast<size_t>(take));
    if (d.cond_dim > 0) {
      b.cond_dim = d.cond_dim;
      b.cond.resize(static_cast<size_t>(take * d.cond_dim));
    }
    for (int64_t i = 0; i < take; ++i) {
      const auto& seq = d.sequences[at + i];
      b.lengths[static_cast<size_t>(i)] = static_cast<int32_t>(seq.size());
      std::copy(seq.begin(), seq.end(), b.tokens.begin() + i * max_len);
      std::fill_n(b.mask.begin() + i * max_len, seq.size(), uint8_t{1});
      if (d.cond_dim > 0)
        std::copy(d.conditioning[at + i].begin(), d.conditioning[at + i].end(),
                  b.cond.begin() + i * d.cond_dim);
    }
    auto r = rnn::run_forward(model.fwd, model.fwd_head, b, {});
    total += static_cast<double>(r.nll_sum.scalar());
    n += take;
  }
  return total / static_cast<double>(n);
}

double nats_to_bits_per_dim(double nats, int64_t dim) {
  return nats / (std::log(2.0) * static_cast<double>(dim));
}

namespace {

template <class T>
std::vector<std::vector<T>> collect_grads(Tape<T>& tape,
                                          std::vector<rnn::ParamRef<T>>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (auto& p : params) {
    auto g = tape.grad_of(*p.tensor);
    if (g.empty())
      out.emplace_back(p.tensor->values->size(), T(0));
    else
      out.emplace_back(g.begin(), g.end());
  }
  return out;
}

template <class T>
void write_artifacts(const TrainConfig& cfg, Snapshot<T>& snap,
                     const std::vector<MetricsRow>& rows) {
  if (cfg.out_dir.empty()) return;
  std::ofstream f(cfg.out_dir + "/metrics.csv", std::ios::trunc);
  if (!f) throw IoError(str_cat("train: cannot write metrics in '", cfg.out_dir, "'"));
  f << metrics_csv(rows);
  f.close();
  save_checkpoint(cfg.out_dir + "/checkpoint.twnc", snap);
}

}  // namespace

template <class T>
TrainResult<T> train(const twin::TwinModel<T>& model, DataSource& train_src,
                     const data::TokenDataset* valid_set, const TrainConfig& cfg) {
  if (cfg.clip_norm <= 0) throw InvalidArgument("train: clip-norm must be > 0");
  if (cfg.lr <= 0) throw InvalidArgument("train: learning-rate must be > 0");
  for (size_t i = 1; i < cfg.decay_epochs.size(); ++i)
    if (cfg.decay_epochs[i] <= cfg.decay_epochs[i - 1])
      throw InvalidArgument("train: decay epochs must be strictly increasing");

  const auto t_start = std::chrono::steady_clock::now();
  TrainResult<T> result;
  twin::TwinModel<T> current = twin::clone_model(model);
  auto fwd_params = current.forward_side_params();
  auto bwd_params = current.backward_side_params();
  OptState<T> opt_f, opt_b;
  int64_t start_epoch = 0, step = 0;
  twin::TwinModel<T> best = twin::clone_model(current);
  double best_valid = std::numeric_limits<double>::quiet_NaN();
  int64_t best_epoch = -1;

  if (!cfg.resume_checkpoint.empty()) {
    if (checkpoint_precision(cfg.resume_checkpoint) !=
        (sizeof(T) == 4 ? "f32" : "f64"))
      throw InvalidArgument("train: resume checkpoint precision mismatch");
    Snapshot<T> snap = load_checkpoint<T>(cfg.resume_checkpoint);
    current = std::move(snap.model);
    best = std::move(snap.best_model);
    fwd_params = current.forward_side_params();
    bwd_params = current.backward_side_params();
    const size_t nf = fwd_params.size();
    opt_f.t = opt_b.t = snap.opt.t;
    opt_f.m.assign(snap.opt.m.begin(), snap.opt.m.begin() + nf);
    opt_f.v.assign(snap.opt.v.begin(), snap.opt.v.begin() + nf);
    opt_b.m.assign(snap.opt.m.begin() + nf, snap.opt.m.end());
    opt_b.v.assign(snap.opt.v.begin() + nf, snap.opt.v.end());
    start_epoch = snap.epoch;
    step = snap.step;
    best_valid = snap.best_valid;
    best_epoch = snap.best_epoch;
  }

  auto make_snapshot = [&](int64_t epoch) {
    Snapshot<T> snap;
    snap.model = twin::clone_model(current);
    snap.best_model = twin::clone_model(best);
    snap.opt.t = opt_f.t;
    snap.opt.m = opt_f.m;
    snap.opt.v = opt_f.v;
    snap.opt.m.insert(snap.opt.m.end(), opt_b.m.begin(), opt_b.m.end());
    snap.opt.v.insert(snap.opt.v.end(), opt_b.v.begin(), opt_b.v.end());
    snap.epoch = epoch;
    snap.step = step;
    snap.best_valid = best_valid;
    snap.best_epoch = best_epoch;
    snap.seed = cfg.seed;
    return snap;
  };

  if (cfg.out_dir.empty() && cfg.epochs == 0) {
    result.best_model = std::move(best);
    result.last_model = std::move(current);
    return result;
  }
  if (start_epoch == 0) {
    auto snap = make_snapshot(0);
    write_artifacts(cfg, snap, result.rows);
  }

  Tape<T> tape;
  bool stop = false;
  for (int64_t epoch = start_epoch + 1; epoch <= cfg.epochs && !stop; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.lr, cfg.decay_epochs, cfg.decay_factor);
    const data::TokenDataset& train_set = train_src.epoch_dataset(epoch);
    auto batches = data::make_batches(train_set, cfg.batch_size, cfg.seed, epoch);
    double sum_f = 0, sum_b = 0, sum_p = 0;
    int64_t seqs = 0;
    for (const auto& batch : batches) {
      tape.reset();
      const uint64_t step_seed = derive_seed(cfg.seed, "step",
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step + 1));
      twin::LossBreakdown<T> loss;
      twin::TwinModel<T> watched;
      try {
        loss = twin::compute_objective(tape, current, batch, cfg.objective,
                                       step_seed, /*train=*/true, &watched);
        tape.backward(loss.total_node);
      } catch (const NumericError&) {
        result.aborted_nan = true;
        stop = true;
        break;
      }
      auto watched_f = watched.forward_side_params();
      auto watched_b = watched.backward_side_params();
      auto grads_f = collect_grads(tape, watched_f);
      auto grads_b = collect_grads(tape, watched_b);
      // Per-network clipping: forward and backward sides are independent
      // optimizations coupled only through the (stop-gradient) penalty.
      clip_global_norm(grads_f, cfg.clip_norm);
      clip_global_norm(grads_b, cfg.clip_norm);
      if (cfg.optimizer == Optimizer::kAdam) {
        adam_step(fwd_params, grads_f, opt_f, lr, cfg.beta1, cfg.beta2,
                  cfg.adam_eps);
        adam_step(bwd_params, grads_b, opt_b, lr, cfg.beta1, cfg.beta2,
                  cfg.adam_eps);
      } else {
        adadelta_step(fwd_params, grads_f, opt_f, cfg.rho, cfg.adadelta_eps);
        adadelta_step(bwd_params, grads_b, opt_b, cfg.rho, cfg.adadelta_eps);
      }
      ++step;
      sum_f += loss.forward_nll * static_cast<double>(batch.batch);
      sum_b += loss.backward_nll * static_cast<double>(batch.batch);
      sum_p += loss.penalty * static_cast<double>(batch.batch);
      seqs += batch.batch;
      result.step_nll_f.push_back(loss.forward_nll);
      result.step_penalty.push_back(loss.penalty);
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    if (result.aborted_nan) break;
    if (seqs == 0) continue;

    MetricsRow row;
    row.epoch = epoch;
    row.step = step;
    row.nll_f = sum_f / static_cast<double>(seqs);
    row.nll_b = sum_b / static_cast<double>(seqs);
    row.penalty = sum_p / static_cast<double>(seqs);
    row.lr = lr;
    if (valid_set && valid_set->size() > 0) {
      row.valid_nll = evaluate(current, *valid_set, cfg.batch_size);
      if (std::isnan(best_valid) || row.valid_nll < best_valid) {
        best_valid = row.valid_nll;
        best_epoch = epoch;
        best = twin::clone_model(current);
      }
    } else {
      best = twin::clone_model(current);
      best_epoch = epoch;
    }
    row.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t_start).count();
    result.rows.push_back(row);

    auto snap = make_snapshot(epoch);
    write_artifacts(cfg, snap, result.rows);

    if (cfg.patience > 0 && valid_set && best_epoch > 0 &&
        epoch - best_epoch >= cfg.patience)
      stop = true;
  }

  result.best_model = std::move(best);
  result.last_model = std::move(current);
  result.best_valid = best_valid;
  result.best_epoch = best_epoch;
  result.steps = step;
  return result;
}

#define TWINNET_INSTANTIATE_TRAIN(T)                                          \
  template double clip_global_norm(std::vector<std::vector<T>>&, double);     \
  template void adam_step(std::vector<rnn::ParamRef<T>>&,                     \
                          const std::vector<std::vector<T>>&, OptState<T>&,   \
                          double, double, double, double);                    \
  template void adadelta_step(std::vector<rnn::ParamRef<T>>&,                 \
                              const std::vector<std::vector<T>>&,             \
                              OptState<T>&, double, double);                  \
  template double evaluate(const twin::TwinModel<T>&,                         \
                           const data::TokenDataset&, int64_t);               \
  template TrainResult<T> train(const twin::TwinModel<T>&, DataSource&,       \
                                const data::TokenDataset*, const TrainConfig&);

TWINNET_INSTANTIATE_TRAIN(float)
TWINNET_INSTANTIATE_TRAIN(double)

}  // namespace twinnet::train
