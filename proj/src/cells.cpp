#include "twinnet/cells.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "twinnet/rng.hpp"

namespace twinnet::rnn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

CellKind kind_or_throw(const std::string& s, bool ok_lstm, bool ok_gru) {
  if (ok_lstm && s == "lstm") return CellKind::kLstm;
  if (ok_gru && s == "gru") return CellKind::kGru;
  throw InvalidArgument(str_cat("unknown cell kind '", s, "'"));
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, uint64_t seed) {
  Rng rng(seed);
  auto t = zeros<T>(std::move(shape));
  for (T& v : *t.values) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// Orthogonal H×H block via QR of a Gaussian draw, sign-fixed on diag(R).
inline Eigen::MatrixXd orthogonal_block(int64_t h, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(h, h);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < h; ++c) m(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(h, h);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int64_t c = 0; c < h; ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

template <class T>
CellParams<T> init_cell(CellKind kind, int64_t input_size, int64_t hidden,
                        InitScheme scheme, uint64_t seed) {
  const int64_t gates = kind == CellKind::kLstm ? 4 : 3;
  CellParams<T> p;
  p.kind = kind;
  p.input_size = input_size;
  p.hidden = hidden;
  p.w_ih = uniform_tensor<T>({input_size, gates * hidden},
                             1.0 / std::sqrt(double(input_size)),
                             derive_seed(seed, "w_ih"));
  if (scheme == InitScheme::kOrthogonalRecurrent) {
    p.w_hh = zeros<T>({hidden, gates * hidden});
    for (int64_t g = 0; g < gates; ++g) {
      auto q = orthogonal_block(hidden, derive_seed(seed, "w_hh", g));
      for (int64_t r = 0; r < hidden; ++r)
        for (int64_t c = 0; c < hidden; ++c)
          p.w_hh.at(r, g * hidden + c) = static_cast<T>(q(r, c));
    }
  } else {
    p.w_hh = uniform_tensor<T>({hidden, gates * hidden},
                               1.0 / std::sqrt(double(hidden)),
                               derive_seed(seed, "w_hh"));
  }
  p.bias_ih = zeros<T>({gates * hidden});
  if (kind == CellKind::kLstm) {
    // Forget gate bias +1 ([i|f|g|o] packing).
    for (int64_t j = hidden; j < 2 * hidden; ++j)
      (*p.bias_ih.values)[static_cast<size_t>(j)] = T(1);
  } else {
    p.bias_hh = zeros<T>({gates * hidden});
  }
  return p;
}

template <class T>
std::vector<T> mask_column(const data::SequenceBatch& batch, int64_t t) {
  std::vector<T> col(static_cast<size_t>(batch.batch));
  for (int64_t i = 0; i < batch.batch; ++i)
    col[static_cast<size_t>(i)] = batch.active(i, t) ? T(1) : T(0);
  return col;
}

// m⊙fresh + (1−m)⊙prev with m broadcast over columns.
template <class T>
Tensor<T> masked_carry(const Tensor<T>& fresh, const Tensor<T>& prev,
                       const std::vector<T>& active) {
  const int64_t B = fresh.shape[0], H = fresh.shape[1];
  auto m = zeros<T>({B, H});
  auto inv = zeros<T>({B, H});
  for (int64_t i = 0; i < B; ++i) {
    T a = active[static_cast<size_t>(i)];
    for (int64_t j = 0; j < H; ++j) {
      m.at(i, j) = a;
      inv.at(i, j) = T(1) - a;
    }
  }
  return ad::add(ad::mul(fresh, m), ad::mul(prev, inv));
}

template <class T>
Tensor<T> dropout_mask(int64_t B, int64_t H, double rate, uint64_t seed) {
  Rng rng(seed);
  auto m = zeros<T>({B, H});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& v : *m.values) v = rng.bernoulli(rate) ? T(0) : keep_scale;
  return m;
}

// Per-row −log p for reporting; mirrors the loss ops on values only.
template <class T>
std::vector<T> row_nll(const Tensor<T>& logits, HeadKind kind,
                       const std::vector<int32_t>& targets,
                       const std::vector<T>& mask) {
  const int64_t B = logits.rows();
  std::vector<T> out(static_cast<size_t>(B), T(0));
  if (kind == HeadKind::kSoftmax) {
    const int64_t K = logits.cols();
    for (int64_t r = 0; r < B; ++r) {
      if (mask[static_cast<size_t>(r)] == T(0)) continue;
      const T* row = logits.values->data() + r * K;
      T mx = row[0];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      T z = T(0);
      for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
      out[static_cast<size_t>(r)] =
          std::log(z) + mx - row[targets[static_cast<size_t>(r)]];
    }
  } else {
    for (int64_t r = 0; r < B; ++r) {
      if (mask[static_cast<size_t>(r)] == T(0)) continue;
      T z = (*logits.values)[static_cast<size_t>(r)];
      out[static_cast<size_t>(r)] =
          std::max(z, T(0)) - z * static_cast<T>(targets[static_cast<size_t>(r)]) +
          std::log1p(std::exp(-std::abs(z)));
    }
  }
  return out;
}

template <class T>
struct StepContext {
  const RnnStack<T>* stack;
  const OutputHead<T>* head;
  Tensor<T> cond;  // undefined when none; already projected
  double dropout = 0.0;
  uint64_t dropout_seed = 0;
  bool train = false;
};

// One teacher-forced step through the stack; returns top-layer state (raw)
// and the head logits. States are updated in place.
template <class T>
std::pair<Tensor<T>, Tensor<T>> advance(
    const StepContext<T>& ctx, std::span<const int32_t> input_ids,
    std::vector<std::pair<Tensor<T>, Tensor<T>>>& states,
    const std::vector<T>* active, int64_t step_index) {
  Tensor<T> x = ad::embedding(ctx.stack->embedding, input_ids);
  if (ctx.cond.defined()) x = ad::concat_cols(x, ctx.cond);
  Tensor<T> top_raw;
  for (size_t l = 0; l < ctx.stack->layers.size(); ++l) {
    const CellParams<T>& cell = ctx.stack->layers[l];
    Tensor<T> h_new;
    if (cell.kind == CellKind::kLstm) {
      auto [h, c] = lstm_step(cell, x, states[l].first, states[l].second);
      if (active) {
        h = masked_carry(h, states[l].first, *active);
        c = masked_carry(c, states[l].second, *active);
      }
      states[l] = {h, c};
      h_new = h;
    } else {
      Tensor<T> h = gru_step(cell, x, states[l].first);
      if (active) h = masked_carry(h, states[l].first, *active);
      states[l].first = h;
      h_new = h;
    }
    top_raw = h_new;
    if (ctx.train && ctx.dropout > 0.0) {
      auto m = dropout_mask<T>(h_new.shape[0], h_new.shape[1], ctx.dropout,
                               derive_seed(ctx.dropout_seed, "dropout",
                                           static_cast<uint64_t>(l),
                                           static_cast<uint64_t>(step_index)));
      h_new = ad::mul(h_new, m);
    }
    x = h_new;
  }
  Tensor<T> logits = ad::linear(x, ctx.head->w, ctx.head->b);
  return {top_raw, logits};
}

template <class T>
StepContext<T> make_context(const RnnStack<T>& stack, const OutputHead<T>& head,
                            const data::SequenceBatch& batch,
                            const RunOptions& opts) {
  if (stack.cond_dim > 0 && batch.cond_dim != stack.cond_dim)
    throw InvalidArgument(str_cat("run: stack expects conditioning dim ",
                                  stack.cond_dim, ", batch has ", batch.cond_dim));
  StepContext<T> ctx{&stack, &head, {}, opts.dropout, opts.dropout_seed,
                     opts.train};
  if (stack.cond_dim > 0) {
    auto raw = zeros<T>({batch.batch, stack.cond_dim});
    for (size_t i = 0; i < batch.cond.size(); ++i)
      (*raw.values)[i] = static_cast<T>(batch.cond[i]);
    ctx.cond = stack.cond_proj_dim > 0
                   ? ad::tanh(ad::linear(raw, stack.cond_proj_w, stack.cond_proj_b))
                   : raw;
  }
  return ctx;
}

template <class T>
std::vector<std::pair<Tensor<T>, Tensor<T>>> initial_states(
    const RnnStack<T>& stack, int64_t batch) {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> states;
  for (const auto& cell : stack.layers)
    states.emplace_back(zeros<T>({batch, cell.hidden}),
                        cell.kind == CellKind::kLstm
                            ? zeros<T>({batch, cell.hidden})
                            : Tensor<T>{});
  return states;
}

inline void head_targets(const data::SequenceBatch& batch, int64_t t,
                         int64_t classes, HeadKind kind,
                         std::vector<int32_t>& targets) {
  targets.resize(static_cast<size_t>(batch.batch));
  for (int64_t i = 0; i < batch.batch; ++i) {
    if (!batch.active(i, t)) {
      targets[static_cast<size_t>(i)] = 0;
      continue;
    }
    int32_t cls = batch.token(i, t) - data::kNumReserved;
    if (cls < 0 || (kind == HeadKind::kSoftmax && cls >= classes) ||
        (kind == HeadKind::kBernoulli && cls > 1))
      throw InvalidArgument(str_cat("run: token id ", batch.token(i, t),
                                    " at [", i, ",", t,
                                    "] outside the model vocabulary"));
    targets[static_cast<size_t>(i)] = cls;
  }
}

}  // namespace

CellKind parse_cell_kind(const std::string& s) {
  return kind_or_throw(s, true, true);
}

InitScheme parse_init_scheme(const std::string& s) {
  if (s == "uniform") return InitScheme::kUniformScaled;
  if (s == "orthogonal") return InitScheme::kOrthogonalRecurrent;
  throw InvalidArgument(str_cat("unknown init scheme '", s, "'"));
}

template <class T>
RnnStack<T> init_stack(const StackSpec& spec, Direction dir, uint64_t seed) {
  if (spec.layers <= 0 || spec.hidden <= 0 || spec.embed_dim <= 0 ||
      spec.vocab_size <= data::kNumReserved)
    throw InvalidArgument("init_stack: dimensions must be positive");
  RnnStack<T> s;
  s.dir = dir;
  s.vocab_size = spec.vocab_size;
  s.embed_dim = spec.embed_dim;
  s.cond_dim = spec.cond_dim;
  s.cond_proj_dim = spec.cond_proj_dim;
  s.embedding = uniform_tensor<T>({spec.vocab_size, spec.embed_dim},
                                  1.0 / std::sqrt(double(spec.embed_dim)),
                                  derive_seed(seed, "embedding"));
  if (spec.cond_proj_dim > 0) {
    s.cond_proj_w = uniform_tensor<T>({spec.cond_dim, spec.cond_proj_dim},
                                      1.0 / std::sqrt(double(spec.cond_dim)),
                                      derive_seed(seed, "cond_proj_w"));
    s.cond_proj_b = zeros<T>({spec.cond_proj_dim});
  }
  const int64_t cond_in = spec.cond_proj_dim > 0 ? spec.cond_proj_dim : spec.cond_dim;
  for (int64_t l = 0; l < spec.layers; ++l) {
    const int64_t in = l == 0 ? spec.embed_dim + cond_in : spec.hidden;
    s.layers.push_back(init_cell<T>(spec.cell, in, spec.hidden, spec.init,
                                    derive_seed(seed, "layer", l)));
  }
  return s;
}

template <class T>
OutputHead<T> init_head(HeadKind kind, int64_t hidden, int64_t classes,
                        uint64_t seed) {
  if (hidden <= 0 || classes <= 0)
    throw InvalidArgument("init_head: dimensions must be positive");
  OutputHead<T> h;
  h.kind = kind;
  h.classes = classes;
  h.w = uniform_tensor<T>({hidden, classes}, 1.0 / std::sqrt(double(hidden)),
                          derive_seed(seed, "head_w"));
  h.b = zeros<T>({classes});
  return h;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const CellParams<T>& p,
                                          const Tensor<T>& x, const Tensor<T>& h,
                                          const Tensor<T>& c) {
  if (p.kind != CellKind::kLstm)
    throw InvalidArgument("lstm_step: cell is not an LSTM");
  Tensor<T> pre = ad::gates_linear(x, p.w_ih, h, p.w_hh, p.bias_ih);
  auto [h2, c2] = ad::lstm_cell(pre, c);
  return {h2, c2};
}

template <class T>
Tensor<T> gru_step(const CellParams<T>& p, const Tensor<T>& x,
                   const Tensor<T>& h) {
  if (p.kind != CellKind::kGru)
    throw InvalidArgument("gru_step: cell is not a GRU");
  Tensor<T> px = ad::linear(x, p.w_ih, p.bias_ih);
  Tensor<T> ph = ad::linear(h, p.w_hh, p.bias_hh);
  return ad::gru_cell(px, ph, h);
}

template <class T>
RunResult<T> run_forward(const RnnStack<T>& stack, const OutputHead<T>& head,
                         const data::SequenceBatch& batch,
                         const RunOptions& opts) {
  StepContext<T> ctx = make_context(stack, head, batch, opts);
  auto states = initial_states(stack, batch.batch);
  const bool uniform = batch.uniform_length();
  const int64_t Tn = batch.max_len;

  RunResult<T> out;
  out.nll_sum = scalar_tensor(T(0));
  std::vector<int32_t> input_ids(static_cast<size_t>(batch.batch));
  std::vector<int32_t> targets;
  for (int64_t t = 0; t < Tn; ++t) {
    for (int64_t i = 0; i < batch.batch; ++i)
      input_ids[static_cast<size_t>(i)] =
          t == 0 ? data::kSosId : batch.token(i, t - 1);
    std::vector<T> active;
    if (!uniform) active = mask_column<T>(batch, t);
    auto [top, logits] =
        advance(ctx, input_ids, states, uniform ? nullptr : &active, t);
    out.trace.top.push_back(top);

    head_targets(batch, t, head.classes, head.kind, targets);
    std::vector<T> w = uniform ? std::vector<T>(static_cast<size_t>(batch.batch), T(1))
                               : active;
    Tensor<T> step_loss =
        head.kind == HeadKind::kSoftmax
            ? ad::softmax_cross_entropy(logits, targets, w)
            : ad::bernoulli_cross_entropy(logits, targets, w);
    out.step_nll.push_back(row_nll(logits, head.kind, targets, w));
    out.nll_sum = ad::add(out.nll_sum, step_loss);
  }
  out.trace.final_state = std::move(states);
  return out;
}

template <class T>
RunResult<T> run_backward(const RnnStack<T>& stack, const OutputHead<T>& head,
                          const data::SequenceBatch& batch,
                          const RunOptions& opts) {
  StepContext<T> ctx = make_context(stack, head, batch, opts);
  auto states = initial_states(stack, batch.batch);
  const bool uniform = batch.uniform_length();
  const int64_t Tn = batch.max_len;

  RunResult<T> out;
  out.nll_sum = scalar_tensor(T(0));
  out.trace.top.resize(static_cast<size_t>(Tn));
  out.step_nll.resize(static_cast<size_t>(Tn));
  std::vector<int32_t> input_ids(static_cast<size_t>(batch.batch));
  std::vector<int32_t> targets;
  for (int64_t t = Tn - 1; t >= 0; --t) {
    // Step t (0-based) predicts x_{t+1}; the cell consumes x_{t+2}, the end
    // symbol on each row's last real step, or pad beyond it.
    for (int64_t i = 0; i < batch.batch; ++i) {
      const int64_t len = batch.lengths[static_cast<size_t>(i)];
      if (t == len - 1)
        input_ids[static_cast<size_t>(i)] = data::kEosId;
      else if (t < len - 1)
        input_ids[static_cast<size_t>(i)] = batch.token(i, t + 1);
      else
        input_ids[static_cast<size_t>(i)] = data::kPadId;
    }
    std::vector<T> active;
    if (!uniform) active = mask_column<T>(batch, t);
    auto [top, logits] =
        advance(ctx, input_ids, states, uniform ? nullptr : &active, t);
    out.trace.top[static_cast<size_t>(t)] = top;

    head_targets(batch, t, head.classes, head.kind, targets);
    std::vector<T> w = uniform ? std::vector<T>(static_cast<size_t>(batch.batch), T(1))
                               : active;
    Tensor<T> step_loss =
        head.kind == HeadKind::kSoftmax
            ? ad::softmax_cross_entropy(logits, targets, w)
            : ad::bernoulli_cross_entropy(logits, targets, w);
    out.step_nll[static_cast<size_t>(t)] =
        row_nll(logits, head.kind, targets, w);
    out.nll_sum = ad::add(out.nll_sum, step_loss);
  }
  out.trace.final_state = std::move(states);
  return out;
}

template <class T>
std::vector<std::vector<int32_t>> sample(const RnnStack<T>& stack,
                                         const OutputHead<T>& head,
                                         int64_t count, int64_t length,
                                         uint64_t seed, double temperature,
                                         const std::vector<double>& cond) {
  if (stack.cond_dim > 0 &&
      static_cast<int64_t>(cond.size()) != stack.cond_dim)
    throw InvalidArgument(str_cat("sample: stack expects conditioning dim ",
                                  stack.cond_dim, ", got ", cond.size()));
  std::vector<std::vector<int32_t>> sequences;
  for (int64_t s = 0; s < count; ++s) {
    Rng rng(derive_seed(seed, "sample", static_cast<uint64_t>(s)));
    data::SequenceBatch one;
    one.batch = 1;
    one.max_len = 0;
    one.lengths = {0};
    if (stack.cond_dim > 0) {
      one.cond = cond;
      one.cond_dim = stack.cond_dim;
    }
    StepContext<T> ctx = make_context(stack, head, one, RunOptions{});
    auto states = initial_states(stack, int64_t{1});
    std::vector<int32_t> seq;
    int32_t prev = data::kSosId;
    for (int64_t t = 0; t < length; ++t) {
      std::vector<int32_t> ids{prev};
      auto [top, logits] =
          advance(ctx, ids, states, static_cast<const std::vector<T>*>(nullptr), t);
      (void)top;
      int32_t cls;
      if (head.kind == HeadKind::kBernoulli) {
        const double z = static_cast<double>((*logits.values)[0]);
        if (temperature <= 0.0)
          cls = z > 0 ? 1 : 0;
        else
          cls = rng.bernoulli(1.0 / (1.0 + std::exp(-z / temperature))) ? 1 : 0;
      } else {
        const int64_t K = head.classes;
        const T* row = logits.values->data();
        if (temperature <= 0.0) {
          int64_t best = 0;
          for (int64_t k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
          cls = static_cast<int32_t>(best);
        } else {
          double mx = -1e300;
          for (int64_t k = 0; k < K; ++k)
            mx = std::max(mx, static_cast<double>(row[k]) / temperature);
          std::vector<double> p(static_cast<size_t>(K));
          double z = 0;
          for (int64_t k = 0; k < K; ++k) {
            p[static_cast<size_t>(k)] =
                std::exp(static_cast<double>(row[k]) / temperature - mx);
            z += p[static_cast<size_t>(k)];
          }
          double u = rng.uniform01() * z, acc = 0;
          int64_t pick = K - 1;
          for (int64_t k = 0; k < K; ++k) {
            acc += p[static_cast<size_t>(k)];
            if (u < acc) {
              pick = k;
              break;
            }
          }
          cls = static_cast<int32_t>(pick);
        }
      }
      prev = cls + data::kNumReserved;
      seq.push_back(prev);
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

template <class T>
RnnStack<T> mirror_stack(const RnnStack<T>& stack) {
  RnnStack<T> out = stack;
  out.embedding = clone(stack.embedding);
  const int64_t E = stack.embed_dim;
  for (int64_t j = 0; j < E; ++j)
    std::swap(out.embedding.at(data::kSosId, j), out.embedding.at(data::kEosId, j));
  out.dir = stack.dir == Direction::kForward ? Direction::kBackward
                                             : Direction::kForward;
  return out;
}

template <class T>
std::vector<ParamRef<T>> stack_params(RnnStack<T>& stack,
                                      const std::string& prefix) {
  std::vector<ParamRef<T>> out;
  out.push_back({prefix + ".embedding", &stack.embedding});
  if (stack.cond_proj_dim > 0) {
    out.push_back({prefix + ".cond_proj_w", &stack.cond_proj_w});
    out.push_back({prefix + ".cond_proj_b", &stack.cond_proj_b});
  }
  for (size_t l = 0; l < stack.layers.size(); ++l) {
    auto& cell = stack.layers[l];
    std::string base = str_cat(prefix, ".layer", l);
    out.push_back({base + ".w_ih", &cell.w_ih});
    out.push_back({base + ".w_hh", &cell.w_hh});
    out.push_back({base + ".bias_ih", &cell.bias_ih});
    if (cell.kind == CellKind::kGru)
      out.push_back({base + ".bias_hh", &cell.bias_hh});
  }
  return out;
}

template <class T>
std::vector<ParamRef<T>> head_params(OutputHead<T>& head,
                                     const std::string& prefix) {
  return {{prefix + ".w", &head.w}, {prefix + ".b", &head.b}};
}

#define TWINNET_INSTANTIATE_CELLS(T)                                          \
  template RnnStack<T> init_stack(const StackSpec&, Direction, uint64_t);     \
  template OutputHead<T> init_head(HeadKind, int64_t, int64_t, uint64_t);     \
  template std::pair<Tensor<T>, Tensor<T>> lstm_step(                         \
      const CellParams<T>&, const Tensor<T>&, const Tensor<T>&,               \
      const Tensor<T>&);                                                      \
  template Tensor<T> gru_step(const CellParams<T>&, const Tensor<T>&,         \
                              const Tensor<T>&);                              \
  template RunResult<T> run_forward(const RnnStack<T>&, const OutputHead<T>&, \
                                    const data::SequenceBatch&,               \
                                    const RunOptions&);                       \
  template RunResult<T> run_backward(const RnnStack<T>&,                      \
                                     const OutputHead<T>&,                    \
                                     const data::SequenceBatch&,              \
                                     const RunOptions&);                      \
  template std::vector<std::vector<int32_t>> sample(                          \
      const RnnStack<T>&, const OutputHead<T>&, int64_t, int64_t, uint64_t,   \
      double, const std::vector<double>&);                                    \
  template RnnStack<T> mirror_stack(const RnnStack<T>&);                      \
  template std::vector<ParamRef<T>> stack_params(RnnStack<T>&,                \
                                                 const std::string&);         \
  template std::vector<ParamRef<T>> head_params(OutputHead<T>&,               \
                                                const std::string&);

TWINNET_INSTANTIATE_CELLS(float)
TWINNET_INSTANTIATE_CELLS(double)

}  // namespace twinnet::rnn
