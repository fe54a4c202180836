#include "twinnet/objective.hpp"

#include <cmath>

#include "twinnet/config.hpp"
#include "twinnet/rng.hpp"

namespace twinnet::twin {

GMode parse_g_mode(const std::string& s) {
  if (s == "identity") return GMode::kIdentity;
  if (s == "learned") return GMode::kLearned;
  throw InvalidArgument(str_cat("unknown g-mode '", s, "'"));
}

BackwardMode parse_backward_mode(const std::string& s) {
  if (s == "twin") return BackwardMode::kTwin;
  if (s == "gaussian-noise") return BackwardMode::kGaussianNoise;
  if (s == "zeros-ar") return BackwardMode::kZerosAr;
  if (s == "stabilizing-norm") return BackwardMode::kStabilizingNorm;
  if (s == "baseline") return BackwardMode::kBaseline;
  throw InvalidArgument(str_cat("unknown backward mode '", s, "'"));
}

std::string backward_mode_name(BackwardMode m) {
  switch (m) {
    case BackwardMode::kTwin: return "twin";
    case BackwardMode::kGaussianNoise: return "gaussian-noise";
    case BackwardMode::kZerosAr: return "zeros-ar";
    case BackwardMode::kStabilizingNorm: return "stabilizing-norm";
    case BackwardMode::kBaseline: return "baseline";
  }
  return "?";
}

std::string ModelSpec::serialize() const {
  std::ostringstream os;
  os << "cell = " << (stack.cell == rnn::CellKind::kLstm ? "lstm" : "gru") << "\n"
     << "layers = " << stack.layers << "\n"
     << "hidden = " << stack.hidden << "\n"
     << "embed_dim = " << stack.embed_dim << "\n"
     << "vocab_size = " << stack.vocab_size << "\n"
     << "cond_dim = " << stack.cond_dim << "\n"
     << "cond_proj_dim = " << stack.cond_proj_dim << "\n"
     << "init = "
     << (stack.init == rnn::InitScheme::kUniformScaled ? "uniform" : "orthogonal")
     << "\n"
     << "head = " << (head == rnn::HeadKind::kSoftmax ? "softmax" : "bernoulli")
     << "\n"
     << "classes = " << classes << "\n"
     << "g_mode = " << (g_mode == GMode::kIdentity ? "identity" : "learned") << "\n"
     << "share_embeddings = " << (share_embeddings ? "true" : "false") << "\n";
  return os.str();
}

ModelSpec ModelSpec::deserialize(const std::string& text) {
  Config c = Config::parse_text(text, "model-spec");
  ModelSpec s;
  s.stack.cell = rnn::parse_cell_kind(c.require_string("cell"));
  s.stack.layers = c.get_int("layers", 1);
  s.stack.hidden = c.get_int("hidden", 0);
  s.stack.embed_dim = c.get_int("embed_dim", 0);
  s.stack.vocab_size = c.get_int("vocab_size", 0);
  s.stack.cond_dim = c.get_int("cond_dim", 0);
  s.stack.cond_proj_dim = c.get_int("cond_proj_dim", 0);
  s.stack.init = rnn::parse_init_scheme(c.get_string("init", "uniform"));
  s.head = c.get_string("head", "softmax") == "softmax" ? rnn::HeadKind::kSoftmax
                                                        : rnn::HeadKind::kBernoulli;
  s.classes = c.get_int("classes", 0);
  s.g_mode = parse_g_mode(c.get_string("g_mode", "learned"));
  s.share_embeddings = c.get_bool("share_embeddings", false);
  return s;
}

template <class T>
std::vector<ParamRef<T>> TwinModel<T>::forward_side_params() {
  auto out = rnn::stack_params(fwd, "fwd");
  for (auto& p : rnn::head_params(fwd_head, "fwd_head")) out.push_back(p);
  if (!g.identity) {
    out.push_back({"g.w", &g.w});
    out.push_back({"g.b", &g.b});
  }
  return out;
}

template <class T>
std::vector<ParamRef<T>> TwinModel<T>::backward_side_params() {
  auto out = rnn::stack_params(bwd, "bwd");
  if (spec.share_embeddings)
    out.erase(out.begin());  // embedding owned by the forward side
  for (auto& p : rnn::head_params(bwd_head, "bwd_head")) out.push_back(p);
  return out;
}

template <class T>
std::vector<ParamRef<T>> TwinModel<T>::all_params() {
  auto out = forward_side_params();
  for (auto& p : backward_side_params()) out.push_back(p);
  return out;
}

template <class T>
TwinModel<T> build_twin_model(const ModelSpec& spec, const data::Vocab& vocab,
                              uint64_t seed) {
  TwinModel<T> m;
  m.spec = spec;
  m.vocab = vocab;
  m.fwd = rnn::init_stack<T>(spec.stack, rnn::Direction::kForward,
                             derive_seed(seed, "fwd"));
  m.bwd = rnn::init_stack<T>(spec.stack, rnn::Direction::kBackward,
                             derive_seed(seed, "bwd"));
  if (spec.share_embeddings) m.bwd.embedding = m.fwd.embedding;
  m.fwd_head = rnn::init_head<T>(spec.head, spec.stack.hidden, spec.classes,
                                 derive_seed(seed, "fwd_head"));
  m.bwd_head = rnn::init_head<T>(spec.head, spec.stack.hidden, spec.classes,
                                 derive_seed(seed, "bwd_head"));
  if (spec.g_mode == GMode::kLearned) {
    m.g.identity = false;
    // Identity at init: the learned map starts inside the identity class.
    m.g.w = zeros<T>({spec.stack.hidden, spec.stack.hidden});
    for (int64_t i = 0; i < spec.stack.hidden; ++i) m.g.w.at(i, i) = T(1);
    m.g.b = zeros<T>({spec.stack.hidden});
  }
  return m;
}

template <class T>
TwinModel<T> watch_model(Tape<T>& tape, const TwinModel<T>& model) {
  TwinModel<T> m = model;
  for (auto& p : m.forward_side_params()) *p.tensor = tape.watch(*p.tensor);
  if (m.spec.share_embeddings) m.bwd.embedding = m.fwd.embedding;
  for (auto& p : m.backward_side_params())
    if (!p.tensor->tracked()) *p.tensor = tape.watch(*p.tensor);
  return m;
}

template <class T>
std::pair<Tensor<T>, std::vector<double>> twin_penalty(
    const std::vector<Tensor<T>>& hf, const std::vector<Tensor<T>>& hb,
    const AffineMap<T>& g, const data::SequenceBatch& batch,
    bool normalize_by_length) {
  if (hf.size() != hb.size())
    throw InvalidArgument(str_cat("twin_penalty: trace lengths differ: ",
                                  hf.size(), " vs ", hb.size()));
  Tensor<T> total = scalar_tensor(T(0));
  std::vector<double> step_values;
  step_values.reserve(hf.size());
  for (size_t t = 0; t < hf.size(); ++t) {
    Tensor<T> gh = g.apply(hf[t]);
    if (gh.shape != hb[t].shape)
      throw InvalidArgument(str_cat("twin_penalty: g output ",
                                    shape_str(gh.shape),
                                    " does not match backward state ",
                                    shape_str(hb[t].shape)));
    std::vector<T> w(static_cast<size_t>(batch.batch));
    for (int64_t i = 0; i < batch.batch; ++i) {
      T active = batch.active(i, static_cast<int64_t>(t)) ? T(1) : T(0);
      w[static_cast<size_t>(i)] =
          normalize_by_length && active != T(0)
              ? active / static_cast<T>(batch.lengths[static_cast<size_t>(i)])
              : active;
    }
    Tensor<T> lt = ad::l2_distance(gh, ad::stop_gradient(hb[t]), w);
    step_values.push_back(static_cast<double>(lt.scalar()));
    total = ad::add(total, lt);
  }
  return {total, step_values};
}

namespace {

template <class T>
std::pair<Tensor<T>, std::vector<double>> norm_stability_penalty(
    const std::vector<Tensor<T>>& hf, const data::SequenceBatch& batch,
    bool normalize_by_length) {
  Tensor<T> total = scalar_tensor(T(0));
  std::vector<double> step_values(hf.size(), 0.0);
  if (hf.empty()) return {total, step_values};
  std::vector<Tensor<T>> norms;
  norms.reserve(hf.size());
  for (const auto& h : hf) norms.push_back(ad::row_norms(h));
  for (size_t t = 1; t < hf.size(); ++t) {
    std::vector<T> w(static_cast<size_t>(batch.batch));
    for (int64_t i = 0; i < batch.batch; ++i) {
      // Only pairs of real consecutive states enter.
      T active = batch.active(i, static_cast<int64_t>(t)) &&
                         batch.active(i, static_cast<int64_t>(t) - 1)
                     ? T(1)
                     : T(0);
      w[static_cast<size_t>(i)] =
          normalize_by_length && active != T(0)
              ? active / static_cast<T>(batch.lengths[static_cast<size_t>(i)])
              : active;
    }
    Tensor<T> d = ad::sub(norms[t], norms[t - 1]);
    Tensor<T> contrib = ad::masked_sum(ad::mul(d, d), w);
    step_values[t] = static_cast<double>(contrib.scalar());
    total = ad::add(total, contrib);
  }
  return {total, step_values};
}

}  // namespace

template <class T>
LossBreakdown<T> compute_objective(Tape<T>& tape, TwinModel<T>& model,
                                   const data::SequenceBatch& batch,
                                   const ObjectiveConfig& cfg,
                                   uint64_t step_seed, bool train,
                                   TwinModel<T>* watched_out) {
  TwinModel<T> m = watch_model(tape, model);
  if (watched_out) *watched_out = m;
  const double B = static_cast<double>(batch.batch);
  rnn::RunOptions fopts{cfg.dropout, derive_seed(step_seed, "dropout-f"), train};
  rnn::RunResult<T> f = rnn::run_forward(m.fwd, m.fwd_head, batch, fopts);

  LossBreakdown<T> out;
  Tensor<T> total = f.nll_sum;
  Tensor<T> penalty_node;
  std::vector<double> step_pen;

  switch (cfg.mode) {
    case BackwardMode::kTwin: {
      rnn::RunOptions bopts{cfg.dropout, derive_seed(step_seed, "dropout-b"),
                            train};
      rnn::RunResult<T> b = rnn::run_backward(m.bwd, m.bwd_head, batch, bopts);
      out.backward_nll = static_cast<double>(b.nll_sum.scalar()) / B;
      total = ad::add(total, b.nll_sum);
      std::tie(penalty_node, step_pen) =
          twin_penalty(f.trace.top, b.trace.top, m.g, batch,
                       cfg.normalize_penalty_by_length);
      break;
    }
    case BackwardMode::kGaussianNoise: {
      std::vector<Tensor<T>> noise;
      const int64_t H = m.spec.stack.hidden;
      for (size_t t = 0; t < f.trace.top.size(); ++t) {
        Rng rng(derive_seed(step_seed, "gaussian-noise", t));
        auto n = zeros<T>({batch.batch, H});
        for (T& v : *n.values)
          v = static_cast<T>(rng.normal(0.0, cfg.noise_sigma));
        noise.push_back(std::move(n));
      }
      std::tie(penalty_node, step_pen) =
          twin_penalty(f.trace.top, noise, m.g, batch,
                       cfg.normalize_penalty_by_length);
      break;
    }
    case BackwardMode::kZerosAr: {
      std::vector<Tensor<T>> zeros_trace(
          f.trace.top.size(), zeros<T>({batch.batch, m.spec.stack.hidden}));
      std::tie(penalty_node, step_pen) =
          twin_penalty(f.trace.top, zeros_trace, m.g, batch,
                       cfg.normalize_penalty_by_length);
      break;
    }
    case BackwardMode::kStabilizingNorm:
      std::tie(penalty_node, step_pen) = norm_stability_penalty(
          f.trace.top, batch, cfg.normalize_penalty_by_length);
      break;
    case BackwardMode::kBaseline:
      break;
  }

  // alpha == 0 keeps the penalty out of the total entirely; a zero-scaled
  // branch could still flip ±0.0 bits in accumulated gradients.
  if (penalty_node.defined() && cfg.alpha != 0.0)
    total = ad::add(total, ad::scale(penalty_node, static_cast<T>(cfg.alpha)));
  total = ad::scale(total, static_cast<T>(1.0 / B));

  out.forward_nll = static_cast<double>(f.nll_sum.scalar()) / B;
  if (penalty_node.defined()) {
    out.penalty = static_cast<double>(penalty_node.scalar()) / B;
    out.step_penalty = std::move(step_pen);
    for (double& v : out.step_penalty) v /= B;
  }
  out.total = static_cast<double>(total.scalar());
  out.total_node = total;
  return out;
}

template <class T>
PartitionCheck gradient_partition_check(TwinModel<T>& model,
                                        const data::SequenceBatch& batch,
                                        const ObjectiveConfig& cfg,
                                        uint64_t step_seed) {
  if (cfg.mode != BackwardMode::kTwin)
    throw InvalidArgument("gradient_partition_check: requires twin mode");
  PartitionCheck out;

  {
    // (a) + (c): sweep from α·penalty alone.
    Tape<T> tape;
    TwinModel<T> m = watch_model(tape, model);
    auto f = rnn::run_forward(m.fwd, m.fwd_head, batch, {});
    rnn::RunResult<T> b = rnn::run_backward(m.bwd, m.bwd_head, batch, {});
    auto [pen, trace] = twin_penalty(f.trace.top, b.trace.top, m.g, batch,
                                     cfg.normalize_penalty_by_length);
    (void)trace;
    Tensor<T> loss = ad::scale(pen, static_cast<T>(cfg.alpha));
    tape.backward(loss);
    out.penalty_grad_zero_on_backward = true;
    for (auto& p : m.backward_side_params()) {
      auto g = tape.grad_of(*p.tensor);
      for (T v : g) {
        out.max_abs_a = std::max(out.max_abs_a, std::abs(double(v)));
        if (v != T(0)) out.penalty_grad_zero_on_backward = false;
      }
    }
    for (auto& p : m.forward_side_params()) {
      auto g = tape.grad_of(*p.tensor);
      for (T v : g)
        out.max_abs_c = std::max(out.max_abs_c, std::abs(double(v)));
    }
    out.penalty_grad_nonzero_on_forward = out.max_abs_c > 0.0;
  }
  {
    // (b): sweep from the backward NLL alone.
    Tape<T> tape;
    TwinModel<T> m = watch_model(tape, model);
    rnn::RunResult<T> b = rnn::run_backward(m.bwd, m.bwd_head, batch, {});
    tape.backward(b.nll_sum);
    out.backward_nll_grad_zero_on_forward = true;
    for (auto& p : m.forward_side_params()) {
      if (m.spec.share_embeddings && p.name == "fwd.embedding")
        continue;  // shared embedding legitimately receives backward NLL grad
      auto g = tape.grad_of(*p.tensor);
      for (T v : g) {
        out.max_abs_b = std::max(out.max_abs_b, std::abs(double(v)));
        if (v != T(0)) out.backward_nll_grad_zero_on_forward = false;
      }
    }
  }
  return out;
}

#define TWINNET_INSTANTIATE_TWIN(T)                                           \
  template struct TwinModel<T>;                                               \
  template TwinModel<T> build_twin_model(const ModelSpec&, const data::Vocab&, \
                                         uint64_t);                           \
  template TwinModel<T> watch_model(Tape<T>&, const TwinModel<T>&);           \
  template std::pair<Tensor<T>, std::vector<double>> twin_penalty(            \
      const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,           \
      const AffineMap<T>&, const data::SequenceBatch&, bool);                 \
  template LossBreakdown<T> compute_objective(Tape<T>&, TwinModel<T>&,        \
                                              const data::SequenceBatch&,     \
                                              const ObjectiveConfig&,         \
                                              uint64_t, bool, TwinModel<T>*); \
  template PartitionCheck gradient_partition_check(                           \
      TwinModel<T>&, const data::SequenceBatch&, const ObjectiveConfig&,      \
      uint64_t);

TWINNET_INSTANTIATE_TWIN(float)
TWINNET_INSTANTIATE_TWIN(double)

}  // namespace twinnet::twin
