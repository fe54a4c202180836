// Independent scalar re-implementations used as test oracles. Everything here
// is plain loops over std::vector<double>: no tape, no Eigen, no shared code
// with the paths under test.
#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "twinnet/data.hpp"
#include "twinnet/model.hpp"

namespace oracle {

using twinnet::Tensor;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> affine(const std::vector<double>& x,
                                  const Tensor<double>& w,
                                  const Tensor<double>& b) {
  const auto rows = static_cast<size_t>(w.shape[0]);
  const auto cols = static_cast<size_t>(w.shape[1]);
  assert(x.size() == rows);
  std::vector<double> y(cols, 0.0);
  for (size_t j = 0; j < cols; ++j) {
    double acc = b.defined() ? (*b.values)[j] : 0.0;
    for (size_t i = 0; i < rows; ++i) acc += x[i] * (*w.values)[i * cols + j];
    y[j] = acc;
  }
  return y;
}

struct LstmState {
  std::vector<double> h, c;
};

// Gate packing [i|f|g|o], matching the cell under test.
inline LstmState lstm_step(const twinnet::rnn::CellParams<double>& p,
                           const std::vector<double>& x, const LstmState& s) {
  const auto H = static_cast<size_t>(p.hidden);
  std::vector<double> pre(4 * H, 0.0);
  for (size_t j = 0; j < 4 * H; ++j) {
    double acc = (*p.bias_ih.values)[j];
    for (size_t i = 0; i < x.size(); ++i)
      acc += x[i] * (*p.w_ih.values)[i * 4 * H + j];
    for (size_t i = 0; i < H; ++i)
      acc += s.h[i] * (*p.w_hh.values)[i * 4 * H + j];
    pre[j] = acc;
  }
  LstmState out{std::vector<double>(H), std::vector<double>(H)};
  for (size_t j = 0; j < H; ++j) {
    const double i_g = sigmoid(pre[j]);
    const double f_g = sigmoid(pre[H + j]);
    const double g_g = std::tanh(pre[2 * H + j]);
    const double o_g = sigmoid(pre[3 * H + j]);
    out.c[j] = f_g * s.c[j] + i_g * g_g;
    out.h[j] = o_g * std::tanh(out.c[j]);
  }
  return out;
}

inline double softmax_nll(const std::vector<double>& logits, int target) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return std::log(z) + mx - logits[static_cast<size_t>(target)];
}

inline double bernoulli_nll(double logit, int bit) {
  return std::max(logit, 0.0) - logit * bit + std::log1p(std::exp(-std::abs(logit)));
}

struct ScalarRun {
  std::vector<std::vector<double>> top;  // per step, top-layer h
  std::vector<double> step_nll;
  double nll = 0.0;
};

inline std::vector<double> embed_row(const Tensor<double>& table, int32_t id) {
  const auto e = static_cast<size_t>(table.shape[1]);
  std::vector<double> x(e);
  for (size_t j = 0; j < e; ++j)
    x[j] = (*table.values)[static_cast<size_t>(id) * e + j];
  return x;
}

inline double head_nll(const twinnet::rnn::OutputHead<double>& head,
                       const std::vector<double>& h, int32_t token) {
  const int cls = token - twinnet::data::kNumReserved;
  std::vector<double> logits = affine(h, head.w, head.b);
  if (head.kind == twinnet::rnn::HeadKind::kSoftmax)
    return softmax_nll(logits, cls);
  return bernoulli_nll(logits[0], cls);
}

inline ScalarRun run_forward_scalar(const twinnet::rnn::RnnStack<double>& stack,
                                    const twinnet::rnn::OutputHead<double>& head,
                                    const std::vector<int32_t>& tokens,
                                    const std::vector<double>& cond = {}) {
  const size_t L = stack.layers.size();
  std::vector<LstmState> states(L);
  for (size_t l = 0; l < L; ++l) {
    states[l].h.assign(static_cast<size_t>(stack.layers[l].hidden), 0.0);
    states[l].c.assign(static_cast<size_t>(stack.layers[l].hidden), 0.0);
  }
  ScalarRun out;
  for (size_t t = 0; t < tokens.size(); ++t) {
    int32_t input = t == 0 ? twinnet::data::kSosId : tokens[t - 1];
    std::vector<double> x = embed_row(stack.embedding, input);
    x.insert(x.end(), cond.begin(), cond.end());
    for (size_t l = 0; l < L; ++l) {
      states[l] = lstm_step(stack.layers[l], x, states[l]);
      x = states[l].h;
    }
    out.top.push_back(states.back().h);
    out.step_nll.push_back(head_nll(head, states.back().h, tokens[t]));
    out.nll += out.step_nll.back();
  }
  return out;
}

inline ScalarRun run_backward_scalar(const twinnet::rnn::RnnStack<double>& stack,
                                     const twinnet::rnn::OutputHead<double>& head,
                                     const std::vector<int32_t>& tokens) {
  const size_t L = stack.layers.size();
  const size_t T = tokens.size();
  std::vector<LstmState> states(L);
  for (size_t l = 0; l < L; ++l) {
    states[l].h.assign(static_cast<size_t>(stack.layers[l].hidden), 0.0);
    states[l].c.assign(static_cast<size_t>(stack.layers[l].hidden), 0.0);
  }
  ScalarRun out;
  out.top.resize(T);
  out.step_nll.resize(T);
  for (size_t ti = T; ti-- > 0;) {
    int32_t input = ti + 1 == T ? twinnet::data::kEosId : tokens[ti + 1];
    std::vector<double> x = embed_row(stack.embedding, input);
    for (size_t l = 0; l < L; ++l) {
      states[l] = lstm_step(stack.layers[l], x, states[l]);
      x = states[l].h;
    }
    out.top[ti] = states.back().h;
    out.step_nll[ti] = head_nll(head, states.back().h, tokens[ti]);
    out.nll += out.step_nll[ti];
  }
  return out;
}

struct ScalarObjective {
  double nll_f = 0, nll_b = 0, penalty = 0, total = 0;
  std::vector<double> step_pen;
};

// Hand evaluation of the twin objective for one sequence: forward NLL,
// backward NLL, per-step Euclidean penalty with the affine map applied.
inline ScalarObjective objective_scalar(twinnet::twin::TwinModel<double>& model,
                                        const std::vector<int32_t>& tokens,
                                        double alpha) {
  ScalarRun f = run_forward_scalar(model.fwd, model.fwd_head, tokens);
  ScalarRun b = run_backward_scalar(model.bwd, model.bwd_head, tokens);
  ScalarObjective out;
  out.nll_f = f.nll;
  out.nll_b = b.nll;
  for (size_t t = 0; t < tokens.size(); ++t) {
    std::vector<double> gh =
        model.g.identity ? f.top[t] : affine(f.top[t], model.g.w, model.g.b);
    double sq = 0.0;
    for (size_t j = 0; j < gh.size(); ++j)
      sq += (gh[j] - b.top[t][j]) * (gh[j] - b.top[t][j]);
    out.step_pen.push_back(std::sqrt(sq));
    out.penalty += out.step_pen.back();
  }
  out.total = out.nll_f + out.nll_b + alpha * out.penalty;
  return out;
}

// Scalar Adam on a 1-d parameter; returns the parameter after each step.
inline std::vector<double> adam_scalar(double theta0, double lr, double b1,
                                       double b2, double eps, int steps,
                                       const std::function<double(double)>& grad) {
  double theta = theta0, m = 0, v = 0;
  std::vector<double> traj;
  for (int t = 1; t <= steps; ++t) {
    double g = grad(theta);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, t));
    double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
    traj.push_back(theta);
  }
  return traj;
}

// Enumerates the full delayed-copy support; the distribution is uniform over
// it, so the entropy is ln(support size).
inline double delayed_copy_entropy_enumerated(int64_t T, int64_t k, int64_t K) {
  std::set<std::string> support;
  const int fillers = static_cast<int>(K - 1);
  const int64_t positions = T - k;
  std::vector<int> filler_idx(static_cast<size_t>(T - 2), 0);
  for (int64_t p = 1; p <= positions; ++p) {
    std::fill(filler_idx.begin(), filler_idx.end(), 0);
    for (;;) {
      std::string s(static_cast<size_t>(T), '?');
      size_t fi = 0;
      for (int64_t t = 1; t <= T; ++t) {
        if (t == p || t == p + k)
          s[static_cast<size_t>(t - 1)] = 'Z';
        else
          s[static_cast<size_t>(t - 1)] =
              static_cast<char>('a' + filler_idx[fi++]);
      }
      support.insert(s);
      // Odometer over filler choices.
      size_t d = 0;
      while (d < filler_idx.size() && ++filler_idx[d] == fillers) {
        filler_idx[d] = 0;
        ++d;
      }
      if (d == filler_idx.size()) break;
    }
  }
  return std::log(static_cast<double>(support.size()));
}

// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double()>& f, double* coord,
                           double eps) {
  const double saved = *coord;
  *coord = saved + eps;
  const double fp = f();
  *coord = saved - eps;
  const double fm = f();
  *coord = saved;
  return (fp - fm) / (2 * eps);
}

}  // namespace oracle
