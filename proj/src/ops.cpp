#include "twinnet/ops.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>

namespace twinnet::ad {

namespace {

std::atomic<double> g_corrupt_tanh{0.0};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
void ensure_finite(const ValueBuffer<T>& v, const char* op) {
  if (!CArrMap<T>(v.data(), static_cast<Eigen::Index>(v.size())).allFinite())
    throw NumericError(str_cat(op, ": produced a non-finite value"));
}

template <class T>
Tape<T>* result_tape(std::initializer_list<const Tensor<T>*> inputs,
                     const char* op) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape)
      throw InvalidArgument(str_cat(op, ": inputs recorded on different tapes"));
    tape = t->tape;
  }
  return tape;
}

template <class T>
std::shared_ptr<ValueBuffer<T>> alloc_values(Tape<T>* tape, int64_t n) {
  return tape ? tape->alloc(static_cast<size_t>(n))
              : std::make_shared<ValueBuffer<T>>(static_cast<size_t>(n));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw InvalidArgument(str_cat(op, ": shape mismatch ", shape_str(a.shape),
                                  " vs ", shape_str(b.shape)));
}

// Finalizes an op result: finiteness check and node registration.
template <class T>
void finish(Tensor<T>& out, Tape<T>* tape, const char* op) {
  ensure_finite(*out.values, op);
  if (tape) {
    out.node = tape->add_node(out.shape, out.values, op);
    out.tape = tape;
  }
}

template <class T>
void axpy(ValueBuffer<T>& dst, const T* src, size_t n, T alpha = T(1)) {
  ArrMap<T>(dst.data(), static_cast<Eigen::Index>(n)) +=
      alpha * CArrMap<T>(src, static_cast<Eigen::Index>(n));
}

template <class T>
void axpy_row(T* dst, const T* src, int64_t n) {
  ArrMap<T>(dst, n) += CArrMap<T>(src, n);
}

}  // namespace

void set_corrupt_tanh_backward(double factor) { g_corrupt_tanh = factor; }
double corrupt_tanh_backward() { return g_corrupt_tanh; }

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw InvalidArgument(str_cat("matmul: incompatible shapes ",
                                  shape_str(a.shape), " x ", shape_str(b.shape)));
  const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tape<T>* tape = result_tape<T>({&a, &b}, "matmul");
  Tensor<T> out(Shape{m, n}, alloc_values(tape, m * n));
  MatMap<T>(out.values->data(), m, n).noalias() =
      CMatMap<T>(a.values->data(), m, k) * CMatMap<T>(b.values->data(), k, n);
  finish(out, tape, "matmul");
  if (tape) {
    auto av = a.values, bv = b.values;
    int an = a.node, bn = b.node, on = out.node;
    tape->record([av, bv, an, bn, on, m, k, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CMatMap<T> go(tp.grad(on).data(), m, n);
      if (an != kConstantNode)
        MatMap<T>(tp.grad(an).data(), m, k).noalias() +=
            go * CMatMap<T>(bv->data(), k, n).transpose();
      if (bn != kConstantNode)
        MatMap<T>(tp.grad(bn).data(), k, n).noalias() +=
            CMatMap<T>(av->data(), m, k).transpose() * go;
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tape<T>* tape = result_tape<T>({&a, &b}, "add");
  const int64_t n = a.size();
  Tensor<T> out(a.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) =
      CArrMap<T>(a.values->data(), n) + CArrMap<T>(b.values->data(), n);
  finish(out, tape, "add");
  if (tape) {
    int an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      const auto& go = tp.grad(on);
      if (an != kConstantNode) axpy(tp.grad(an), go.data(), static_cast<size_t>(n));
      if (bn != kConstantNode) axpy(tp.grad(bn), go.data(), static_cast<size_t>(n));
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tape<T>* tape = result_tape<T>({&a, &b}, "sub");
  const int64_t n = a.size();
  Tensor<T> out(a.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) =
      CArrMap<T>(a.values->data(), n) - CArrMap<T>(b.values->data(), n);
  finish(out, tape, "sub");
  if (tape) {
    int an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      const auto& go = tp.grad(on);
      if (an != kConstantNode) axpy(tp.grad(an), go.data(), static_cast<size_t>(n));
      if (bn != kConstantNode) axpy(tp.grad(bn), go.data(), static_cast<size_t>(n), T(-1));
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tape<T>* tape = result_tape<T>({&a, &b}, "mul");
  const int64_t n = a.size();
  Tensor<T> out(a.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) =
      CArrMap<T>(a.values->data(), n) * CArrMap<T>(b.values->data(), n);
  finish(out, tape, "mul");
  if (tape) {
    auto av = a.values, bv = b.values;
    int an = a.node, bn = b.node, on = out.node;
    tape->record([av, bv, an, bn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CArrMap<T> go(tp.grad(on).data(), n);
      if (an != kConstantNode)
        ArrMap<T>(tp.grad(an).data(), n) += go * CArrMap<T>(bv->data(), n);
      if (bn != kConstantNode)
        ArrMap<T>(tp.grad(bn).data(), n) += go * CArrMap<T>(av->data(), n);
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tape<T>* tape = result_tape<T>({&a}, "scale");
  const int64_t n = a.size();
  Tensor<T> out(a.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) = CArrMap<T>(a.values->data(), n) * s;
  finish(out, tape, "scale");
  if (tape) {
    int an = a.node, on = out.node;
    tape->record([an, on, n, s](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      axpy(tp.grad(an), tp.grad(on).data(), static_cast<size_t>(n), s);
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tape<T>* tape = result_tape<T>({&x}, "sigmoid");
  const int64_t n = x.size();
  Tensor<T> out(x.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) =
      T(1) / (T(1) + (-CArrMap<T>(x.values->data(), n)).exp());
  finish(out, tape, "sigmoid");
  if (tape) {
    auto ov = out.values;
    int xn = x.node, on = out.node;
    tape->record([ov, xn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CArrMap<T> s(ov->data(), n);
      ArrMap<T>(tp.grad(xn).data(), n) +=
          CArrMap<T>(tp.grad(on).data(), n) * s * (T(1) - s);
    });
  }
  return out;
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tape<T>* tape = result_tape<T>({&x}, "tanh");
  const int64_t n = x.size();
  Tensor<T> out(x.shape, alloc_values(tape, n));
  ArrMap<T>(out.values->data(), n) = CArrMap<T>(x.values->data(), n).tanh();
  finish(out, tape, "tanh");
  if (tape) {
    auto ov = out.values;
    int xn = x.node, on = out.node;
    tape->record([ov, xn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CArrMap<T> t(ov->data(), n);
      T corrupt = static_cast<T>(corrupt_tanh_backward());
      T f = corrupt == T(0) ? T(1) : corrupt;
      ArrMap<T>(tp.grad(xn).data(), n) +=
          f * CArrMap<T>(tp.grad(on).data(), n) * (T(1) - t * t);
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tape = result_tape<T>({&x}, "sum");
  const int64_t n = x.size();
  Tensor<T> out(Shape{}, alloc_values(tape, 1));
  (*out.values)[0] = CArrMap<T>(x.values->data(), n).sum();
  finish(out, tape, "sum");
  if (tape) {
    int xn = x.node, on = out.node;
    tape->record([xn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      T g = tp.grad(on)[0];
      ArrMap<T>(tp.grad(xn).data(), n) += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>(x.shape, x.values, kConstantNode, nullptr);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0] ||
      b.size() != w.shape[1])
    throw InvalidArgument(str_cat("linear: incompatible shapes ",
                                  shape_str(x.shape), " x ", shape_str(w.shape),
                                  " + ", shape_str(b.shape)));
  const int64_t m = x.shape[0], k = x.shape[1], n = w.shape[1];
  Tape<T>* tape = result_tape<T>({&x, &w, &b}, "linear");
  Tensor<T> out(Shape{m, n}, alloc_values(tape, m * n));
  MatMap<T> o(out.values->data(), m, n);
  o.noalias() = CMatMap<T>(x.values->data(), m, k) * CMatMap<T>(w.values->data(), k, n);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.values->data(), n);
  finish(out, tape, "linear");
  if (tape) {
    auto xv = x.values, wv = w.values;
    int xn = x.node, wn = w.node, bn = b.node, on = out.node;
    tape->record([xv, wv, xn, wn, bn, on, m, k, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CMatMap<T> go(tp.grad(on).data(), m, n);
      if (xn != kConstantNode)
        MatMap<T>(tp.grad(xn).data(), m, k).noalias() +=
            go * CMatMap<T>(wv->data(), k, n).transpose();
      if (wn != kConstantNode)
        MatMap<T>(tp.grad(wn).data(), k, n).noalias() +=
            CMatMap<T>(xv->data(), m, k).transpose() * go;
      if (bn != kConstantNode)
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(tp.grad(bn).data(), n) +=
            go.colwise().sum();
    });
  }
  return out;
}

template <class T>
Tensor<T> gates_linear(const Tensor<T>& x, const Tensor<T>& wx,
                       const Tensor<T>& h, const Tensor<T>& wh,
                       const Tensor<T>& b) {
  if (x.rank() != 2 || h.rank() != 2 || x.shape[1] != wx.shape[0] ||
      h.shape[1] != wh.shape[0] || wx.shape[1] != wh.shape[1] ||
      b.size() != wx.shape[1] || x.shape[0] != h.shape[0])
    throw InvalidArgument(str_cat("gates_linear: incompatible shapes ",
                                  shape_str(x.shape), "·", shape_str(wx.shape),
                                  " + ", shape_str(h.shape), "·",
                                  shape_str(wh.shape)));
  const int64_t m = x.shape[0], kx = x.shape[1], kh = h.shape[1], n = wx.shape[1];
  Tape<T>* tape = result_tape<T>({&x, &wx, &h, &wh, &b}, "gates_linear");
  Tensor<T> out(Shape{m, n}, alloc_values(tape, m * n));
  MatMap<T> o(out.values->data(), m, n);
  o.noalias() = CMatMap<T>(x.values->data(), m, kx) *
                CMatMap<T>(wx.values->data(), kx, n);
  o.noalias() += CMatMap<T>(h.values->data(), m, kh) *
                 CMatMap<T>(wh.values->data(), kh, n);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.values->data(), n);
  finish(out, tape, "gates_linear");
  if (tape) {
    auto xv = x.values, wxv = wx.values, hv = h.values, whv = wh.values;
    int xn = x.node, wxn = wx.node, hn = h.node, whn = wh.node, bn = b.node,
        on = out.node;
    tape->record([xv, wxv, hv, whv, xn, wxn, hn, whn, bn, on, m, kx, kh,
                  n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CMatMap<T> go(tp.grad(on).data(), m, n);
      if (xn != kConstantNode)
        MatMap<T>(tp.grad(xn).data(), m, kx).noalias() +=
            go * CMatMap<T>(wxv->data(), kx, n).transpose();
      if (wxn != kConstantNode)
        MatMap<T>(tp.grad(wxn).data(), kx, n).noalias() +=
            CMatMap<T>(xv->data(), m, kx).transpose() * go;
      if (hn != kConstantNode)
        MatMap<T>(tp.grad(hn).data(), m, kh).noalias() +=
            go * CMatMap<T>(whv->data(), kh, n).transpose();
      if (whn != kConstantNode)
        MatMap<T>(tp.grad(whn).data(), kh, n).noalias() +=
            CMatMap<T>(hv->data(), m, kh).transpose() * go;
      if (bn != kConstantNode)
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(tp.grad(bn).data(), n) +=
            go.colwise().sum();
    });
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& preact,
                                          const Tensor<T>& c_prev) {
  if (preact.rank() != 2 || c_prev.rank() != 2 ||
      preact.shape[1] != 4 * c_prev.shape[1] || preact.shape[0] != c_prev.shape[0])
    throw InvalidArgument(str_cat("lstm_cell: preact ", shape_str(preact.shape),
                                  " does not match state ", shape_str(c_prev.shape)));
  const int64_t B = preact.shape[0], H = c_prev.shape[1];
  Tape<T>* tape = result_tape<T>({&preact, &c_prev}, "lstm_cell");
  auto act = alloc_values(tape, B * 4 * H);   // activated gates [i|f|g|o]
  auto tanh_c = alloc_values(tape, B * H);
  Tensor<T> h_out(Shape{B, H}, alloc_values(tape, B * H));
  Tensor<T> c_out(Shape{B, H}, alloc_values(tape, B * H));
  {
    CMatMap<T> P(preact.values->data(), B, 4 * H);
    MatMap<T> A(act->data(), B, 4 * H);
    auto i = A.block(0, 0, B, H), f = A.block(0, H, B, H),
         g = A.block(0, 2 * H, B, H), o = A.block(0, 3 * H, B, H);
    i.array() = T(1) / (T(1) + (-P.block(0, 0, B, H).array()).exp());
    f.array() = T(1) / (T(1) + (-P.block(0, H, B, H).array()).exp());
    g.array() = P.block(0, 2 * H, B, H).array().tanh();
    o.array() = T(1) / (T(1) + (-P.block(0, 3 * H, B, H).array()).exp());
    MatMap<T> C(c_out.values->data(), B, H);
    C.array() = f.array() * CMatMap<T>(c_prev.values->data(), B, H).array() +
                i.array() * g.array();
    MatMap<T> TC(tanh_c->data(), B, H);
    TC.array() = C.array().tanh();
    MatMap<T>(h_out.values->data(), B, H).array() = o.array() * TC.array();
  }
  finish(h_out, tape, "lstm_cell");
  finish(c_out, tape, "lstm_cell");
  if (tape) {
    tape->stash(Shape{B, 4 * H}, act);
    tape->stash(Shape{B, H}, tanh_c);
    auto cpv = c_prev.values;
    int pn = preact.node, cpn = c_prev.node, hn = h_out.node, cn = c_out.node;
    tape->record([act, tanh_c, cpv, pn, cpn, hn, cn, B, H](Tape<T>& tp) {
      const bool has_dh = tp.has_grad(hn), has_dc = tp.has_grad(cn);
      if (!has_dh && !has_dc) return;
      CMatMap<T> A(act->data(), B, 4 * H);
      auto i = A.block(0, 0, B, H).array(), f = A.block(0, H, B, H).array(),
           g = A.block(0, 2 * H, B, H).array(), o = A.block(0, 3 * H, B, H).array();
      CArrMap<T> tc(tanh_c->data(), B * H);
      RowMat<T> dc_tot(B, H);
      dc_tot.setZero();
      if (has_dc)
        dc_tot.array() += CMatMap<T>(tp.grad(cn).data(), B, H).array();
      if (has_dh)
        dc_tot.array() += CMatMap<T>(tp.grad(hn).data(), B, H).array() * o *
                          (T(1) - CMatMap<T>(tanh_c->data(), B, H).array().square());
      if (pn != kConstantNode) {
        T corrupt = static_cast<T>(corrupt_tanh_backward());
        T cf = corrupt == T(0) ? T(1) : corrupt;
        MatMap<T> dP(tp.grad(pn).data(), B, 4 * H);
        dP.block(0, 0, B, H).array() +=
            dc_tot.array() * g * i * (T(1) - i);
        dP.block(0, H, B, H).array() +=
            dc_tot.array() * CMatMap<T>(cpv->data(), B, H).array() * f * (T(1) - f);
        dP.block(0, 2 * H, B, H).array() +=
            cf * dc_tot.array() * i * (T(1) - g * g);
        if (has_dh)
          dP.block(0, 3 * H, B, H).array() +=
              CMatMap<T>(tp.grad(hn).data(), B, H).array() *
              CMatMap<T>(tanh_c->data(), B, H).array() * o * (T(1) - o);
      }
      if (cpn != kConstantNode)
        MatMap<T>(tp.grad(cpn).data(), B, H).array() += dc_tot.array() * f;
    });
  }
  return {h_out, c_out};
}

template <class T>
Tensor<T> gru_cell(const Tensor<T>& px, const Tensor<T>& ph,
                   const Tensor<T>& h_prev) {
  if (px.shape != ph.shape || px.rank() != 2 ||
      px.shape[1] != 3 * h_prev.shape[1] || px.shape[0] != h_prev.shape[0])
    throw InvalidArgument(str_cat("gru_cell: preact ", shape_str(px.shape), "/",
                                  shape_str(ph.shape), " does not match state ",
                                  shape_str(h_prev.shape)));
  const int64_t B = px.shape[0], H = h_prev.shape[1];
  Tape<T>* tape = result_tape<T>({&px, &ph, &h_prev}, "gru_cell");
  auto act = alloc_values(tape, B * 3 * H);  // [r|z|n]
  Tensor<T> h_out(Shape{B, H}, alloc_values(tape, B * H));
  {
    CMatMap<T> PX(px.values->data(), B, 3 * H), PH(ph.values->data(), B, 3 * H);
    MatMap<T> A(act->data(), B, 3 * H);
    auto r = A.block(0, 0, B, H), z = A.block(0, H, B, H), n = A.block(0, 2 * H, B, H);
    r.array() = T(1) / (T(1) + (-(PX.block(0, 0, B, H) + PH.block(0, 0, B, H)).array()).exp());
    z.array() = T(1) / (T(1) + (-(PX.block(0, H, B, H) + PH.block(0, H, B, H)).array()).exp());
    n.array() = (PX.block(0, 2 * H, B, H).array() +
                 r.array() * PH.block(0, 2 * H, B, H).array()).tanh();
    MatMap<T>(h_out.values->data(), B, H).array() =
        (T(1) - z.array()) * n.array() +
        z.array() * CMatMap<T>(h_prev.values->data(), B, H).array();
  }
  finish(h_out, tape, "gru_cell");
  if (tape) {
    tape->stash(Shape{B, 3 * H}, act);
    auto phv = ph.values, hpv = h_prev.values;
    int pxn = px.node, phn = ph.node, hpn = h_prev.node, on = h_out.node;
    tape->record([act, phv, hpv, pxn, phn, hpn, on, B, H](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      CMatMap<T> A(act->data(), B, 3 * H);
      auto r = A.block(0, 0, B, H).array(), z = A.block(0, H, B, H).array(),
           n = A.block(0, 2 * H, B, H).array();
      CMatMap<T> dh(tp.grad(on).data(), B, H);
      CMatMap<T> hp(hpv->data(), B, H);
      CMatMap<T> PH(phv->data(), B, 3 * H);
      T corrupt = static_cast<T>(corrupt_tanh_backward());
      T cf = corrupt == T(0) ? T(1) : corrupt;
      RowMat<T> dn_pre = (cf * dh.array() * (T(1) - z) * (T(1) - n * n)).matrix();
      RowMat<T> dz_pre = (dh.array() * (hp.array() - n) * z * (T(1) - z)).matrix();
      RowMat<T> dr_pre = (dn_pre.array() * PH.block(0, 2 * H, B, H).array() *
                          r * (T(1) - r)).matrix();
      if (pxn != kConstantNode) {
        MatMap<T> d(tp.grad(pxn).data(), B, 3 * H);
        d.block(0, 0, B, H) += dr_pre;
        d.block(0, H, B, H) += dz_pre;
        d.block(0, 2 * H, B, H) += dn_pre;
      }
      if (phn != kConstantNode) {
        MatMap<T> d(tp.grad(phn).data(), B, 3 * H);
        d.block(0, 0, B, H) += dr_pre;
        d.block(0, H, B, H) += dz_pre;
        d.block(0, 2 * H, B, H).array() += dn_pre.array() * r;
      }
      if (hpn != kConstantNode)
        MatMap<T>(tp.grad(hpn).data(), B, H).array() += dh.array() * z;
    });
  }
  return h_out;
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int32_t> ids) {
  if (table.rank() != 2)
    throw InvalidArgument("embedding: table must be rank 2");
  const int64_t V = table.shape[0], E = table.shape[1];
  const int64_t B = static_cast<int64_t>(ids.size());
  for (int32_t id : ids)
    if (id < 0 || id >= V)
      throw InvalidArgument(str_cat("embedding: id ", id,
                                    " outside vocabulary of size ", V));
  Tape<T>* tape = result_tape<T>({&table}, "embedding");
  Tensor<T> out(Shape{B, E}, alloc_values(tape, B * E));
  for (int64_t r = 0; r < B; ++r)
    std::copy_n(table.values->data() + static_cast<int64_t>(ids[r]) * E, E,
                out.values->data() + r * E);
  finish(out, tape, "embedding");
  if (tape && table.tracked()) {
    std::vector<int32_t> idv(ids.begin(), ids.end());
    int tn = table.node, on = out.node;
    tape->record([idv = std::move(idv), tn, on, E](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      const auto& go = tp.grad(on);
      auto& gt = tp.grad(tn);
      for (size_t r = 0; r < idv.size(); ++r)
        axpy_row(gt.data() + static_cast<int64_t>(idv[r]) * E,
                 go.data() + static_cast<int64_t>(r) * E, E);
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
    throw InvalidArgument(str_cat("concat_cols: row mismatch ", shape_str(a.shape),
                                  " vs ", shape_str(b.shape)));
  const int64_t B = a.shape[0], p = a.shape[1], q = b.shape[1];
  Tape<T>* tape = result_tape<T>({&a, &b}, "concat_cols");
  Tensor<T> out(Shape{B, p + q}, alloc_values(tape, B * (p + q)));
  for (int64_t r = 0; r < B; ++r) {
    std::copy_n(a.values->data() + r * p, p, out.values->data() + r * (p + q));
    std::copy_n(b.values->data() + r * q, q, out.values->data() + r * (p + q) + p);
  }
  finish(out, tape, "concat_cols");
  if (tape) {
    int an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, B, p, q](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      const auto& go = tp.grad(on);
      for (int64_t r = 0; r < B; ++r) {
        if (an != kConstantNode)
          axpy_row(tp.grad(an).data() + r * p, go.data() + r * (p + q), p);
        if (bn != kConstantNode)
          axpy_row(tp.grad(bn).data() + r * q, go.data() + r * (p + q) + p, q);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int32_t> targets,
                                const std::vector<T>& mask) {
  if (logits.rank() != 2)
    throw InvalidArgument("softmax_cross_entropy: logits must be rank 2");
  const int64_t B = logits.shape[0], K = logits.shape[1];
  if (static_cast<int64_t>(targets.size()) != B ||
      static_cast<int64_t>(mask.size()) != B)
    throw InvalidArgument("softmax_cross_entropy: targets/mask size mismatch");
  Tape<T>* tape = result_tape<T>({&logits}, "softmax_cross_entropy");
  auto probs = alloc_values(tape, B * K);
  Tensor<T> out(Shape{}, alloc_values(tape, 1));
  T total = T(0);
  {
    CMatMap<T> L(logits.values->data(), B, K);
    MatMap<T> P(probs->data(), B, K);
    for (int64_t r = 0; r < B; ++r) {
      if (mask[static_cast<size_t>(r)] == T(0)) {
        P.row(r).setZero();
        continue;
      }
      int32_t t = targets[static_cast<size_t>(r)];
      if (t < 0 || t >= K)
        throw InvalidArgument(str_cat("softmax_cross_entropy: target ", t,
                                      " outside [0,", K, ") at row ", r));
      T mx = L.row(r).maxCoeff();
      P.row(r).array() = (L.row(r).array() - mx).exp();
      T z = P.row(r).sum();
      P.row(r) /= z;
      total += mask[static_cast<size_t>(r)] *
               (std::log(z) + mx - L(r, t));
    }
  }
  (*out.values)[0] = total;
  finish(out, tape, "softmax_cross_entropy");
  if (tape && logits.tracked()) {
    tape->stash(Shape{B, K}, probs);
    std::vector<int32_t> tv(targets.begin(), targets.end());
    std::vector<T> mv(mask.begin(), mask.end());
    int ln = logits.node, on = out.node;
    tape->record([probs, tv = std::move(tv), mv = std::move(mv), ln, on, B,
                  K](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      T g = tp.grad(on)[0];
      MatMap<T> dL(tp.grad(ln).data(), B, K);
      CMatMap<T> P(probs->data(), B, K);
      for (int64_t r = 0; r < B; ++r) {
        T w = mv[static_cast<size_t>(r)];
        if (w == T(0)) continue;
        dL.row(r) += g * w * P.row(r);
        dL(r, tv[static_cast<size_t>(r)]) -= g * w;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> bernoulli_cross_entropy(const Tensor<T>& logits,
                                  std::span<const int32_t> targets,
                                  const std::vector<T>& mask) {
  const int64_t B = logits.size();
  if (static_cast<int64_t>(targets.size()) != B ||
      static_cast<int64_t>(mask.size()) != B)
    throw InvalidArgument("bernoulli_cross_entropy: targets/mask size mismatch");
  Tape<T>* tape = result_tape<T>({&logits}, "bernoulli_cross_entropy");
  Tensor<T> out(Shape{}, alloc_values(tape, 1));
  T total = T(0);
  for (int64_t r = 0; r < B; ++r) {
    T w = mask[static_cast<size_t>(r)];
    if (w == T(0)) continue;
    int32_t t = targets[static_cast<size_t>(r)];
    if (t != 0 && t != 1)
      throw InvalidArgument(str_cat("bernoulli_cross_entropy: target ", t,
                                    " not binary at row ", r));
    T z = (*logits.values)[static_cast<size_t>(r)];
    T loss = std::max(z, T(0)) - z * static_cast<T>(t) +
             std::log1p(std::exp(-std::abs(z)));
    total += w * loss;
  }
  (*out.values)[0] = total;
  finish(out, tape, "bernoulli_cross_entropy");
  if (tape && logits.tracked()) {
    auto lv = logits.values;
    std::vector<int32_t> tv(targets.begin(), targets.end());
    std::vector<T> mv(mask.begin(), mask.end());
    int ln = logits.node, on = out.node;
    tape->record([lv, tv = std::move(tv), mv = std::move(mv), ln, on, B](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      T g = tp.grad(on)[0];
      auto& dL = tp.grad(ln);
      for (int64_t r = 0; r < B; ++r) {
        T w = mv[static_cast<size_t>(r)];
        if (w == T(0)) continue;
        T z = (*lv)[static_cast<size_t>(r)];
        T s = T(1) / (T(1) + std::exp(-z));
        dL[static_cast<size_t>(r)] +=
            g * w * (s - static_cast<T>(tv[static_cast<size_t>(r)]));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b,
                      const std::vector<T>& mask) {
  require_same_shape(a, b, "l2_distance");
  if (a.rank() != 2 || static_cast<int64_t>(mask.size()) != a.shape[0])
    throw InvalidArgument("l2_distance: expects rank-2 inputs and per-row mask");
  const int64_t B = a.shape[0], d = a.shape[1];
  Tape<T>* tape = result_tape<T>({&a, &b}, "l2_distance");
  auto diff = alloc_values(tape, B * d);
  auto norms = alloc_values(tape, B);
  Tensor<T> out(Shape{}, alloc_values(tape, 1));
  {
    MatMap<T> D(diff->data(), B, d);
    D = CMatMap<T>(a.values->data(), B, d) - CMatMap<T>(b.values->data(), B, d);
    T total = T(0);
    for (int64_t r = 0; r < B; ++r) {
      T n = D.row(r).norm();
      (*norms)[static_cast<size_t>(r)] = n;
      total += mask[static_cast<size_t>(r)] * n;
    }
    (*out.values)[0] = total;
  }
  finish(out, tape, "l2_distance");
  if (tape) {
    tape->stash(Shape{B, d}, diff);
    tape->stash(Shape{B}, norms);
    std::vector<T> mv(mask.begin(), mask.end());
    int an = a.node, bn = b.node, on = out.node;
    tape->record([diff, norms, mv = std::move(mv), an, bn, on, B, d](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      T g = tp.grad(on)[0];
      CMatMap<T> D(diff->data(), B, d);
      for (int64_t r = 0; r < B; ++r) {
        T n = (*norms)[static_cast<size_t>(r)];
        T w = mv[static_cast<size_t>(r)];
        if (w == T(0) || n == T(0)) continue;  // zero subgradient at a == b
        T c = g * w / n;
        if (an != kConstantNode)
          MatMap<T>(tp.grad(an).data(), B, d).row(r) += c * D.row(r);
        if (bn != kConstantNode)
          MatMap<T>(tp.grad(bn).data(), B, d).row(r) -= c * D.row(r);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> row_norms(const Tensor<T>& x) {
  if (x.rank() != 2) throw InvalidArgument("row_norms: expects rank 2");
  const int64_t B = x.shape[0], d = x.shape[1];
  Tape<T>* tape = result_tape<T>({&x}, "row_norms");
  Tensor<T> out(Shape{B}, alloc_values(tape, B));
  {
    CMatMap<T> X(x.values->data(), B, d);
    for (int64_t r = 0; r < B; ++r)
      (*out.values)[static_cast<size_t>(r)] = X.row(r).norm();
  }
  finish(out, tape, "row_norms");
  if (tape) {
    auto xv = x.values, nv = out.values;
    int xn = x.node, on = out.node;
    tape->record([xv, nv, xn, on, B, d](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      const auto& go = tp.grad(on);
      CMatMap<T> X(xv->data(), B, d);
      MatMap<T> dX(tp.grad(xn).data(), B, d);
      for (int64_t r = 0; r < B; ++r) {
        T n = (*nv)[static_cast<size_t>(r)];
        if (n == T(0)) continue;  // zero subgradient at the origin
        dX.row(r) += (go[static_cast<size_t>(r)] / n) * X.row(r);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> masked_sum(const Tensor<T>& x, const std::vector<T>& mask) {
  if (x.size() != static_cast<int64_t>(mask.size()))
    throw InvalidArgument("masked_sum: mask size mismatch");
  const int64_t n = x.size();
  Tape<T>* tape = result_tape<T>({&x}, "masked_sum");
  Tensor<T> out(Shape{}, alloc_values(tape, 1));
  T total = T(0);
  for (int64_t i = 0; i < n; ++i)
    total += (*x.values)[static_cast<size_t>(i)] * mask[static_cast<size_t>(i)];
  (*out.values)[0] = total;
  finish(out, tape, "masked_sum");
  if (tape) {
    std::vector<T> mv(mask.begin(), mask.end());
    int xn = x.node, on = out.node;
    tape->record([mv = std::move(mv), xn, on, n](Tape<T>& tp) {
      if (!tp.has_grad(on)) return;
      T g = tp.grad(on)[0];
      auto& dx = tp.grad(xn);
      for (int64_t i = 0; i < n; ++i)
        dx[static_cast<size_t>(i)] += g * mv[static_cast<size_t>(i)];
    });
  }
  return out;
}

#define TWINNET_INSTANTIATE_OPS(T)                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                               \
  template Tensor<T> tanh(const Tensor<T>&);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                   \
  template Tensor<T> stop_gradient(const Tensor<T>&);                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>&);                                \
  template Tensor<T> gates_linear(const Tensor<T>&, const Tensor<T>&,         \
                                  const Tensor<T>&, const Tensor<T>&,         \
                                  const Tensor<T>&);                          \
  template std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>&,        \
                                                     const Tensor<T>&);       \
  template Tensor<T> gru_cell(const Tensor<T>&, const Tensor<T>&,             \
                              const Tensor<T>&);                              \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int32_t>);   \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&,                  \
                                           std::span<const int32_t>,          \
                                           const std::vector<T>&);            \
  template Tensor<T> bernoulli_cross_entropy(const Tensor<T>&,                \
                                             std::span<const int32_t>,        \
                                             const std::vector<T>&);          \
  template Tensor<T> l2_distance(const Tensor<T>&, const Tensor<T>&,          \
                                 const std::vector<T>&);                      \
  template Tensor<T> row_norms(const Tensor<T>&);                             \
  template Tensor<T> masked_sum(const Tensor<T>&, const std::vector<T>&);

TWINNET_INSTANTIATE_OPS(float)
TWINNET_INSTANTIATE_OPS(double)

}  // namespace twinnet::ad
