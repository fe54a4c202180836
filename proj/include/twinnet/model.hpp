#pragma once

#include "twinnet/cells.hpp"
#include "twinnet/container.hpp"

namespace twinnet::twin {

using rnn::ParamRef;

// The map g applied to forward states before matching: identity (no
// parameters) or a learned affine map.
template <class T>
struct AffineMap {
  bool identity = true;
  Tensor<T> w;  // d_f × d_b
  Tensor<T> b;  // d_b

  Tensor<T> apply(const Tensor<T>& h) const {
    return identity ? h : ad::linear(h, w, b);
  }
};

enum class GMode { kIdentity, kLearned };
GMode parse_g_mode(const std::string& s);

struct ModelSpec {
  rnn::StackSpec stack;      // shared dimensions for both directions
  rnn::HeadKind head = rnn::HeadKind::kSoftmax;
  int64_t classes = 0;       // K symbols (1 for Bernoulli pixel head)
  GMode g_mode = GMode::kLearned;
  bool share_embeddings = false;

  std::string serialize() const;
  static ModelSpec deserialize(const std::string& text);
};

// Forward and backward twins with no parameter sharing (unless the embedding
// sharing switch is set), plus the map g.
template <class T>
struct TwinModel {
  ModelSpec spec;
  rnn::RnnStack<T> fwd, bwd;
  rnn::OutputHead<T> fwd_head, bwd_head;
  AffineMap<T> g;
  data::Vocab vocab;

  // Parameter groups. g belongs to the forward side: the penalty gradient
  // flows through the forward network only.
  std::vector<ParamRef<T>> forward_side_params();
  std::vector<ParamRef<T>> backward_side_params();
  std::vector<ParamRef<T>> all_params();
};

// Deterministic for a fixed (spec, seed); forward and backward parameters
// come from independent derived streams.
template <class T>
TwinModel<T> build_twin_model(const ModelSpec& spec, const data::Vocab& vocab,
                              uint64_t seed);

// Registers every parameter on the tape and returns a model whose tensors
// are the tracked leaves (storage shared with the original).
template <class T>
TwinModel<T> watch_model(Tape<T>& tape, const TwinModel<T>& model);

// Deep copy (fresh parameter storage; embedding sharing preserved).
template <class T>
TwinModel<T> clone_model(const TwinModel<T>& model);

template <class T>
void model_to_container(io::Container& c, TwinModel<T>& model,
                        const std::string& prefix);
template <class T>
TwinModel<T> model_from_container(const io::Container& c,
                                  const std::string& prefix);

}  // namespace twinnet::twin
