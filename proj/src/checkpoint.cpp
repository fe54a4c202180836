#include "twinnet/trainer.hpp"

namespace twinnet::twin {

template <class T>
TwinModel<T> clone_model(const TwinModel<T>& model) {
  TwinModel<T> c = model;
  for (auto& p : c.all_params()) *p.tensor = clone(*p.tensor);
  if (c.spec.share_embeddings) c.bwd.embedding = c.fwd.embedding;
  return c;
}

template <class T>
void model_to_container(io::Container& c, TwinModel<T>& model,
                        const std::string& prefix) {
  c.put_string("spec", model.spec.serialize());
  c.put_string("vocab", data::encode_vocab(model.vocab));
  std::vector<double> freq(model.vocab.frequency.begin(),
                           model.vocab.frequency.end());
  c.put_tensor_f64("vocab_frequency",
                   Shape{static_cast<int64_t>(freq.size())}, freq);
  for (auto& p : model.all_params()) c.put_tensor(prefix + p.name, *p.tensor);
}

template <class T>
TwinModel<T> model_from_container(const io::Container& c,
                                  const std::string& prefix) {
  ModelSpec spec = ModelSpec::deserialize(c.get_string("spec"));
  data::Vocab vocab = data::decode_vocab(c.get_string("vocab"));
  if (c.has("vocab_frequency")) {
    auto freq = c.get_tensor<double>("vocab_frequency");
    for (size_t i = 0; i < vocab.frequency.size() && i < freq.values->size(); ++i)
      vocab.frequency[i] = static_cast<int64_t>((*freq.values)[i]);
  }
  TwinModel<T> m = build_twin_model<T>(spec, vocab, 0);
  for (auto& p : m.all_params()) {
    Tensor<T> loaded = c.get_tensor<T>(prefix + p.name);
    if (loaded.shape != p.tensor->shape)
      throw IoError(str_cat("checkpoint: tensor '", p.name, "' has shape ",
                            shape_str(loaded.shape), ", model expects ",
                            shape_str(p.tensor->shape)));
    *p.tensor = loaded;
  }
  if (spec.share_embeddings) m.bwd.embedding = m.fwd.embedding;
  return m;
}

#define TWINNET_INSTANTIATE_MODEL_IO(T)                                      \
  template TwinModel<T> clone_model(const TwinModel<T>&);                    \
  template void model_to_container(io::Container&, TwinModel<T>&,            \
                                   const std::string&);                      \
  template TwinModel<T> model_from_container(const io::Container&,           \
                                             const std::string&);

TWINNET_INSTANTIATE_MODEL_IO(float)
TWINNET_INSTANTIATE_MODEL_IO(double)

}  // namespace twinnet::twin

namespace twinnet::train {

namespace {

template <class T>
constexpr const char* precision_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, Snapshot<T>& snap) {
  io::Container c;
  c.put_string("kind", "twinnet-checkpoint");
  c.put_string("precision", precision_tag<T>());
  twin::model_to_container(c, snap.model, "param.");
  for (auto& p : snap.best_model.all_params())
    c.put_tensor("best." + p.name, *p.tensor);
  auto params = snap.model.all_params();
  if (!snap.opt.m.empty()) {
    if (snap.opt.m.size() != params.size())
      throw InvalidArgument("checkpoint: optimizer state does not match params");
    for (size_t i = 0; i < params.size(); ++i) {
      const Shape& shape = params[i].tensor->shape;
      if constexpr (sizeof(T) == 4) {
        c.put_tensor_f32("opt.m." + params[i].name, shape, snap.opt.m[i]);
        c.put_tensor_f32("opt.v." + params[i].name, shape, snap.opt.v[i]);
      } else {
        c.put_tensor_f64("opt.m." + params[i].name, shape, snap.opt.m[i]);
        c.put_tensor_f64("opt.v." + params[i].name, shape, snap.opt.v[i]);
      }
    }
  }
  c.put_i64("state.opt_t", snap.opt.t);
  c.put_i64("state.epoch", snap.epoch);
  c.put_i64("state.step", snap.step);
  c.put_f64("state.best_valid", snap.best_valid);
  c.put_i64("state.best_epoch", snap.best_epoch);
  c.put_i64("state.seed", static_cast<int64_t>(snap.seed));
  c.save(path);
}

std::string checkpoint_precision(const std::string& path) {
  io::Container c = io::Container::load(path);
  if (!c.has("kind") || c.get_string("kind") != "twinnet-checkpoint")
    throw IoError(str_cat("checkpoint: '", path, "' is not a twinnet checkpoint"));
  return c.get_string("precision");
}

template <class T>
Snapshot<T> load_checkpoint(const std::string& path) {
  io::Container c = io::Container::load(path);
  if (!c.has("kind") || c.get_string("kind") != "twinnet-checkpoint")
    throw IoError(str_cat("checkpoint: '", path, "' is not a twinnet checkpoint"));
  Snapshot<T> snap;
  snap.model = twin::model_from_container<T>(c, "param.");
  snap.best_model = twin::model_from_container<T>(c, "best.");
  auto params = snap.model.all_params();
  if (c.has("opt.m." + params[0].name)) {
    for (auto& p : params) {
      auto m = c.get_tensor<T>("opt.m." + p.name);
      auto v = c.get_tensor<T>("opt.v." + p.name);
      snap.opt.m.emplace_back(m.values->begin(), m.values->end());
      snap.opt.v.emplace_back(v.values->begin(), v.values->end());
    }
  }
  snap.opt.t = c.get_i64("state.opt_t");
  snap.epoch = c.get_i64("state.epoch");
  snap.step = c.get_i64("state.step");
  snap.best_valid = c.get_f64("state.best_valid");
  snap.best_epoch = c.get_i64("state.best_epoch");
  snap.seed = static_cast<uint64_t>(c.get_i64("state.seed"));
  return snap;
}

#define TWINNET_INSTANTIATE_CKPT(T)                                          \
  template void save_checkpoint(const std::string&, Snapshot<T>&);           \
  template Snapshot<T> load_checkpoint(const std::string&);

TWINNET_INSTANTIATE_CKPT(float)
TWINNET_INSTANTIATE_CKPT(double)

}  // namespace twinnet::train
