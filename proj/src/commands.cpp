#include "twinnet/commands.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "twinnet/diagnostics.hpp"
#include "twinnet/grad_check.hpp"
#include "twinnet/rng.hpp"
#include "twinnet/trainer.hpp"

namespace twinnet::cli {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "checkpoint",
      "data.task", "data.path", "data.images", "data.labels", "data.binarize",
      "data.train-count", "data.valid-count", "data.test-count",
      "data.seq-length", "data.valid-chars",
      "data.length", "data.offset", "data.alphabet", "data.count",
      "data.eval-count", "data.seed", "data.conditional",
      "model.cell", "model.layers", "model.hidden", "model.embed-dim",
      "model.init", "model.g-mode", "model.share-embeddings",
      "model.cond-proj-dim",
      "objective.alpha", "objective.mode", "objective.noise-sigma",
      "objective.normalize-by-length",
      "train.optimizer", "train.lr", "train.beta1", "train.beta2", "train.eps",
      "train.rho", "train.adadelta-eps", "train.clip-norm", "train.batch-size",
      "train.epochs", "train.decay-epochs", "train.decay-factor", "train.seed",
      "train.patience", "train.precision", "train.dropout", "train.max-steps",
      "train.resume",
      "sample.count", "sample.length", "sample.temperature", "sample.seed",
      "sample.label",
      "sweep.alphas",
      "eval.split",
      "diagnostics.rare-cutoff", "diagnostics.max-sequences",
      "diagnostics.split",
      "gradcheck.corrupt",
  };
  return keys;
}

std::string resolve_data_path(const std::string& path, const char* key) {
  if (fs::exists(path)) return path;
  if (const char* root = std::getenv("TWINNET_DATA_DIR")) {
    fs::path candidate = fs::path(root) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  throw InvalidArgument(str_cat("config: ", key, " '", path,
                                "' not found (also tried $TWINNET_DATA_DIR)"));
}

struct DataBundle {
  std::optional<train::DataSource> train_src;
  data::TokenDataset valid;
  data::TokenDataset test;
  bool pixel = false;
  int64_t pixel_dim = 0;
};

DataBundle resolve_data(const Config& cfg) {
  DataBundle out;
  const std::string task = cfg.require_string("data.task");
  const uint64_t dseed =
      static_cast<uint64_t>(cfg.get_int("data.seed", cfg.get_int("train.seed", 1)));
  if (task == "delayed-copy") {
    const int64_t length = cfg.get_int("data.length", 30);
    const int64_t offset = cfg.get_int("data.offset", 15);
    const int64_t alphabet = cfg.get_int("data.alphabet", 4);
    const int64_t count = cfg.get_int("data.count", 5000);
    const int64_t valid_count = cfg.get_int("data.valid-count", 1000);
    out.train_src.emplace(
        data::make_delayed_copy(count, length, offset, alphabet, dseed));
    out.valid = data::make_delayed_copy(valid_count, length, offset, alphabet,
                                        derive_seed(dseed, "valid-split"));
    out.test = data::make_delayed_copy(valid_count, length, offset, alphabet,
                                       derive_seed(dseed, "test-split"));
  } else if (task == "mnist" || task == "mnist-cond") {
    const std::string dir = resolve_data_path(cfg.require_string("data.path"),
                                              "data.path");
    const std::string images =
        cfg.get_string("data.images", "train-images-idx3-ubyte");
    const std::string labels =
        cfg.get_string("data.labels", "train-labels-idx1-ubyte");
    auto raw = data::load_mnist_idx(dir + "/" + images, dir + "/" + labels);
    const bool conditional = task == "mnist-cond";
    const auto mode =
        data::parse_binarize_mode(cfg.get_string("data.binarize", "threshold"));
    const int64_t train_count =
        std::min(cfg.get_int("data.train-count", raw.count), raw.count);
    const int64_t valid_count =
        std::min(cfg.get_int("data.valid-count", 0), raw.count - train_count);
    out.pixel = true;
    out.pixel_dim = raw.rows * raw.cols;
    if (valid_count > 0)
      out.valid = data::binarize(raw, data::BinarizeMode::kThreshold,
                                 derive_seed(dseed, "valid-binarize"),
                                 conditional, train_count, valid_count);
    auto test_raw = data::load_mnist_idx(
        dir + "/" + cfg.get_string("data.images-test", "t10k-images-idx3-ubyte"),
        dir + "/" + cfg.get_string("data.labels-test", "t10k-labels-idx1-ubyte"));
    const int64_t test_count =
        std::min(cfg.get_int("data.test-count", test_raw.count), test_raw.count);
    out.test = data::binarize(test_raw, data::BinarizeMode::kThreshold,
                              derive_seed(dseed, "test-binarize"), conditional,
                              0, test_count);
    out.train_src.emplace(std::move(raw), mode, conditional, 0, train_count,
                          dseed);
  } else if (task == "text") {
    const std::string path = resolve_data_path(cfg.require_string("data.path"),
                                               "data.path");
    data::TextCorpus corpus = data::load_text(path);
    const int64_t n = static_cast<int64_t>(corpus.ids.size());
    int64_t valid_chars = cfg.get_int("data.valid-chars", n / 10);
    valid_chars = std::min(valid_chars, n / 2);
    const int64_t chunk = cfg.get_int("data.seq-length", 128);
    data::tally_frequencies(corpus.vocab,
                            std::span<const int32_t>(corpus.ids.data(),
                                                     static_cast<size_t>(n - valid_chars)));
    out.train_src.emplace(data::chunk_text(corpus, 0, n - valid_chars, chunk));
    out.valid = data::chunk_text(corpus, n - valid_chars, n, chunk);
    out.test = out.valid;
  } else {
    throw InvalidArgument(str_cat("config: unknown data.task '", task, "'"));
  }
  return out;
}

twin::ModelSpec model_spec_from(const Config& cfg, const data::TokenDataset& ds) {
  twin::ModelSpec spec;
  spec.stack.cell = rnn::parse_cell_kind(cfg.get_string("model.cell", "lstm"));
  spec.stack.layers = cfg.get_int("model.layers", 1);
  spec.stack.hidden = cfg.get_int("model.hidden", 64);
  spec.stack.embed_dim = cfg.get_int("model.embed-dim", 16);
  spec.stack.vocab_size = ds.vocab.vocab_size();
  spec.stack.cond_dim = ds.cond_dim;
  spec.stack.cond_proj_dim = cfg.get_int("model.cond-proj-dim", 0);
  spec.stack.init = rnn::parse_init_scheme(cfg.get_string("model.init", "uniform"));
  spec.head = ds.pixel_binary ? rnn::HeadKind::kBernoulli : rnn::HeadKind::kSoftmax;
  spec.classes = ds.pixel_binary ? 1 : ds.vocab.num_symbols();
  spec.g_mode = twin::parse_g_mode(cfg.get_string("model.g-mode", "learned"));
  spec.share_embeddings = cfg.get_bool("model.share-embeddings", false);
  return spec;
}

train::TrainConfig train_config_from(const Config& cfg) {
  train::TrainConfig tc;
  tc.objective.alpha = cfg.get_double("objective.alpha", 1.5);
  tc.objective.mode =
      twin::parse_backward_mode(cfg.get_string("objective.mode", "twin"));
  tc.objective.noise_sigma = cfg.get_double("objective.noise-sigma", 1.0);
  tc.objective.normalize_penalty_by_length =
      cfg.get_bool("objective.normalize-by-length", false);
  tc.objective.dropout = cfg.get_double("train.dropout", 0.0);
  tc.optimizer = train::parse_optimizer(cfg.get_string("train.optimizer", "adam"));
  tc.lr = cfg.get_double("train.lr", 0.001);
  tc.beta1 = cfg.get_double("train.beta1", 0.9);
  tc.beta2 = cfg.get_double("train.beta2", 0.999);
  tc.adam_eps = cfg.get_double("train.eps", 1e-8);
  tc.rho = cfg.get_double("train.rho", 0.95);
  tc.adadelta_eps = cfg.get_double("train.adadelta-eps", 1e-6);
  tc.clip_norm = cfg.get_double("train.clip-norm", 5.0);
  tc.batch_size = cfg.get_int("train.batch-size", 20);
  tc.epochs = cfg.get_int("train.epochs", 0);
  tc.decay_epochs = cfg.get_int_list("train.decay-epochs", {5, 10, 15});
  tc.decay_factor = cfg.get_double("train.decay-factor", 0.5);
  tc.seed = static_cast<uint64_t>(cfg.get_int("train.seed", 1));
  tc.patience = cfg.get_int("train.patience", 0);
  tc.max_steps = cfg.get_int("train.max-steps", 0);
  tc.resume_checkpoint = cfg.get_string("train.resume", "");
  return tc;
}

std::string precision_of(const Config& cfg) {
  const std::string p = cfg.get_string("train.precision", "f64");
  if (p != "f32" && p != "f64")
    throw InvalidArgument(str_cat("config: train.precision must be f32 or f64, got '",
                                  p, "'"));
  return p;
}

template <class T>
int train_impl(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  DataBundle bundle = resolve_data(cfg);
  const data::TokenDataset& probe = bundle.train_src->any();
  twin::ModelSpec spec = model_spec_from(cfg, probe);
  train::TrainConfig tc = train_config_from(cfg);
  tc.out_dir = out_dir;
  auto model = twin::build_twin_model<T>(spec, probe.vocab, tc.seed);
  auto result = train::train(model, *bundle.train_src,
                             bundle.valid.size() > 0 ? &bundle.valid : nullptr, tc);
  char buf[256];
  for (const auto& row : result.rows) {
    std::snprintf(buf, sizeof(buf),
                  "epoch %lld  nll_f %.4f  nll_b %.4f  penalty %.4f  valid %.4f\n",
                  static_cast<long long>(row.epoch), row.nll_f, row.nll_b,
                  row.penalty, row.valid_nll);
    os << buf;
  }
  if (result.aborted_nan) {
    os << "aborted: non-finite loss; last epoch checkpoint retained\n";
    return kExitCheckFailed;
  }
  if (!std::isnan(result.best_valid)) {
    std::snprintf(buf, sizeof(buf), "best valid %.6f at epoch %lld\n",
                  result.best_valid, static_cast<long long>(result.best_epoch));
    os << buf;
  }
  os << "checkpoint: " << out_dir << "/checkpoint.twnc\n";
  return kExitOk;
}

template <class T>
twin::TwinModel<T> load_best_model(const std::string& path) {
  auto snap = train::load_checkpoint<T>(path);
  return std::move(snap.best_model);
}

template <class T>
int eval_impl(const Config& cfg, std::ostream& os) {
  const std::string ckpt = cfg.require_string("checkpoint");
  auto model = load_best_model<T>(ckpt);
  DataBundle bundle = resolve_data(cfg);
  const std::string split = cfg.get_string("eval.split", "test");
  const data::TokenDataset* ds;
  if (split == "test")
    ds = &bundle.test;
  else if (split == "valid")
    ds = &bundle.valid;
  else if (split == "train")
    ds = &bundle.train_src->any();
  else
    throw InvalidArgument(str_cat("config: unknown eval.split '", split, "'"));
  if (ds->size() == 0)
    throw InvalidArgument(str_cat("eval: split '", split, "' is empty"));
  const int64_t bs = cfg.get_int("train.batch-size", 20);
  const double nll = train::evaluate(model, *ds, bs);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "nll_nats = %.12g\n", nll);
  os << buf;
  if (bundle.pixel) {
    std::snprintf(buf, sizeof(buf), "bits_per_dim = %.12g\n",
                  train::nats_to_bits_per_dim(nll, bundle.pixel_dim));
    os << buf;
  }
  return kExitOk;
}

template <class T>
int sample_impl(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  const std::string ckpt = cfg.require_string("checkpoint");
  auto model = load_best_model<T>(ckpt);
  const int64_t count = cfg.get_int("sample.count", 8);
  int64_t length = cfg.get_int("sample.length", 0);
  const double temperature = cfg.get_double("sample.temperature", 1.0);
  const auto seed = static_cast<uint64_t>(cfg.get_int("sample.seed", 1));
  const bool pixel = model.spec.head == rnn::HeadKind::kBernoulli;
  if (length <= 0) length = pixel ? 784 : 256;
  std::vector<double> cond;
  if (model.spec.stack.cond_dim > 0) {
    const int64_t label = cfg.get_int("sample.label", 0);
    if (label < 0 || label >= model.spec.stack.cond_dim)
      throw InvalidArgument(str_cat("config: sample.label ", label,
                                    " outside conditioning range"));
    cond.assign(static_cast<size_t>(model.spec.stack.cond_dim), 0.0);
    cond[static_cast<size_t>(label)] = 1.0;
  }
  auto seqs = rnn::sample(model.fwd, model.fwd_head, count, length, seed,
                          temperature, cond);
  fs::create_directories(out_dir);
  std::string path;
  if (pixel) {
    // One PGM grid, samples tiled 28×28 left to right.
    path = out_dir + "/samples.pgm";
    const int64_t side = 28;
    const int64_t cols = std::min<int64_t>(count, 8);
    const int64_t rows = (count + cols - 1) / cols;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P5\n" << cols * side << " " << rows * side << "\n255\n";
    std::vector<uint8_t> canvas(static_cast<size_t>(cols * side * rows * side), 0);
    for (int64_t s = 0; s < count; ++s) {
      const int64_t gr = s / cols, gc = s % cols;
      for (int64_t p = 0; p < std::min<int64_t>(length, side * side); ++p) {
        const int64_t r = gr * side + p / side, c = gc * side + p % side;
        canvas[static_cast<size_t>(r * cols * side + c)] =
            seqs[static_cast<size_t>(s)][static_cast<size_t>(p)] ==
                    data::kNumReserved + 1
                ? 255
                : 0;
      }
    }
    f.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  } else {
    path = out_dir + "/samples.txt";
    std::ofstream f(path, std::ios::trunc);
    for (const auto& seq : seqs) {
      for (int32_t id : seq) f << model.vocab.symbol_of(id);
      f << "\n";
    }
  }
  os << "samples: " << path << "\n";
  return kExitOk;
}

template <class T>
int diagnose_impl(const Config& cfg, const std::string& out_dir,
                  std::ostream& os) {
  const std::string ckpt = cfg.require_string("checkpoint");
  auto model = load_best_model<T>(ckpt);
  DataBundle bundle = resolve_data(cfg);
  const std::string split = cfg.get_string("diagnostics.split", "valid");
  const data::TokenDataset* ds =
      split == "train" ? &bundle.train_src->any()
                       : (split == "test" ? &bundle.test : &bundle.valid);
  if (ds->size() == 0) throw InvalidArgument("diagnose: empty split");
  const int64_t max_seqs =
      std::min<int64_t>(cfg.get_int("diagnostics.max-sequences", 50), ds->size());
  std::vector<diag::DiagnosticsRecord> records;
  for (int64_t i = 0; i < max_seqs; ++i) {
    auto rec = diag::trace(model, ds->sequences[static_cast<size_t>(i)],
                           ds->cond_dim > 0
                               ? ds->conditioning[static_cast<size_t>(i)]
                               : std::vector<double>{});
    rec.sequence_id = i;
    records.push_back(std::move(rec));
  }
  fs::create_directories(out_dir);
  // Frequencies from the model's training vocabulary.
  diag::emit_records_csv(records, model.vocab, out_dir + "/diagnostics.csv");
  auto sym = diag::symbol_cost_stats(records, model.vocab);
  diag::emit_symbol_stats_csv(sym, out_dir + "/symbol_stats.csv");
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "symbol cost vs log frequency: pearson %.4f spearman %.4f%s\n",
                sym.vs_log_frequency.pearson, sym.vs_log_frequency.spearman,
                sym.vs_log_frequency.degenerate ? " (degenerate)" : "");
  os << buf;
  if (!ds->pixel_binary) {
    auto words = diag::word_cost_stats(records, model.vocab);
    diag::emit_word_stats_csv(words, out_dir + "/word_stats.csv");
    std::snprintf(buf, sizeof(buf),
                  "word cost vs log frequency: pearson %.4f spearman %.4f%s\n",
                  words.vs_log_frequency.pearson, words.vs_log_frequency.spearman,
                  words.vs_log_frequency.degenerate ? " (degenerate)" : "");
    os << buf;
  }
  const int64_t cutoff =
      std::min<int64_t>(cfg.get_int("diagnostics.rare-cutoff", 1500),
                        model.vocab.num_symbols() - 1);
  auto hist = diag::rare_frequent_histogram(records, model.vocab,
                                            std::max<int64_t>(cutoff, 0));
  diag::emit_histogram_csv(hist, out_dir + "/rare_frequent_histogram.csv");
  std::snprintf(buf, sizeof(buf),
                "rare mean %.4f var %.4f | frequent mean %.4f var %.4f\n",
                hist.rare.mean, hist.rare.variance, hist.frequent.mean,
                hist.frequent.variance);
  os << buf;
  os << "csv: " << out_dir << "\n";
  return kExitOk;
}

// Tiny twin model driving the finite-difference harness: 1-layer LSTM,
// hidden 8, K=4, T=6, B=2, 64-bit, padded row to exercise masks.
struct GradcheckFixture {
  twin::TwinModel<double> model;
  data::SequenceBatch batch;
};

GradcheckFixture make_gradcheck_fixture(twin::GMode g_mode, uint64_t seed) {
  data::Vocab vocab;
  for (char c : {'a', 'b', 'c', 'd'}) vocab.add_symbol(std::string(1, c));
  for (auto& f : vocab.frequency) f = 1;
  twin::ModelSpec spec;
  spec.stack.cell = rnn::CellKind::kLstm;
  spec.stack.layers = 1;
  spec.stack.hidden = 8;
  spec.stack.embed_dim = 5;
  spec.stack.vocab_size = vocab.vocab_size();
  spec.head = rnn::HeadKind::kSoftmax;
  spec.classes = 4;
  spec.g_mode = g_mode;
  GradcheckFixture fx{twin::build_twin_model<double>(spec, vocab, seed), {}};
  fx.batch.batch = 2;
  fx.batch.max_len = 6;
  fx.batch.lengths = {6, 4};
  fx.batch.tokens.assign(12, data::kPadId);
  fx.batch.mask.assign(12, 0);
  Rng rng(derive_seed(seed, "gradcheck-batch"));
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t t = 0; t < fx.batch.lengths[static_cast<size_t>(i)]; ++t) {
      fx.batch.tokens[static_cast<size_t>(i * 6 + t)] =
          data::kNumReserved + static_cast<int32_t>(rng.below(4));
      fx.batch.mask[static_cast<size_t>(i * 6 + t)] = 1;
    }
  return fx;
}

double gradcheck_mode(twin::BackwardMode mode, twin::GMode g_mode,
                      uint64_t seed, ad::GradCheckReport* report_out) {
  GradcheckFixture fx = make_gradcheck_fixture(g_mode, seed);
  twin::ObjectiveConfig oc;
  oc.mode = mode;
  oc.alpha = 1.5;
  const uint64_t step_seed = derive_seed(seed, "gradcheck-step");

  std::vector<ad::CheckedParam> params;
  for (auto& p : fx.model.all_params()) params.push_back({p.name, *p.tensor});

  // In twin mode the stop-gradient defines the derivative as holding the
  // backward states fixed; the difference oracle must difference that same
  // function, so the penalty targets are frozen at the base parameters.
  std::vector<Tensor<double>> frozen_hb;
  if (mode == twin::BackwardMode::kTwin) {
    auto b = rnn::run_backward(fx.model.bwd, fx.model.bwd_head, fx.batch, {});
    for (auto& t : b.trace.top) frozen_hb.push_back(clone(t));
  }
  auto value_fn = [&]() {
    if (mode != twin::BackwardMode::kTwin) {
      Tape<double> tape;
      return twin::compute_objective(tape, fx.model, fx.batch, oc, step_seed)
          .total;
    }
    auto f = rnn::run_forward(fx.model.fwd, fx.model.fwd_head, fx.batch, {});
    auto b = rnn::run_backward(fx.model.bwd, fx.model.bwd_head, fx.batch, {});
    auto [pen, tr] =
        twin::twin_penalty(f.trace.top, frozen_hb, fx.model.g, fx.batch, false);
    (void)tr;
    return (f.nll_sum.scalar() + b.nll_sum.scalar() + oc.alpha * pen.scalar()) /
           static_cast<double>(fx.batch.batch);
  };
  auto grad_fn = [&]() {
    Tape<double> tape;
    twin::TwinModel<double> watched;
    auto loss = twin::compute_objective(tape, fx.model, fx.batch, oc, step_seed,
                                        false, &watched);
    tape.backward(loss.total_node);
    std::vector<std::vector<double>> grads;
    for (auto& p : watched.all_params()) {
      auto g = tape.grad_of(*p.tensor);
      if (g.empty())
        grads.emplace_back(p.tensor->values->size(), 0.0);
      else
        grads.emplace_back(g.begin(), g.end());
    }
    return grads;
  };

  ad::GradCheckOptions opts;
  auto report = ad::grad_check(value_fn, grad_fn, params, opts);
  if (report_out) *report_out = report;
  return report.max_rel_err;
}

int gradcheck_impl(const Config& cfg, std::ostream& os) {
  const std::string corrupt = cfg.get_string("gradcheck.corrupt", "none");
  if (corrupt == "tanh")
    ad::set_corrupt_tanh_backward(2.0);
  else if (corrupt != "none")
    throw InvalidArgument(str_cat("config: unknown gradcheck.corrupt '",
                                  corrupt, "'"));
  const auto seed = static_cast<uint64_t>(cfg.get_int("train.seed", 1));
  const twin::GMode g_mode =
      twin::parse_g_mode(cfg.get_string("model.g-mode", "learned"));

  bool ok = true;
  char buf[160];
  double worst = 0.0;
  for (auto mode : {twin::BackwardMode::kTwin, twin::BackwardMode::kGaussianNoise,
                    twin::BackwardMode::kZerosAr,
                    twin::BackwardMode::kStabilizingNorm,
                    twin::BackwardMode::kBaseline}) {
    ad::GradCheckReport report;
    double err = gradcheck_mode(mode, g_mode, seed, &report);
    worst = std::max(worst, err);
    const bool pass = err < 1e-4;
    ok = ok && pass;
    std::snprintf(buf, sizeof(buf), "%-17s max rel err %.3e (%s at %s[%zu])\n",
                  twin::backward_mode_name(mode).c_str(), err,
                  pass ? "ok" : "FAIL", report.worst_param.c_str(),
                  report.worst_coord);
    os << buf;
  }

  GradcheckFixture fx = make_gradcheck_fixture(g_mode, seed);
  twin::ObjectiveConfig oc;
  oc.alpha = 1.5;
  auto part = twin::gradient_partition_check(fx.model, fx.batch, oc,
                                             derive_seed(seed, "partition"));
  std::snprintf(buf, sizeof(buf),
                "(a) d(alpha*penalty)/d theta_b == 0: %s (max |g| %.3e)\n",
                part.penalty_grad_zero_on_backward ? "pass" : "FAIL",
                part.max_abs_a);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "(b) d(backward nll)/d theta_f == 0: %s (max |g| %.3e)\n",
                part.backward_nll_grad_zero_on_forward ? "pass" : "FAIL",
                part.max_abs_b);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "(c) d(alpha*penalty)/d theta_f != 0: %s (max |g| %.3e)\n",
                part.penalty_grad_nonzero_on_forward ? "pass" : "FAIL",
                part.max_abs_c);
  os << buf;
  ok = ok && part.passed();

  std::snprintf(buf, sizeof(buf), "worst relative error: %.3e\n", worst);
  os << buf;
  ad::set_corrupt_tanh_backward(0.0);
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

RunSpec parse_args(int argc, const char* const* argv) {
  if (argc < 2)
    throw InvalidArgument(
        "usage: twinnet <train|eval|sample|sweep|gradcheck|diagnose> "
        "[--config PATH] [--section.key=value ...] [--out DIR]");
  RunSpec spec;
  spec.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    auto take_value = [&](const std::string& flag) {
      if (i + 1 >= argc)
        throw InvalidArgument(str_cat("flag ", flag, " needs a value"));
      return std::string(argv[++i]);
    };
    if (arg == "--config") {
      spec.config_path = take_value(arg);
    } else if (arg.rfind("--config=", 0) == 0) {
      spec.config_path = arg.substr(9);
    } else if (arg == "--out") {
      spec.out_dir = take_value(arg);
    } else if (arg.rfind("--out=", 0) == 0) {
      spec.out_dir = arg.substr(6);
    } else if (arg.rfind("--", 0) == 0) {
      const size_t eq = arg.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(str_cat("override ", arg, " must be --key=value"));
      spec.overrides.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    } else {
      throw InvalidArgument(str_cat("unexpected argument '", arg, "'"));
    }
  }
  return spec;
}

Config load_config(const RunSpec& spec) {
  Config cfg;
  if (!spec.config_path.empty()) cfg = Config::parse_file(spec.config_path);
  for (const auto& [k, v] : spec.overrides) {
    if (!known_keys().count(k))
      throw InvalidArgument(str_cat("config: unknown key '", k, "'"));
    cfg.set(k, v);
  }
  cfg.validate_keys(known_keys());
  return cfg;
}

int cmd_train(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  if (out_dir.empty()) throw InvalidArgument("train: --out DIR is required");
  fs::create_directories(out_dir);
  cfg.write_snapshot(out_dir + "/config.ini");
  return precision_of(cfg) == "f32" ? train_impl<float>(cfg, out_dir, os)
                                    : train_impl<double>(cfg, out_dir, os);
}

int cmd_eval(const Config& cfg, const std::string&, std::ostream& os) {
  const std::string p = train::checkpoint_precision(cfg.require_string("checkpoint"));
  return p == "f32" ? eval_impl<float>(cfg, os) : eval_impl<double>(cfg, os);
}

int cmd_sample(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  if (out_dir.empty()) throw InvalidArgument("sample: --out DIR is required");
  const std::string p = train::checkpoint_precision(cfg.require_string("checkpoint"));
  return p == "f32" ? sample_impl<float>(cfg, out_dir, os)
                    : sample_impl<double>(cfg, out_dir, os);
}

int cmd_sweep(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  if (out_dir.empty()) throw InvalidArgument("sweep: --out DIR is required");
  std::vector<double> alphas = cfg.get_double_list(
      "sweep.alphas", {2.0, 1.5, 1.0, 0.5, 0.25, 0.1});
  if (alphas.empty()) throw InvalidArgument("sweep: alpha list is empty");
  fs::create_directories(out_dir);
  struct Row {
    double alpha;
    double valid;
  };
  std::vector<Row> rows;
  for (double a : alphas) {
    Config sub = cfg;
    char av[32];
    std::snprintf(av, sizeof(av), "%g", a);
    sub.set("objective.alpha", av);
    const std::string sub_dir = str_cat(out_dir, "/alpha-", av);
    fs::create_directories(sub_dir);
    sub.write_snapshot(sub_dir + "/config.ini");
    os << "== alpha " << av << "\n";
    int rc = precision_of(sub) == "f32" ? train_impl<float>(sub, sub_dir, os)
                                        : train_impl<double>(sub, sub_dir, os);
    if (rc != kExitOk) return rc;
    // Read the best valid from the freshly written checkpoint.
    io::Container c = io::Container::load(sub_dir + "/checkpoint.twnc");
    rows.push_back({a, c.get_f64("state.best_valid")});
  }
  size_t best = 0;
  for (size_t i = 1; i < rows.size(); ++i)
    if (rows[i].valid < rows[best].valid) best = i;
  std::ofstream f(out_dir + "/sweep.csv", std::ios::trunc);
  f << "alpha,valid_nll,best\n";
  char buf[128];
  for (size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%g,%.17g,%d\n", rows[i].alpha,
                  rows[i].valid, i == best ? 1 : 0);
    f << buf;
    os << buf;
  }
  os << "best alpha: " << rows[best].alpha << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Config& cfg, const std::string&, std::ostream& os) {
  return gradcheck_impl(cfg, os);
}

int cmd_diagnose(const Config& cfg, const std::string& out_dir, std::ostream& os) {
  if (out_dir.empty()) throw InvalidArgument("diagnose: --out DIR is required");
  const std::string p = train::checkpoint_precision(cfg.require_string("checkpoint"));
  return p == "f32" ? diagnose_impl<float>(cfg, out_dir, os)
                    : diagnose_impl<double>(cfg, out_dir, os);
}

int run(const RunSpec& spec, std::ostream& os, std::ostream& err) {
  try {
    Config cfg = load_config(spec);
    if (spec.command == "train") return cmd_train(cfg, spec.out_dir, os);
    if (spec.command == "eval") return cmd_eval(cfg, spec.out_dir, os);
    if (spec.command == "sample") return cmd_sample(cfg, spec.out_dir, os);
    if (spec.command == "sweep") return cmd_sweep(cfg, spec.out_dir, os);
    if (spec.command == "gradcheck") return cmd_gradcheck(cfg, spec.out_dir, os);
    if (spec.command == "diagnose") return cmd_diagnose(cfg, spec.out_dir, os);
    err << "twinnet: unknown command '" << spec.command << "'\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "twinnet: numeric failure: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "twinnet: " << e.what() << "\n";
    return kExitUsage;
  }
}

int main_entry(int argc, const char* const* argv) {
  RunSpec spec;
  try {
    spec = parse_args(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "twinnet: " << e.what() << "\n";
    return kExitUsage;
  }
  return run(spec, std::cout, std::cerr);
}

}  // namespace twinnet::cli
