#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "twinnet/diagnostics.hpp"
#include "twinnet/rng.hpp"

using namespace twinnet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("twinnet-diag-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

data::Vocab char_vocab(const std::string& symbols) {
  data::Vocab v;
  for (char c : symbols) v.add_symbol(std::string(1, c));
  v.frequency.assign(v.symbols.size(), 1);
  return v;
}

twin::TwinModel<double> char_model(const data::Vocab& vocab, uint64_t seed) {
  twin::ModelSpec spec;
  spec.stack.hidden = 5;
  spec.stack.embed_dim = 4;
  spec.stack.vocab_size = vocab.vocab_size();
  spec.classes = vocab.num_symbols();
  spec.g_mode = twin::GMode::kIdentity;
  return twin::build_twin_model<double>(spec, vocab, seed);
}

// Records with one token per vocab symbol and a fixed cost per symbol.
std::vector<diag::DiagnosticsRecord> constant_cost_records(
    const data::Vocab& vocab, const std::vector<double>& costs,
    int repeats = 3) {
  std::vector<diag::DiagnosticsRecord> records;
  for (int r = 0; r < repeats; ++r) {
    diag::DiagnosticsRecord rec;
    rec.sequence_id = r;
    for (int32_t s = 0; s < vocab.num_symbols(); ++s) {
      rec.tokens.push_back(s + data::kNumReserved);
      rec.l2.push_back(costs[static_cast<size_t>(s)]);
      rec.nll.push_back(0.1);
      rec.word_of.push_back(s);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

TEST_CASE("trace with all-zero parameters yields an all-zero penalty trace") {
  auto vocab = char_vocab("ab");
  auto model = char_model(vocab, 3);
  for (auto& p : model.all_params())
    std::fill(p.tensor->values->begin(), p.tensor->values->end(), 0.0);
  std::vector<int32_t> tokens{3, 4, 3, 4};
  auto rec = diag::trace(model, tokens);
  REQUIRE(rec.l2.size() == tokens.size());
  for (double v : rec.l2) CHECK(v == 0.0);
}

TEST_CASE("trace length and cross-module penalty consistency") {
  auto vocab = char_vocab("abc");
  auto model = char_model(vocab, 5);
  std::vector<int32_t> tokens{3, 5, 4, 4, 3};
  auto rec = diag::trace(model, tokens);
  CHECK(rec.l2.size() == tokens.size());
  CHECK(rec.nll.size() == tokens.size());

  data::SequenceBatch b;
  b.batch = 1;
  b.max_len = static_cast<int64_t>(tokens.size());
  b.tokens = tokens;
  b.mask.assign(tokens.size(), 1);
  b.lengths = {static_cast<int32_t>(tokens.size())};
  Tape<double> tape;
  twin::ObjectiveConfig oc;
  auto loss = twin::compute_objective(tape, model, b, oc, 1);
  REQUIRE(loss.step_penalty.size() == rec.l2.size());
  for (size_t t = 0; t < rec.l2.size(); ++t)
    CHECK(std::abs(rec.l2[t] - loss.step_penalty[t]) < 1e-10);
}

TEST_CASE("trace never mutates model parameters") {
  auto vocab = char_vocab("ab");
  auto model = char_model(vocab, 7);
  std::vector<std::vector<double>> before;
  for (auto& p : model.all_params())
    before.emplace_back(p.tensor->values->begin(), p.tensor->values->end());
  (void)diag::trace(model, {3, 4, 4});
  size_t i = 0;
  for (auto& p : model.all_params()) {
    CHECK(std::vector<double>(p.tensor->values->begin(),
                              p.tensor->values->end()) == before[i]);
    ++i;
  }
}

TEST_CASE("trace requires a twin model") {
  auto vocab = char_vocab("ab");
  auto model = char_model(vocab, 7);
  // Break the twin pairing: g maps to the wrong width.
  model.g.identity = false;
  model.g.w = zeros<double>({5, 7});
  model.g.b = zeros<double>({7});
  CHECK_THROWS_AS(diag::trace(model, {3, 4}), InvalidArgument);
}

TEST_CASE("symbol stats: constant costs are degenerate") {
  auto vocab = char_vocab("abcd");
  auto records = constant_cost_records(vocab, {0.5, 0.5, 0.5, 0.5});
  auto stats = diag::symbol_cost_stats(records, vocab);
  CHECK(stats.vs_log_frequency.degenerate);
}

TEST_CASE("symbol stats: cost = −log frequency gives Spearman −1") {
  auto vocab = char_vocab("abcde");
  vocab.frequency = {1, 4, 16, 64, 256};
  std::vector<double> costs;
  for (int64_t f : vocab.frequency)
    costs.push_back(-std::log(static_cast<double>(f)));
  auto records = constant_cost_records(vocab, costs);
  auto stats = diag::symbol_cost_stats(records, vocab);
  CHECK_FALSE(stats.vs_log_frequency.degenerate);
  CHECK(stats.vs_log_frequency.spearman == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(stats.vs_log_frequency.pearson < -0.9);
}

TEST_CASE("symbol stats are permutation invariant over records") {
  auto vocab = char_vocab("abc");
  vocab.frequency = {2, 8, 32};
  Rng rng(11);
  std::vector<diag::DiagnosticsRecord> records;
  for (int r = 0; r < 5; ++r) {
    diag::DiagnosticsRecord rec;
    for (int t = 0; t < 6; ++t) {
      rec.tokens.push_back(data::kNumReserved +
                           static_cast<int32_t>(rng.below(3)));
      rec.l2.push_back(rng.uniform(0, 2));
      rec.nll.push_back(rng.uniform(0, 1));
      rec.word_of.push_back(t);
    }
    records.push_back(std::move(rec));
  }
  auto s1 = diag::symbol_cost_stats(records, vocab);
  std::reverse(records.begin(), records.end());
  auto s2 = diag::symbol_cost_stats(records, vocab);
  CHECK(s1.vs_log_frequency.spearman ==
        doctest::Approx(s2.vs_log_frequency.spearman).epsilon(1e-14));
  REQUIRE(s1.per_symbol.size() == s2.per_symbol.size());
  for (size_t i = 0; i < s1.per_symbol.size(); ++i)
    CHECK(s1.per_symbol[i].mean_cost ==
          doctest::Approx(s2.per_symbol[i].mean_cost).epsilon(1e-14));
}

TEST_CASE("word stats average over characters of each word") {
  // Two sequences over the words "aa" and "b", space-separated.
  data::Vocab vocab = char_vocab("ab ");
  const int32_t a = vocab.id_of("a"), b = vocab.id_of("b"), sp = vocab.id_of(" ");
  diag::DiagnosticsRecord rec;
  rec.tokens = {a, a, sp, b};
  rec.l2 = {1.0, 3.0, 9.0, 5.0};
  rec.nll = {0, 0, 0, 0};
  rec.word_of = {0, 0, -1, 1};
  auto stats = diag::word_cost_stats({rec}, vocab);
  REQUIRE(stats.per_word.size() == 2);
  // Sorted alphabetically: "aa" then "b".
  CHECK(stats.per_word[0].word == "aa");
  CHECK(stats.per_word[0].mean_cost == doctest::Approx(2.0));  // (1+3)/2
  CHECK(stats.per_word[1].word == "b");
  CHECK(stats.per_word[1].mean_cost == doctest::Approx(5.0));
}

TEST_CASE("rare/frequent histogram behaviour") {
  auto vocab = char_vocab("abcd");
  vocab.frequency = {1, 2, 50, 100};  // a, b rare; c, d frequent

  SUBCASE("cutoff zero leaves the rare group empty") {
    auto records = constant_cost_records(vocab, {1, 1, 1, 1});
    auto hist = diag::rare_frequent_histogram(records, vocab, 0);
    CHECK(hist.rare.count == 0);
    CHECK(hist.rare_symbols == 0);
    CHECK(hist.frequent_symbols == 4);
  }
  SUBCASE("equal costs give equal means and zero variances") {
    auto records = constant_cost_records(vocab, {1, 1, 1, 1});
    auto hist = diag::rare_frequent_histogram(records, vocab, 2);
    CHECK(hist.rare.mean == doctest::Approx(hist.frequent.mean));
    CHECK(hist.rare.variance == doctest::Approx(0.0));
    CHECK(hist.frequent.variance == doctest::Approx(0.0));
  }
  SUBCASE("monotone costs: rare group mean exceeds frequent group mean") {
    auto records = constant_cost_records(vocab, {4.0, 3.0, 0.5, 0.2});
    auto hist = diag::rare_frequent_histogram(records, vocab, 2);
    CHECK(hist.rare.mean > hist.frequent.mean);
    // Group sizes sum to the number of analyzed tokens.
    CHECK(hist.rare.count + hist.frequent.count == 3 * 4);
  }
  SUBCASE("cutoff must stay below the vocabulary size") {
    auto records = constant_cost_records(vocab, {1, 1, 1, 1});
    CHECK_THROWS_AS(diag::rare_frequent_histogram(records, vocab, 4),
                    InvalidArgument);
  }
}

TEST_CASE("csv emission: empty records, determinism, parse round trip") {
  auto vocab = char_vocab("ab");
  std::string dir = temp_dir("csv");

  diag::emit_records_csv({}, vocab, dir + "/empty.csv");
  {
    std::ifstream f(dir + "/empty.csv");
    std::string content((std::istreambuf_iterator<char>(f)), {});
    CHECK(content == "sequence,t,token_id,symbol,word,l2,nll\n");
  }

  diag::DiagnosticsRecord rec;
  rec.sequence_id = 0;
  rec.tokens = {3, 4};
  rec.l2 = {0.123456789012, 1.0 / 3.0};
  rec.nll = {2.5, 0.25};
  rec.word_of = {0, 0};
  diag::emit_records_csv({rec}, vocab, dir + "/r1.csv");
  diag::emit_records_csv({rec}, vocab, dir + "/r2.csv");
  std::ifstream f1(dir + "/r1.csv"), f2(dir + "/r2.csv");
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  // Parse back: values round-trip to 1e-9.
  std::istringstream in(s1);
  std::string line;
  std::getline(in, line);  // header
  size_t row = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 7);
    CHECK(std::abs(std::stod(cells[5]) - rec.l2[row]) < 1e-9);
    CHECK(std::abs(std::stod(cells[6]) - rec.nll[row]) < 1e-9);
    ++row;
  }
  CHECK(row == 2);
}
