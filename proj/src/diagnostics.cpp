#include "twinnet/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace twinnet::diag {

namespace {

bool is_separator(const std::string& symbol) {
  return symbol == " " || symbol == "\n" || symbol == "\t" || symbol == "\r";
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

CorrelationStats correlate(const std::vector<double>& x,
                           const std::vector<double>& y) {
  CorrelationStats out;
  out.points = static_cast<int64_t>(x.size());
  if (x.size() < 3) {
    out.degenerate = true;
    return out;
  }
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    out.degenerate = true;
    return out;
  }
  out.pearson = sxy / std::sqrt(sxx * syy);

  // Spearman: Pearson over average ranks (ties averaged).
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(x), ry = ranks(y);
  double mrx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double mry = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double rxx = 0, ryy = 0, rxy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    rxx += (rx[i] - mrx) * (rx[i] - mrx);
    ryy += (ry[i] - mry) * (ry[i] - mry);
    rxy += (rx[i] - mrx) * (ry[i] - mry);
  }
  if (rxx == 0.0 || ryy == 0.0) {
    out.degenerate = true;
    return out;
  }
  out.spearman = rxy / std::sqrt(rxx * ryy);
  return out;
}

}  // namespace

template <class T>
DiagnosticsRecord trace(const twin::TwinModel<T>& model,
                        const std::vector<int32_t>& tokens,
                        const std::vector<double>& cond) {
  data::SequenceBatch b;
  b.batch = 1;
  b.max_len = static_cast<int64_t>(tokens.size());
  b.tokens = tokens;
  b.mask.assign(tokens.size(), 1);
  b.lengths = {static_cast<int32_t>(tokens.size())};
  if (!cond.empty()) {
    b.cond = cond;
    b.cond_dim = static_cast<int64_t>(cond.size());
  }
  // No tape anywhere: parameters stay constants, nothing records.
  auto f = rnn::run_forward(model.fwd, model.fwd_head, b, {});
  auto bk = rnn::run_backward(model.bwd, model.bwd_head, b, {});
  auto [pen, step_pen] = twin::twin_penalty(f.trace.top, bk.trace.top, model.g,
                                            b, false);
  (void)pen;

  DiagnosticsRecord rec;
  rec.tokens = tokens;
  rec.l2 = std::move(step_pen);
  rec.nll.reserve(tokens.size());
  for (const auto& row : f.step_nll) rec.nll.push_back(static_cast<double>(row[0]));

  rec.word_of.assign(tokens.size(), -1);
  int32_t word = 0;
  bool in_word = false;
  for (size_t t = 0; t < tokens.size(); ++t) {
    const std::string& sym = model.vocab.symbol_of(tokens[t]);
    if (is_separator(sym)) {
      if (in_word) ++word;
      in_word = false;
      rec.word_of[t] = -1;
    } else {
      rec.word_of[t] = word;
      in_word = true;
    }
  }
  return rec;
}

template DiagnosticsRecord trace(const twin::TwinModel<float>&,
                                 const std::vector<int32_t>&,
                                 const std::vector<double>&);
template DiagnosticsRecord trace(const twin::TwinModel<double>&,
                                 const std::vector<int32_t>&,
                                 const std::vector<double>&);

FrequencyCostStats symbol_cost_stats(
    const std::vector<DiagnosticsRecord>& records, const data::Vocab& vocab) {
  if (records.empty())
    throw InvalidArgument("symbol_cost_stats: no records");
  std::vector<double> sum(static_cast<size_t>(vocab.num_symbols()), 0.0);
  std::vector<int64_t> count(static_cast<size_t>(vocab.num_symbols()), 0);
  for (const auto& r : records) {
    for (size_t t = 0; t < r.tokens.size(); ++t) {
      const int32_t s = r.tokens[t] - data::kNumReserved;
      sum[static_cast<size_t>(s)] += r.l2[t];
      ++count[static_cast<size_t>(s)];
    }
  }
  FrequencyCostStats out;
  std::vector<double> costs, logfreq;
  for (int32_t s = 0; s < vocab.num_symbols(); ++s) {
    if (count[static_cast<size_t>(s)] == 0) continue;
    SymbolCost sc;
    sc.id = s + data::kNumReserved;
    sc.symbol = vocab.symbols[static_cast<size_t>(s)];
    sc.frequency = vocab.frequency[static_cast<size_t>(s)];
    sc.occurrences = count[static_cast<size_t>(s)];
    sc.mean_cost = sum[static_cast<size_t>(s)] /
                   static_cast<double>(count[static_cast<size_t>(s)]);
    costs.push_back(sc.mean_cost);
    logfreq.push_back(std::log1p(static_cast<double>(sc.frequency)));
    out.per_symbol.push_back(std::move(sc));
  }
  out.vs_log_frequency = correlate(costs, logfreq);
  return out;
}

WordCostStats word_cost_stats(const std::vector<DiagnosticsRecord>& records,
                              const data::Vocab& vocab) {
  if (records.empty()) throw InvalidArgument("word_cost_stats: no records");
  struct Acc {
    double sum = 0;
    int64_t n = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : records) {
    std::string word;
    double cost_sum = 0;
    int64_t chars = 0;
    auto flush = [&]() {
      if (chars == 0) return;
      Acc& a = acc[word];
      a.sum += cost_sum / static_cast<double>(chars);
      ++a.n;
      word.clear();
      cost_sum = 0;
      chars = 0;
    };
    for (size_t t = 0; t < r.tokens.size(); ++t) {
      if (r.word_of[t] < 0) {
        flush();
        continue;
      }
      word += vocab.symbol_of(r.tokens[t]);
      cost_sum += r.l2[t];
      ++chars;
    }
    flush();
  }
  WordCostStats out;
  std::vector<double> costs, logfreq;
  for (const auto& [w, a] : acc) {
    WordCost wc;
    wc.word = w;
    wc.frequency = a.n;
    wc.mean_cost = a.sum / static_cast<double>(a.n);
    costs.push_back(wc.mean_cost);
    logfreq.push_back(std::log1p(static_cast<double>(a.n)));
    out.per_word.push_back(std::move(wc));
  }
  out.vs_log_frequency = correlate(costs, logfreq);
  return out;
}

RareFrequentHistogram rare_frequent_histogram(
    const std::vector<DiagnosticsRecord>& records, const data::Vocab& vocab,
    int64_t rare_rank_cutoff, int64_t bins) {
  if (rare_rank_cutoff >= vocab.num_symbols())
    throw InvalidArgument("histogram: cutoff must be below the vocabulary size");
  // Rank symbols rarest-first; ties broken by id for determinism.
  std::vector<int32_t> order(static_cast<size_t>(vocab.num_symbols()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    auto fa = vocab.frequency[static_cast<size_t>(a)];
    auto fb = vocab.frequency[static_cast<size_t>(b)];
    return fa != fb ? fa < fb : a < b;
  });
  std::vector<uint8_t> is_rare(static_cast<size_t>(vocab.num_symbols()), 0);
  for (int64_t i = 0; i < rare_rank_cutoff; ++i)
    is_rare[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

  std::vector<double> rare_costs, freq_costs;
  for (const auto& r : records)
    for (size_t t = 0; t < r.tokens.size(); ++t) {
      const int32_t s = r.tokens[t] - data::kNumReserved;
      (is_rare[static_cast<size_t>(s)] ? rare_costs : freq_costs)
          .push_back(r.l2[t]);
    }

  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto* v : {&rare_costs, &freq_costs})
    for (double c : *v) {
      if (first || c < lo) lo = first ? c : std::min(lo, c);
      if (first || c > hi) hi = first ? c : std::max(hi, c);
      first = false;
    }
  if (hi <= lo) hi = lo + 1.0;

  auto fill = [&](const std::vector<double>& costs) {
    HistogramGroup g;
    g.lo = lo;
    g.hi = hi;
    g.bins.assign(static_cast<size_t>(bins), 0);
    g.count = static_cast<int64_t>(costs.size());
    double sum = 0, sq = 0;
    for (double c : costs) {
      auto b = static_cast<int64_t>((c - lo) / (hi - lo) *
                                    static_cast<double>(bins));
      b = std::clamp<int64_t>(b, 0, bins - 1);
      ++g.bins[static_cast<size_t>(b)];
      sum += c;
      sq += c * c;
    }
    if (g.count > 0) {
      g.mean = sum / static_cast<double>(g.count);
      g.variance = sq / static_cast<double>(g.count) - g.mean * g.mean;
    }
    return g;
  };
  RareFrequentHistogram out;
  out.rare = fill(rare_costs);
  out.frequent = fill(freq_costs);
  out.rare_symbols = rare_rank_cutoff;
  out.frequent_symbols = vocab.num_symbols() - rare_rank_cutoff;
  return out;
}

void emit_records_csv(const std::vector<DiagnosticsRecord>& records,
                      const data::Vocab& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("diagnostics: cannot write '", path, "'"));
  f << "sequence,t,token_id,symbol,word,l2,nll\n";
  for (const auto& r : records) {
    for (size_t t = 0; t < r.tokens.size(); ++t) {
      std::string sym = vocab.symbol_of(r.tokens[t]);
      if (sym == "\n") sym = "\\n";
      if (sym == ",") sym = "\\,";
      f << r.sequence_id << "," << t << "," << r.tokens[t] << "," << sym << ","
        << r.word_of[t] << "," << format_double(r.l2[t]) << ","
        << format_double(r.nll[t]) << "\n";
    }
  }
}

void emit_symbol_stats_csv(const FrequencyCostStats& stats,
                           const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("diagnostics: cannot write '", path, "'"));
  f << "symbol,frequency,occurrences,mean_l2\n";
  for (const auto& s : stats.per_symbol) {
    std::string sym = s.symbol;
    if (sym == "\n") sym = "\\n";
    if (sym == ",") sym = "\\,";
    f << sym << "," << s.frequency << "," << s.occurrences << ","
      << format_double(s.mean_cost) << "\n";
  }
}

void emit_word_stats_csv(const WordCostStats& stats, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("diagnostics: cannot write '", path, "'"));
  f << "word,frequency,mean_l2\n";
  for (const auto& w : stats.per_word)
    f << w.word << "," << w.frequency << "," << format_double(w.mean_cost)
      << "\n";
}

void emit_histogram_csv(const RareFrequentHistogram& hist,
                        const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("diagnostics: cannot write '", path, "'"));
  f << "group,bin,lo,hi,count\n";
  auto emit = [&](const char* name, const HistogramGroup& g) {
    const double width = (g.hi - g.lo) / static_cast<double>(g.bins.size());
    for (size_t b = 0; b < g.bins.size(); ++b)
      f << name << "," << b << ","
        << format_double(g.lo + width * static_cast<double>(b)) << ","
        << format_double(g.lo + width * static_cast<double>(b + 1)) << ","
        << g.bins[b] << "\n";
  };
  emit("rare", hist.rare);
  emit("frequent", hist.frequent);
}

}  // namespace twinnet::diag
