#pragma once

#include "twinnet/objective.hpp"

namespace twinnet::diag {

// Per-timestep twin penalty and forward NLL for one sequence, aligned to its
// tokens; word segments for whitespace-delimited corpora.
struct DiagnosticsRecord {
  int64_t sequence_id = 0;
  std::vector<int32_t> tokens;     // full ids
  std::vector<double> l2;          // L_t per step
  std::vector<double> nll;         // forward −log p(x_t | x_<t)
  std::vector<int32_t> word_of;    // word index per step (-1 for separators)
};

// Gradient-free evaluation of one sequence through both nets and the penalty.
// Requires a twin-mode model (a backward net to match against).
template <class T>
DiagnosticsRecord trace(const twin::TwinModel<T>& model,
                        const std::vector<int32_t>& tokens,
                        const std::vector<double>& cond = {});

struct SymbolCost {
  int32_t id = 0;
  std::string symbol;
  int64_t frequency = 0;
  int64_t occurrences = 0;  // within the analyzed records
  double mean_cost = 0.0;
};

struct CorrelationStats {
  double pearson = 0.0;
  double spearman = 0.0;
  bool degenerate = false;  // fewer than 3 points or zero variance
  int64_t points = 0;
};

struct FrequencyCostStats {
  std::vector<SymbolCost> per_symbol;
  CorrelationStats vs_log_frequency;  // cost against log(1 + frequency)
};

// Mean L_t per vocabulary symbol over its occurrences, correlated against
// log(1 + training frequency).
FrequencyCostStats symbol_cost_stats(const std::vector<DiagnosticsRecord>& records,
                                     const data::Vocab& vocab);

struct WordCost {
  std::string word;
  int64_t frequency = 0;  // occurrences across the records
  double mean_cost = 0.0; // cost averaged over characters, then occurrences
};

struct WordCostStats {
  std::vector<WordCost> per_word;
  CorrelationStats vs_log_frequency;
};

// Word-level analysis for character models: whitespace-delimited segments,
// cost of an occurrence averaged over the word's characters.
WordCostStats word_cost_stats(const std::vector<DiagnosticsRecord>& records,
                              const data::Vocab& vocab);

struct HistogramGroup {
  std::vector<int64_t> bins;
  double lo = 0.0, hi = 0.0;
  int64_t count = 0;
  double mean = 0.0, variance = 0.0;
};

struct RareFrequentHistogram {
  HistogramGroup rare, frequent;
  int64_t rare_symbols = 0, frequent_symbols = 0;
};

// Splits symbols at the given frequency rank (rarest first); bins the
// per-occurrence costs of each group.
RareFrequentHistogram rare_frequent_histogram(
    const std::vector<DiagnosticsRecord>& records, const data::Vocab& vocab,
    int64_t rare_rank_cutoff, int64_t bins = 30);

// Deterministic CSV emission; identical inputs give identical bytes.
void emit_records_csv(const std::vector<DiagnosticsRecord>& records,
                      const data::Vocab& vocab, const std::string& path);
void emit_symbol_stats_csv(const FrequencyCostStats& stats,
                           const std::string& path);
void emit_word_stats_csv(const WordCostStats& stats, const std::string& path);
void emit_histogram_csv(const RareFrequentHistogram& hist,
                        const std::string& path);

}  // namespace twinnet::diag
