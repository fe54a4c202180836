#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twinnet/common.hpp"
#include "twinnet/container.hpp"

namespace twinnet::data {

// Reserved token ids shared by every dataset.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kSosId = 1;
inline constexpr int32_t kEosId = 2;
inline constexpr int32_t kNumReserved = 3;

struct Vocab {
  std::vector<std::string> symbols;       // symbol for id kNumReserved + i
  std::map<std::string, int32_t> to_id;   // symbol → full id
  std::vector<int64_t> frequency;         // per symbol, training-split counts

  int32_t num_symbols() const { return static_cast<int32_t>(symbols.size()); }
  int32_t vocab_size() const { return num_symbols() + kNumReserved; }
  int32_t add_symbol(const std::string& s);
  int32_t id_of(const std::string& s) const;
  const std::string& symbol_of(int32_t id) const;
};

struct TokenDataset {
  std::vector<std::vector<int32_t>> sequences;    // full ids
  std::vector<std::vector<double>> conditioning;  // empty or one row per sequence
  int64_t cond_dim = 0;
  Vocab vocab;
  bool pixel_binary = false;  // binary pixels → Bernoulli output head

  int64_t size() const { return static_cast<int64_t>(sequences.size()); }
};

// Padded batch with validity mask. mask[b,t] == 1 ⟺ t < lengths[b]; padded
// positions hold kPadId.
struct SequenceBatch {
  int64_t batch = 0;
  int64_t max_len = 0;
  std::vector<int32_t> tokens;   // batch × max_len
  std::vector<uint8_t> mask;     // batch × max_len
  std::vector<int32_t> lengths;  // batch
  std::vector<double> cond;      // batch × cond_dim or empty
  int64_t cond_dim = 0;

  int32_t token(int64_t b, int64_t t) const { return tokens[b * max_len + t]; }
  bool active(int64_t b, int64_t t) const { return mask[b * max_len + t] != 0; }
  bool uniform_length() const;
};

// Throws if the mask/length/pad invariants do not hold.
void check_batch_invariants(const SequenceBatch& b);

// ---- MNIST-format IDX ----

struct MnistImages {
  int64_t count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> pixels;  // count × rows × cols
  std::vector<uint8_t> labels;  // count
};

MnistImages load_mnist_idx(const std::string& images_path,
                           const std::string& labels_path);

enum class BinarizeMode { kThreshold, kStochastic };
BinarizeMode parse_binarize_mode(const std::string& s);

// Row-major flattening to length rows*cols; threshold: pixel/255 > 0.5;
// stochastic: Bernoulli(pixel/255), seeded. attach_labels adds a one-hot(10)
// conditioning row per image. offset/count select a contiguous slice.
TokenDataset binarize(const MnistImages& images, BinarizeMode mode,
                      uint64_t seed, bool attach_labels = false,
                      int64_t offset = 0, int64_t count = -1);

// ---- Character-level text ----

struct TextCorpus {
  std::vector<int32_t> ids;  // full ids, one per character
  Vocab vocab;               // frequencies zero until tallied
};

// UTF-8 decoded, one symbol per code point; newline is a regular symbol.
// Undecodable bytes raise IoError naming the byte offset.
TextCorpus load_text(const std::string& path);
TextCorpus text_from_string(const std::string& text, const std::string& origin);

// Adds occurrence counts over a token span (training split only, per spec).
void tally_frequencies(Vocab& vocab, std::span<const int32_t> ids);

// Cuts a contiguous id range into fixed-length chunks (last short chunk kept).
TokenDataset chunk_text(const TextCorpus& corpus, int64_t begin, int64_t end,
                        int64_t chunk_len);

// ---- Synthetic delayed-copy task ----

// Each sequence carries a flag symbol at position p (uniform over 1..T−k)
// that reappears exactly at p + k; every other position is an i.i.d. uniform
// filler over the remaining alphabet−1 symbols.
TokenDataset make_delayed_copy(int64_t n_sequences, int64_t length,
                               int64_t marker_offset, int64_t alphabet,
                               uint64_t seed);

// Entropy of the generating distribution: ln(T−k) + (T−2)·ln(K−1) nats.
double delayed_copy_optimal_nll(int64_t length, int64_t marker_offset,
                                int64_t alphabet);

// ---- Batching ----

// Seeded reshuffle per (seed, epoch); final partial batch kept.
std::vector<SequenceBatch> make_batches(const TokenDataset& dataset,
                                        int64_t batch_size, uint64_t seed,
                                        int64_t epoch);

// ---- Dataset cache (container format) ----

void save_token_dataset(const TokenDataset& d, const std::string& path);
TokenDataset load_token_dataset(const std::string& path);

// Length-prefixed symbol list (symbols may contain any byte, e.g. newline).
std::string encode_vocab(const Vocab& v);
Vocab decode_vocab(const std::string& blob);

// ---- Deterministic fixtures (no-network stand-ins) ----

// Writes train/t10k images+labels in IDX format under dir: procedural digit
// glyphs with seeded jitter and noise.
void write_synthetic_digits_idx(const std::string& dir, int64_t n_train,
                                int64_t n_test, uint64_t seed);

// Writes ≥ min_bytes of Zipf-distributed lowercase word text.
void write_synthetic_corpus(const std::string& path, int64_t min_bytes,
                            uint64_t seed);

}  // namespace twinnet::data
