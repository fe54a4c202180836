#include "twinnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "twinnet/rng.hpp"

namespace twinnet::data {

int32_t Vocab::add_symbol(const std::string& s) {
  auto it = to_id.find(s);
  if (it != to_id.end()) return it->second;
  int32_t id = vocab_size();
  symbols.push_back(s);
  frequency.push_back(0);
  to_id[s] = id;
  return id;
}

int32_t Vocab::id_of(const std::string& s) const {
  auto it = to_id.find(s);
  if (it == to_id.end())
    throw InvalidArgument(str_cat("vocab: unknown symbol '", s, "'"));
  return it->second;
}

const std::string& Vocab::symbol_of(int32_t id) const {
  if (id < kNumReserved || id >= vocab_size())
    throw InvalidArgument(str_cat("vocab: id ", id, " has no symbol"));
  return symbols[static_cast<size_t>(id - kNumReserved)];
}

bool SequenceBatch::uniform_length() const {
  for (int32_t l : lengths)
    if (l != max_len) return false;
  return true;
}

void check_batch_invariants(const SequenceBatch& b) {
  if (static_cast<int64_t>(b.tokens.size()) != b.batch * b.max_len ||
      static_cast<int64_t>(b.mask.size()) != b.batch * b.max_len ||
      static_cast<int64_t>(b.lengths.size()) != b.batch)
    throw InvalidArgument("batch: buffer sizes inconsistent");
  for (int64_t i = 0; i < b.batch; ++i) {
    if (b.lengths[i] < 0 || b.lengths[i] > b.max_len)
      throw InvalidArgument(str_cat("batch: length ", b.lengths[i],
                                    " outside [0,", b.max_len, "]"));
    for (int64_t t = 0; t < b.max_len; ++t) {
      bool active = t < b.lengths[i];
      if (b.active(i, t) != active)
        throw InvalidArgument(str_cat("batch: mask[", i, ",", t,
                                      "] disagrees with length"));
      if (!active && b.token(i, t) != kPadId)
        throw InvalidArgument(str_cat("batch: padded position [", i, ",", t,
                                      "] is not pad id"));
    }
  }
  if (b.cond_dim > 0 &&
      static_cast<int64_t>(b.cond.size()) != b.batch * b.cond_dim)
    throw InvalidArgument("batch: conditioning size inconsistent");
}

// ---- IDX ----

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError(str_cat("idx: truncated file '", path, "'"));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
         uint32_t(b[3]);
}

}  // namespace

MnistImages load_mnist_idx(const std::string& images_path,
                           const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw IoError(str_cat("idx: cannot open '", images_path, "'"));
  uint32_t magic = read_be32(fi, images_path);
  if (magic != 0x00000803u)
    throw IoError(str_cat("idx: '", images_path, "' has magic 0x", std::hex,
                          magic, " (expected 0x803 images)"));
  MnistImages out;
  out.count = read_be32(fi, images_path);
  out.rows = read_be32(fi, images_path);
  out.cols = read_be32(fi, images_path);
  out.pixels.resize(static_cast<size_t>(out.count * out.rows * out.cols));
  fi.read(reinterpret_cast<char*>(out.pixels.data()),
          static_cast<std::streamsize>(out.pixels.size()));
  if (!fi)
    throw IoError(str_cat("idx: '", images_path, "' truncated: expected ",
                          out.pixels.size(), " pixel bytes"));

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw IoError(str_cat("idx: cannot open '", labels_path, "'"));
  uint32_t lmagic = read_be32(fl, labels_path);
  if (lmagic != 0x00000801u)
    throw IoError(str_cat("idx: '", labels_path, "' has magic 0x", std::hex,
                          lmagic, " (expected 0x801 labels)"));
  uint32_t lcount = read_be32(fl, labels_path);
  if (static_cast<int64_t>(lcount) != out.count)
    throw IoError(str_cat("idx: image count ", out.count,
                          " does not match label count ", lcount));
  out.labels.resize(static_cast<size_t>(lcount));
  fl.read(reinterpret_cast<char*>(out.labels.data()),
          static_cast<std::streamsize>(out.labels.size()));
  if (!fl) throw IoError(str_cat("idx: '", labels_path, "' truncated"));
  return out;
}

BinarizeMode parse_binarize_mode(const std::string& s) {
  if (s == "threshold") return BinarizeMode::kThreshold;
  if (s == "stochastic") return BinarizeMode::kStochastic;
  throw InvalidArgument(str_cat("unknown binarize mode '", s, "'"));
}

TokenDataset binarize(const MnistImages& images, BinarizeMode mode,
                      uint64_t seed, bool attach_labels, int64_t offset,
                      int64_t count) {
  if (count < 0) count = images.count - offset;
  if (offset < 0 || offset + count > images.count)
    throw InvalidArgument(str_cat("binarize: slice [", offset, ",",
                                  offset + count, ") outside ", images.count,
                                  " images"));
  TokenDataset out;
  out.pixel_binary = true;
  const int32_t zero_id = out.vocab.add_symbol("0");
  const int32_t one_id = out.vocab.add_symbol("1");
  const int64_t dim = images.rows * images.cols;
  out.sequences.reserve(static_cast<size_t>(count));
  Rng rng(derive_seed(seed, "binarize"));
  for (int64_t i = 0; i < count; ++i) {
    const uint8_t* px = images.pixels.data() + (offset + i) * dim;
    std::vector<int32_t> seq(static_cast<size_t>(dim));
    for (int64_t j = 0; j < dim; ++j) {
      bool on;
      if (mode == BinarizeMode::kThreshold)
        on = px[j] / 255.0 > 0.5;
      else
        on = rng.bernoulli(px[j] / 255.0);
      seq[static_cast<size_t>(j)] = on ? one_id : zero_id;
      ++out.vocab.frequency[static_cast<size_t>(on ? 1 : 0)];
    }
    out.sequences.push_back(std::move(seq));
    if (attach_labels) {
      std::vector<double> onehot(10, 0.0);
      uint8_t label = images.labels[static_cast<size_t>(offset + i)];
      if (label > 9)
        throw InvalidArgument(str_cat("binarize: label ", int(label),
                                      " outside 0..9"));
      onehot[label] = 1.0;
      out.conditioning.push_back(std::move(onehot));
    }
  }
  if (attach_labels) out.cond_dim = 10;
  return out;
}

// ---- Text ----

TextCorpus text_from_string(const std::string& text, const std::string& origin) {
  if (text.empty()) throw IoError(str_cat("text: '", origin, "' is empty"));
  TextCorpus out;
  size_t i = 0;
  const auto fail = [&](size_t at) {
    throw IoError(str_cat("text: '", origin, "': invalid UTF-8 at byte ", at));
  };
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    size_t len;
    if (b0 < 0x80)
      len = 1;
    else if ((b0 >> 5) == 0x6)
      len = 2;
    else if ((b0 >> 4) == 0xE)
      len = 3;
    else if ((b0 >> 3) == 0x1E)
      len = 4;
    else {
      fail(i);
      return out;
    }
    if (i + len > text.size()) fail(i);
    for (size_t j = 1; j < len; ++j)
      if ((static_cast<unsigned char>(text[i + j]) >> 6) != 0x2) fail(i + j);
    std::string symbol = text.substr(i, len);
    out.ids.push_back(out.vocab.add_symbol(symbol));
    i += len;
  }
  return out;
}

TextCorpus load_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(str_cat("text: cannot open '", path, "'"));
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return text_from_string(text, path);
}

void tally_frequencies(Vocab& vocab, std::span<const int32_t> ids) {
  for (int32_t id : ids) {
    if (id < kNumReserved || id >= vocab.vocab_size())
      throw InvalidArgument(str_cat("tally: id ", id, " outside vocabulary"));
    ++vocab.frequency[static_cast<size_t>(id - kNumReserved)];
  }
}

TokenDataset chunk_text(const TextCorpus& corpus, int64_t begin, int64_t end,
                        int64_t chunk_len) {
  if (begin < 0 || end > static_cast<int64_t>(corpus.ids.size()) || begin >= end)
    throw InvalidArgument("chunk_text: bad range");
  if (chunk_len <= 0) throw InvalidArgument("chunk_text: chunk_len must be positive");
  TokenDataset out;
  out.vocab = corpus.vocab;
  for (int64_t at = begin; at < end; at += chunk_len) {
    int64_t stop = std::min(end, at + chunk_len);
    out.sequences.emplace_back(corpus.ids.begin() + at, corpus.ids.begin() + stop);
  }
  return out;
}

// ---- Delayed copy ----

TokenDataset make_delayed_copy(int64_t n_sequences, int64_t length,
                               int64_t marker_offset, int64_t alphabet,
                               uint64_t seed) {
  if (marker_offset <= 0 || marker_offset >= length)
    throw InvalidArgument(str_cat("delayed-copy: offset ", marker_offset,
                                  " must lie in (0,", length, ")"));
  if (alphabet < 2)
    throw InvalidArgument("delayed-copy: alphabet must have at least 2 symbols");
  TokenDataset out;
  std::vector<int32_t> ids;
  for (int64_t a = 0; a < alphabet; ++a)
    ids.push_back(out.vocab.add_symbol(std::string(1, static_cast<char>('a' + a))));
  const int32_t flag = ids.back();
  const int64_t fillers = alphabet - 1;
  out.sequences.reserve(static_cast<size_t>(n_sequences));
  for (int64_t i = 0; i < n_sequences; ++i) {
    Rng rng(derive_seed(seed, "delayed-copy", static_cast<uint64_t>(i)));
    const int64_t p = 1 + static_cast<int64_t>(rng.below(
                              static_cast<uint64_t>(length - marker_offset)));
    std::vector<int32_t> seq(static_cast<size_t>(length));
    for (int64_t t = 1; t <= length; ++t) {
      int32_t id;
      if (t == p || t == p + marker_offset)
        id = flag;
      else
        id = ids[static_cast<size_t>(rng.below(static_cast<uint64_t>(fillers)))];
      seq[static_cast<size_t>(t - 1)] = id;
      ++out.vocab.frequency[static_cast<size_t>(id - kNumReserved)];
    }
    // Generator postcondition: exactly two flags, exactly k apart.
    int64_t first = -1, count = 0;
    for (int64_t t = 0; t < length; ++t)
      if (seq[static_cast<size_t>(t)] == flag) {
        if (first < 0) first = t;
        ++count;
      }
    if (count != 2 || seq[static_cast<size_t>(first + marker_offset)] != flag)
      throw InvalidArgument("delayed-copy: generator postcondition violated");
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

double delayed_copy_optimal_nll(int64_t length, int64_t marker_offset,
                                int64_t alphabet) {
  return std::log(static_cast<double>(length - marker_offset)) +
         static_cast<double>(length - 2) * std::log(static_cast<double>(alphabet - 1));
}

// ---- Batching ----

std::vector<SequenceBatch> make_batches(const TokenDataset& dataset,
                                        int64_t batch_size, uint64_t seed,
                                        int64_t epoch) {
  if (batch_size <= 0) throw InvalidArgument("batch: size must be positive");
  std::vector<int64_t> order(static_cast<size_t>(dataset.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  Rng rng(derive_seed(seed, "shuffle", static_cast<uint64_t>(epoch)));
  rng.shuffle(order);

  std::vector<SequenceBatch> out;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(order.size() - at, static_cast<size_t>(batch_size));
    SequenceBatch b;
    b.batch = static_cast<int64_t>(n);
    int64_t max_len = 0;
    for (size_t i = 0; i < n; ++i)
      max_len = std::max(max_len, static_cast<int64_t>(
                                      dataset.sequences[order[at + i]].size()));
    b.max_len = max_len;
    b.tokens.assign(static_cast<size_t>(b.batch * max_len), kPadId);
    b.mask.assign(static_cast<size_t>(b.batch * max_len), 0);
    b.lengths.resize(n);
    if (dataset.cond_dim > 0) {
      b.cond_dim = dataset.cond_dim;
      b.cond.resize(n * static_cast<size_t>(dataset.cond_dim));
    }
    for (size_t i = 0; i < n; ++i) {
      const auto& seq = dataset.sequences[order[at + i]];
      b.lengths[i] = static_cast<int32_t>(seq.size());
      std::copy(seq.begin(), seq.end(),
                b.tokens.begin() + static_cast<int64_t>(i) * max_len);
      std::fill_n(b.mask.begin() + static_cast<int64_t>(i) * max_len, seq.size(),
                  uint8_t{1});
      if (dataset.cond_dim > 0)
        std::copy(dataset.conditioning[order[at + i]].begin(),
                  dataset.conditioning[order[at + i]].end(),
                  b.cond.begin() + static_cast<int64_t>(i) * dataset.cond_dim);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---- Dataset cache ----

void save_token_dataset(const TokenDataset& d, const std::string& path) {
  io::Container c;
  c.put_string("kind", "token-dataset");
  c.put_i64("pixel_binary", d.pixel_binary ? 1 : 0);
  c.put_i64("cond_dim", d.cond_dim);
  c.put_i64("count", d.size());
  std::vector<int64_t> offsets;
  std::vector<double> flat;
  offsets.reserve(d.sequences.size() + 1);
  offsets.push_back(0);
  for (const auto& s : d.sequences) {
    for (int32_t id : s) flat.push_back(id);
    offsets.push_back(static_cast<int64_t>(flat.size()));
  }
  std::vector<double> off_d(offsets.begin(), offsets.end());
  c.put_tensor_f64("tokens", Shape{static_cast<int64_t>(flat.size())}, flat);
  c.put_tensor_f64("offsets", Shape{static_cast<int64_t>(off_d.size())}, off_d);
  if (d.cond_dim > 0) {
    std::vector<double> cond;
    for (const auto& row : d.conditioning)
      cond.insert(cond.end(), row.begin(), row.end());
    c.put_tensor_f64("cond", Shape{d.size(), d.cond_dim}, cond);
  }
  c.put_string("vocab", encode_vocab(d.vocab));
  std::vector<double> freq(d.vocab.frequency.begin(), d.vocab.frequency.end());
  c.put_tensor_f64("frequency", Shape{static_cast<int64_t>(freq.size())}, freq);
  c.save(path);
}

std::string encode_vocab(const Vocab& v) {
  std::string out;
  for (const auto& s : v.symbols) {
    uint32_t n = static_cast<uint32_t>(s.size());
    out.append(reinterpret_cast<const char*>(&n), 4);
    out += s;
  }
  return out;
}

Vocab decode_vocab(const std::string& blob) {
  Vocab v;
  size_t at = 0;
  while (at < blob.size()) {
    if (at + 4 > blob.size()) throw IoError("vocab: truncated symbol table");
    uint32_t n;
    std::memcpy(&n, blob.data() + at, 4);
    at += 4;
    if (at + n > blob.size()) throw IoError("vocab: truncated symbol table");
    v.add_symbol(blob.substr(at, n));
    at += n;
  }
  return v;
}

TokenDataset load_token_dataset(const std::string& path) {
  io::Container c = io::Container::load(path);
  if (c.get_string("kind") != "token-dataset")
    throw IoError(str_cat("dataset: '", path, "' is not a token dataset"));
  TokenDataset d;
  d.pixel_binary = c.get_i64("pixel_binary") != 0;
  d.cond_dim = c.get_i64("cond_dim");
  d.vocab = decode_vocab(c.get_string("vocab"));
  auto freq = c.get_tensor<double>("frequency");
  for (size_t i = 0; i < d.vocab.frequency.size(); ++i)
    d.vocab.frequency[i] = static_cast<int64_t>((*freq.values)[i]);
  auto tokens = c.get_tensor<double>("tokens");
  auto offsets = c.get_tensor<double>("offsets");
  const int64_t count = c.get_i64("count");
  for (int64_t i = 0; i < count; ++i) {
    auto b = static_cast<int64_t>((*offsets.values)[static_cast<size_t>(i)]);
    auto e = static_cast<int64_t>((*offsets.values)[static_cast<size_t>(i + 1)]);
    std::vector<int32_t> seq;
    seq.reserve(static_cast<size_t>(e - b));
    for (int64_t j = b; j < e; ++j)
      seq.push_back(static_cast<int32_t>((*tokens.values)[static_cast<size_t>(j)]));
    d.sequences.push_back(std::move(seq));
  }
  if (d.cond_dim > 0) {
    auto cond = c.get_tensor<double>("cond");
    for (int64_t i = 0; i < count; ++i)
      d.conditioning.emplace_back(
          cond.values->begin() + i * d.cond_dim,
          cond.values->begin() + (i + 1) * d.cond_dim);
  }
  return d;
}

// ---- Fixtures ----

namespace {

void write_be32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

// Seven-segment layouts; enough structure for the generative task while
// keeping classes cleanly separable.
constexpr uint8_t kSegmentsByDigit[10] = {
    0b0111111,  // 0: A B C D E F
    0b0000110,  // 1: B C
    0b1011011,  // 2: A B G E D
    0b1001111,  // 3: A B G C D
    0b1100110,  // 4: F G B C
    0b1101101,  // 5: A F G C D
    0b1111101,  // 6: A F G E D C
    0b0000111,  // 7: A B C
    0b1111111,  // 8
    0b1101111,  // 9: A B C D F G
};

struct Seg {
  double r0, c0, r1, c1;
};

void render_digit(uint8_t* img, int digit, Rng& rng) {
  const double dy = rng.uniform(-2.0, 2.0), dx = rng.uniform(-2.0, 2.0);
  const double top = 5 + dy, bot = 22 + dy, left = 9 + dx, right = 18 + dx;
  const double mid = (top + bot) / 2;
  const Seg segs[7] = {
      {top, left, top, right},   // A
      {top, right, mid, right},  // B
      {mid, right, bot, right},  // C
      {bot, left, bot, right},   // D
      {mid, left, bot, left},    // E
      {top, left, mid, left},    // F
      {mid, left, mid, right},   // G
  };
  const uint8_t wanted = kSegmentsByDigit[digit];
  const double thick = rng.uniform(1.1, 1.8);
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) {
      double best = 1e9;
      for (int s = 0; s < 7; ++s) {
        if (!(wanted & (1u << s))) continue;
        const Seg& g = segs[s];
        const double vr = g.r1 - g.r0, vc = g.c1 - g.c0;
        const double len2 = vr * vr + vc * vc;
        double t = len2 == 0 ? 0 : ((r - g.r0) * vr + (c - g.c0) * vc) / len2;
        t = std::clamp(t, 0.0, 1.0);
        const double dr = r - (g.r0 + t * vr), dc = c - (g.c0 + t * vc);
        best = std::min(best, std::sqrt(dr * dr + dc * dc));
      }
      double v = 0.0;
      if (best < thick)
        v = 235.0 - 60.0 * (best / thick) + rng.uniform(-15.0, 15.0);
      else
        v = rng.uniform(0.0, 12.0);
      img[r * 28 + c] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
}

void write_digit_split(const std::string& img_path, const std::string& lbl_path,
                       int64_t n, uint64_t seed) {
  std::ofstream fi(img_path, std::ios::binary | std::ios::trunc);
  std::ofstream fl(lbl_path, std::ios::binary | std::ios::trunc);
  if (!fi || !fl)
    throw IoError(str_cat("fixtures: cannot write '", img_path, "'"));
  write_be32(fi, 0x00000803u);
  write_be32(fi, static_cast<uint32_t>(n));
  write_be32(fi, 28);
  write_be32(fi, 28);
  write_be32(fl, 0x00000801u);
  write_be32(fl, static_cast<uint32_t>(n));
  uint8_t img[28 * 28];
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "digit", static_cast<uint64_t>(i)));
    const int digit = static_cast<int>(rng.below(10));
    render_digit(img, digit, rng);
    fi.write(reinterpret_cast<const char*>(img), sizeof(img));
    const auto label = static_cast<uint8_t>(digit);
    fl.write(reinterpret_cast<const char*>(&label), 1);
  }
}

}  // namespace

void write_synthetic_digits_idx(const std::string& dir, int64_t n_train,
                                int64_t n_test, uint64_t seed) {
  write_digit_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                    n_train, derive_seed(seed, "train-split"));
  write_digit_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte",
                    n_test, derive_seed(seed, "test-split"));
}

void write_synthetic_corpus(const std::string& path, int64_t min_bytes,
                            uint64_t seed) {
  static const char* kFunctionWords[] = {
      "the", "of", "and", "a", "to", "in", "is", "was", "he", "for", "it",
      "with", "as", "his", "on", "be", "at", "by", "i", "this", "had", "not",
      "are", "but", "from", "or", "have", "an", "they", "which", "one", "you",
      "were", "her", "all", "she", "there", "would", "their", "we", "him",
      "been", "has", "when", "who", "will", "more", "no", "if", "out", "so",
      "said", "what", "up", "its", "about", "into", "than", "them", "can",
      "only", "other", "new", "some", "could", "time", "these", "two", "may",
      "then", "do", "first", "any", "my", "now", "such", "like", "our", "over",
      "man", "me", "even", "most", "made", "after", "also", "did", "many",
      "before", "must", "through", "back", "years", "where", "much", "your",
      "way", "well", "down", "should", "because", "each", "just", "those",
      "people", "how", "too", "little", "state", "good", "very", "make",
      "world", "still", "own", "see", "men", "work", "long", "get", "here",
      "between", "both", "life", "being"};
  static const char* kOnsets[] = {"b", "br", "c", "ch", "d", "dr", "f", "fl",
                                  "g", "gr", "h", "j", "k", "l", "m", "n",
                                  "p", "pl", "r", "s", "st", "t", "tr", "v", "w"};
  static const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou"};
  static const char* kCodas[] = {"", "n", "r", "s", "t", "l", "nd", "st", "m"};

  std::vector<std::string> lexicon;
  for (const char* w : kFunctionWords) lexicon.emplace_back(w);
  const size_t n_onsets = std::size(kOnsets), n_nuclei = std::size(kNuclei),
               n_codas = std::size(kCodas);
  Rng word_rng(derive_seed(seed, "lexicon"));
  while (lexicon.size() < 1500) {
    const int syllables = 2 + static_cast<int>(word_rng.below(3));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[word_rng.below(n_onsets)];
      w += kNuclei[word_rng.below(n_nuclei)];
      if (s + 1 == syllables) w += kCodas[word_rng.below(n_codas)];
    }
    if (std::find(lexicon.begin(), lexicon.end(), w) == lexicon.end())
      lexicon.push_back(w);
  }

  // Zipf-Mandelbrot weights over the rank order above.
  std::vector<double> cum(lexicon.size());
  double total = 0.0;
  for (size_t r = 0; r < lexicon.size(); ++r) {
    total += 1.0 / std::pow(static_cast<double>(r) + 2.7, 1.07);
    cum[r] = total;
  }
  for (double& c : cum) c /= total;

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("fixtures: cannot write '", path, "'"));
  Rng rng(derive_seed(seed, "corpus"));
  int64_t written = 0;
  int sentences_in_par = 0;
  while (written < min_bytes) {
    const int words = 5 + static_cast<int>(rng.below(9));
    std::string sentence;
    for (int w = 0; w < words; ++w) {
      const double u = rng.uniform01();
      const size_t r = static_cast<size_t>(
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      if (w) sentence += ' ';
      sentence += lexicon[std::min(r, lexicon.size() - 1)];
    }
    sentence += '.';
    if (++sentences_in_par >= 6) {
      sentence += '\n';
      sentences_in_par = 0;
    } else {
      sentence += ' ';
    }
    f << sentence;
    written += static_cast<int64_t>(sentence.size());
  }
}

}  // namespace twinnet::data
