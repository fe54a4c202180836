// Writes deterministic offline stand-ins for datasets that normally need a
// download: MNIST-format IDX digit images and a Zipf-distributed text corpus.
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include "twinnet/data.hpp"

namespace {

int usage() {
  std::fprintf(stderr,
               "usage: twinnet-datagen digits --out DIR [--train N] [--test N] "
               "[--seed S]\n"
               "       twinnet-datagen corpus --out FILE [--bytes N] [--seed S]\n");
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return usage();
  std::string kind = argv[1];
  std::string out;
  long long train_n = 12000, test_n = 2500, bytes = 1200000, seed = 7;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    auto value = [&](const char* flag) -> const char* {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "twinnet-datagen: %s needs a value\n", flag);
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--out")
      out = value("--out");
    else if (arg == "--train")
      train_n = std::atoll(value("--train"));
    else if (arg == "--test")
      test_n = std::atoll(value("--test"));
    else if (arg == "--bytes")
      bytes = std::atoll(value("--bytes"));
    else if (arg == "--seed")
      seed = std::atoll(value("--seed"));
    else
      return usage();
  }
  if (out.empty()) return usage();
  try {
    if (kind == "digits") {
      std::filesystem::create_directories(out);
      twinnet::data::write_synthetic_digits_idx(out, train_n, test_n,
                                                static_cast<uint64_t>(seed));
      std::printf("wrote %lld train / %lld test digit images to %s\n", train_n,
                  test_n, out.c_str());
    } else if (kind == "corpus") {
      twinnet::data::write_synthetic_corpus(out, bytes,
                                            static_cast<uint64_t>(seed));
      std::printf("wrote corpus (>= %lld bytes) to %s\n", bytes, out.c_str());
    } else {
      return usage();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "twinnet-datagen: %s\n", e.what());
    return 1;
  }
  return 0;
}
