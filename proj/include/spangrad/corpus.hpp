#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spangrad/linalg.hpp"

namespace spangrad {

// Byte-level tokenizer: one token per byte, ids 0..255.
inline constexpr Index kByteVocabSize = 256;

std::vector<int> encode_bytes(std::string_view text);
std::string decode_bytes(std::span<const int> tokens);

struct Corpus {
  std::vector<int> tokens;
  Index vocab_size = kByteVocabSize;
};

// Reads a file as raw bytes. Fewer than seq_len + 1 tokens is EmptyCorpus.
Corpus ingest_corpus(const std::filesystem::path& path, Index seq_len);

// Deterministic English-like text (pseudo-words, sentence structure and a
// first-order word chain) of exactly `bytes` bytes.
std::string synthetic_text(std::size_t bytes, std::uint64_t seed);

enum class Split { train, validation };

std::string_view to_string(Split split);

struct SequenceDataset {
  std::vector<std::vector<int>> sequences;  // each holds seq_len + 1 tokens
  Split split = Split::train;
  Index seq_len = 0;
  double overlap_fraction = 0.5;
};

// Windows of seq_len + 1 tokens starting every seq_len / 2 tokens; a trailing
// partial window is dropped.
SequenceDataset build_windows(std::span<const int> tokens, Index seq_len,
                              Split split = Split::train);

struct DatasetSplit {
  SequenceDataset train;
  SequenceDataset validation;
};

// The first (1 - validation_fraction) of the stream feeds training windows,
// the rest validation windows.
DatasetSplit split_dataset(std::span<const int> tokens, Index seq_len,
                           double validation_fraction);

}  // namespace spangrad
