#include "spangrad/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "spangrad/errors.hpp"

namespace spangrad {

std::vector<int> encode_bytes(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    out.push_back(static_cast<int>(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string decode_bytes(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= kByteVocabSize) {
      throw TokenOutOfRange("token " + std::to_string(t) +
                            " outside byte vocabulary");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

Corpus ingest_corpus(const std::filesystem::path& path, Index seq_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open corpus " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("failed reading corpus " + path.string());
  }
  if (static_cast<Index>(bytes.size()) < seq_len + 1) {
    throw EmptyCorpus("corpus " + path.string() + " has " +
                      std::to_string(bytes.size()) +
                      " bytes, need at least " + std::to_string(seq_len + 1));
  }
  Corpus corpus;
  corpus.tokens = encode_bytes(bytes);
  return corpus;
}

namespace {

const char* const kOnsets[] = {"b", "c", "d", "f", "g", "h", "l", "m", "n",
                               "p", "r", "s", "t", "v", "w", "st", "th",
                               "ch", "sh", "pr", "tr", "gr", "br", "cl"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ea", "ou", "ai",
                               "e", "a", "o", "i"};
const char* const kCodas[] = {"", "", "", "n", "r", "s", "t", "l", "nd",
                              "st", "ng", "m", "ck", "rd"};
const char* const kFunctionWords[] = {
    "the", "of", "and", "to", "a", "in", "is", "was", "that", "for",
    "it", "with", "as", "on", "by", "at", "from", "his", "her", "they"};

std::string make_word(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> syllables(1, 3);
  std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1);
  std::uniform_int_distribution<std::size_t> vowel(0, std::size(kVowels) - 1);
  std::uniform_int_distribution<std::size_t> coda(0, std::size(kCodas) - 1);
  std::string word;
  const int n = syllables(rng);
  for (int s = 0; s < n; ++s) {
    word += kOnsets[onset(rng)];
    word += kVowels[vowel(rng)];
    if (s + 1 == n) word += kCodas[coda(rng)];
  }
  return word;
}

}  // namespace

std::string synthetic_text(std::size_t bytes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);

  constexpr std::size_t kContentWords = 1500;
  std::vector<std::string> lexicon(std::begin(kFunctionWords),
                                   std::end(kFunctionWords));
  while (lexicon.size() < kContentWords) lexicon.push_back(make_word(rng));

  // Zipf-like unigram weights.
  std::vector<double> weights(lexicon.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = 1.0 / std::pow(static_cast<double>(i + 1), 1.05);
  }
  std::discrete_distribution<std::size_t> unigram(weights.begin(),
                                                  weights.end());

  // Each word prefers a handful of successors, giving bigram structure.
  constexpr std::size_t kSuccessors = 6;
  std::vector<std::array<std::size_t, kSuccessors>> successors(lexicon.size());
  for (auto& s : successors) {
    for (auto& w : s) w = unigram(rng);
  }

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> sentence_len(4, 16);
  std::uniform_int_distribution<std::size_t> pick_successor(0, kSuccessors - 1);

  std::string text;
  text.reserve(bytes + 64);
  int sentences_in_paragraph = 0;
  while (text.size() < bytes) {
    const int words = sentence_len(rng);
    std::size_t prev = unigram(rng);
    for (int w = 0; w < words; ++w) {
      std::size_t idx = (w > 0 && coin(rng) < 0.6)
                            ? successors[prev][pick_successor(rng)]
                            : unigram(rng);
      std::string word = lexicon[idx];
      if (w == 0) word[0] = static_cast<char>(std::toupper(word[0]));
      text += word;
      if (w + 1 < words) {
        text += (coin(rng) < 0.08) ? ", " : " ";
      }
      prev = idx;
    }
    text += (coin(rng) < 0.1) ? "? " : ". ";
    if (++sentences_in_paragraph >= 5 && coin(rng) < 0.3) {
      text += "\n\n";
      sentences_in_paragraph = 0;
    }
  }
  text.resize(bytes);
  return text;
}

std::string_view to_string(Split split) {
  return split == Split::train ? "train" : "validation";
}

SequenceDataset build_windows(std::span<const int> tokens, Index seq_len,
                              Split split) {
  if (seq_len < 2) {
    throw InvalidConfig("seq_len must be at least 2");
  }
  for (int t : tokens) {
    if (t < 0 || t >= kByteVocabSize) {
      throw TokenOutOfRange("token " + std::to_string(t) +
                            " outside byte vocabulary");
    }
  }
  SequenceDataset ds;
  ds.split = split;
  ds.seq_len = seq_len;
  const Index stride = seq_len / 2;
  ds.overlap_fraction =
      static_cast<double>(seq_len - stride) / static_cast<double>(seq_len);
  const Index n = static_cast<Index>(tokens.size());
  for (Index start = 0; start + seq_len + 1 <= n; start += stride) {
    ds.sequences.emplace_back(tokens.begin() + start,
                              tokens.begin() + start + seq_len + 1);
  }
  return ds;
}

DatasetSplit split_dataset(std::span<const int> tokens, Index seq_len,
                           double validation_fraction) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfig("validation_fraction must lie in (0, 1)");
  }
  const auto n = tokens.size();
  const auto cut = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * (1.0 - validation_fraction)));
  DatasetSplit out;
  out.train = build_windows(tokens.first(cut), seq_len, Split::train);
  out.validation =
      build_windows(tokens.subspan(cut), seq_len, Split::validation);
  if (out.train.sequences.empty() || out.validation.sequences.empty()) {
    throw EmptyCorpus("corpus too short for a train/validation split at seq_len " +
                      std::to_string(seq_len));
  }
  return out;
}

}  // namespace spangrad
