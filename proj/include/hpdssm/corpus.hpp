#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/error.hpp"

namespace hpdssm {

inline constexpr char kCorpusMagic[4] = {'T', 'O', 'K', 'S'};
inline constexpr std::uint32_t kCorpusVersion = 1;

using Token = std::uint32_t;

/// Token IDs for perplexity evaluation; every ID is below `vocab_size`.
struct TokenCorpus {
  std::uint32_t vocab_size = 0;
  std::vector<Token> tokens;

  void validate() const {
    if (vocab_size < 1) throw FormatError(FormatErrc::validation, "", "vocab_size must be >= 1");
    if (tokens.size() < 2) {
      throw FormatError(FormatErrc::validation, "", "corpus needs at least 2 tokens");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] >= vocab_size) {
        throw FormatError(FormatErrc::validation, "token " + std::to_string(i),
                          "id " + std::to_string(tokens[i]) + " >= vocab_size " +
                              std::to_string(vocab_size));
      }
    }
  }
};

inline std::vector<std::uint8_t> encode_corpus(const TokenCorpus& corpus) {
  corpus.validate();
  io::ByteWriter w;
  w.put_bytes(kCorpusMagic, 4);
  w.put(kCorpusVersion);
  w.put(corpus.vocab_size);
  w.put(static_cast<std::uint64_t>(corpus.tokens.size()));
  for (Token t : corpus.tokens) w.put(t);
  return w.bytes();
}

inline TokenCorpus decode_corpus(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "corpus");
  const std::string magic = r.get_string(4);
  if (magic != std::string(kCorpusMagic, 4)) {
    throw FormatError(FormatErrc::bad_magic, "", "expected TOKS, found \"" + magic + "\"");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCorpusVersion) {
    throw FormatError(FormatErrc::version_mismatch, "",
                      "file version " + std::to_string(version) + ", supported 1");
  }
  TokenCorpus corpus;
  corpus.vocab_size = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (count > (r.size() - r.position()) / 4) {
    throw FormatError(FormatErrc::truncated, "tokens",
                      "header declares " + std::to_string(count) + " tokens");
  }
  corpus.tokens.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) corpus.tokens[i] = r.get<std::uint32_t>();
  corpus.validate();
  return corpus;
}

inline void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& path) {
  io::write_file(path, encode_corpus(corpus));
}

inline TokenCorpus load_corpus(const std::filesystem::path& path) {
  return decode_corpus(io::read_file(path));
}

}  // namespace hpdssm
