#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dart/corpus.hpp"

namespace dart {

// Whitespace/punctuation word tokenizer with four reserved ids. Token ids
// are assigned to sorted unique report tokens, so a vocabulary is a pure
// function of the corpus text.
struct Vocabulary {
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;
    static constexpr std::size_t kUnk = 3;

    std::map<std::string, std::size_t> token_to_id;
    std::vector<std::string> id_to_token;  // index 0..3 are the reserved markers

    std::size_t size() const { return id_to_token.size(); }
    // UNK for out-of-vocabulary tokens.
    std::size_t id_of(const std::string& token) const;
    const std::string& token_of(std::size_t id) const;
};

// Lowercases and splits on whitespace; every non-alphanumeric character
// becomes its own token.
std::vector<std::string> split_tokens(const std::string& text);

Vocabulary build_vocab(const std::vector<CorpusRecord>& records);

// BOS + token ids + EOS, truncated so the total length is at most
// max_len. Throws DataError on an empty report.
std::vector<std::size_t> tokenize(const std::string& report, const Vocabulary& vocab,
                                  std::size_t max_len);

// Inverse of tokenize for in-vocabulary text: joins tokens with spaces,
// attaching punctuation directly to the preceding token; reserved markers
// are dropped.
std::string detokenize(const std::vector<std::size_t>& ids, const Vocabulary& vocab);

// Serialization for checkpoints: one token per line, reserved rows first.
std::string vocab_to_text(const Vocabulary& vocab);
Vocabulary vocab_from_text(const std::string& text);

}  // namespace dart
