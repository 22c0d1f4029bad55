#include "dart/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "dart/error.hpp"

namespace dart {

namespace {

const char* kReserved[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

bool is_punct_token(const std::string& t) {
    return t.size() == 1 && !is_word_char(static_cast<unsigned char>(t[0]));
}

}  // namespace

std::size_t Vocabulary::id_of(const std::string& token) const {
    const auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
    if (id >= id_to_token.size()) throw InvariantError("token id out of range");
    return id_to_token[id];
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    const auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (const char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            flush();
        } else if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            tokens.emplace_back(1, raw);  // punctuation as its own token
        }
    }
    flush();
    return tokens;
}

Vocabulary build_vocab(const std::vector<CorpusRecord>& records) {
    std::set<std::string> types;
    for (const CorpusRecord& rec : records) {
        for (const std::string& t : split_tokens(rec.report)) types.insert(t);
    }
    Vocabulary vocab;
    for (const char* r : kReserved) vocab.id_to_token.emplace_back(r);
    for (const std::string& t : types) {
        vocab.token_to_id[t] = vocab.id_to_token.size();
        vocab.id_to_token.push_back(t);
    }
    return vocab;
}

std::vector<std::size_t> tokenize(const std::string& report, const Vocabulary& vocab,
                                  std::size_t max_len) {
    if (report.empty()) throw DataError("tokenize: empty report");
    if (max_len < 2) throw InvariantError("tokenize: max_len must allow BOS and EOS");
    const std::vector<std::string> tokens = split_tokens(report);
    if (tokens.empty()) throw DataError("tokenize: report has no tokens");
    std::vector<std::size_t> ids;
    ids.reserve(std::min(tokens.size() + 2, max_len));
    ids.push_back(Vocabulary::kBos);
    for (const std::string& t : tokens) {
        if (ids.size() == max_len - 1) break;  // leave room for EOS
        ids.push_back(vocab.id_of(t));
    }
    ids.push_back(Vocabulary::kEos);
    return ids;
}

std::string detokenize(const std::vector<std::size_t>& ids, const Vocabulary& vocab) {
    std::string out;
    for (const std::size_t id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
        const std::string& tok = vocab.token_of(id);
        if (!out.empty() && !is_punct_token(tok)) out += ' ';
        out += tok;
    }
    return out;
}

std::string vocab_to_text(const Vocabulary& vocab) {
    std::string out;
    for (const std::string& t : vocab.id_to_token) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocabulary vocab_from_text(const std::string& text) {
    Vocabulary vocab;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (vocab.id_to_token.size() < 4) {
            if (line != kReserved[vocab.id_to_token.size()]) {
                throw DataError("vocabulary text: reserved rows corrupted");
            }
        } else {
            vocab.token_to_id[line] = vocab.id_to_token.size();
        }
        vocab.id_to_token.push_back(line);
    }
    if (vocab.id_to_token.size() < 4) throw DataError("vocabulary text: too few rows");
    return vocab;
}

}  // namespace dart
