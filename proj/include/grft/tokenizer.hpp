#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "grft/common.hpp"

namespace grft {

// Word-level tokenizer over a closed vocabulary. Canonical text is
// space-separated words; detokenize(tokenize(s)) == s for any such string.
class Tokenizer {
public:
    static Tokenizer build(std::vector<std::string> words);

    int vocab_size() const { return static_cast<int>(words_.size()); }
    int pad() const { return 0; }
    int bos() const { return 1; }
    int eos() const { return 2; }
    int sep() const { return 3; }
    int unk() const { return 4; }

    int id_of(const std::string& word) const;  // unk() when unknown
    const std::string& word_of(int id) const;
    bool knows(const std::string& word) const;

    std::vector<int> tokenize(const std::string& text) const;
    // joins non-special tokens with single spaces; unk renders as <unk>
    std::string detokenize(std::span<const int> tokens) const;

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace grft
