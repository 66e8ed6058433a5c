#include "grft/tokenizer.hpp"

#include <algorithm>
#include <sstream>

namespace grft {

Tokenizer Tokenizer::build(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    Tokenizer tok;
    tok.words_ = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
    for (const auto& s : tok.words_)
        if (std::find(words.begin(), words.end(), s) != words.end())
            throw ValidationError("Tokenizer: vocabulary word collides with special token " + s);
    for (auto& w : words) {
        if (w.empty() || w.find(' ') != std::string::npos)
            throw ValidationError("Tokenizer: vocabulary entries must be single nonempty words");
        tok.words_.push_back(w);
    }
    for (size_t i = 0; i < tok.words_.size(); ++i) tok.ids_[tok.words_[i]] = static_cast<int>(i);
    return tok;
}

int Tokenizer::id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? unk() : it->second;
}

const std::string& Tokenizer::word_of(int id) const {
    if (id < 0 || id >= vocab_size()) throw ValidationError("Tokenizer: token id out of range");
    return words_[static_cast<size_t>(id)];
}

bool Tokenizer::knows(const std::string& word) const { return ids_.count(word) != 0; }

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(id_of(w));
    return out;
}

std::string Tokenizer::detokenize(std::span<const int> tokens) const {
    std::string out;
    for (int id : tokens) {
        if (id == pad() || id == bos() || id == eos() || id == sep()) continue;
        if (!out.empty()) out.push_back(' ');
        out += word_of(id);
    }
    return out;
}

}  // namespace grft
